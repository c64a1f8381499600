//! Monte Carlo and deterministic verification runs with machine-readable
//! reports, plus the property suites for the auxiliary identities and bounds.
//!
//! Replications run in parallel, each on its own RNG stream; results are stored
//! by replication index and folded in index order, so a report depends only on
//! the configuration and seed.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    e0_series, gamma_ratio_series, occupancy_limits, occupancy_sums, sigma0n_root, tau1_sq,
    tau2_sq, AsymptoticConstants, ExtReal,
};
use crate::error::{Error, Result};
use crate::estimators::{mle_sigma, profile_mle, Boundary, EstimateOptions, DEFAULT_M_MAX};
use crate::inference::{
    bvm_gap, forensic_lr, grid_tv, posterior_on_grid, posterior_sigma, GridOptions, MPrior,
    PriorSpec, SigmaPrior,
};
use crate::likelihood::LikelihoodSurface;
use crate::numerics::{g_unchecked, ln_gamma, ln_gamma_ratio, normal_cdf, KahanSum};
use crate::partition::{rgs_block_sizes, set_partitions, PartitionStats};
use crate::population::{Population, PopulationSpec, SlowVariation};
use crate::sampler::{derive_seed, sample_iid, sample_poissonized, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Check {
    Normality,
    BvM,
    PosteriorMean,
    OccupancyLimits,
    RootRate,
    PrecisionProfile,
    Tau1MC,
    Forensic,
}

impl Check {
    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance on the standardized variance (normality).
    pub variance_rel: f64,
    /// Relative tolerance on the Poissonized score variance.
    pub tau1_rel: f64,
    /// Relative tolerance on the standardized forensic variance.
    pub forensic_var_rel: f64,
    /// Relative tolerance on the occupancy-limit ratios at the largest n.
    pub limits_rel: f64,
    /// Allowed distance of the root-rate slope from its predicted value.
    pub slope_margin: f64,
    /// Largest median Gaussian-comparison distance at the largest n.
    pub gap_max: f64,
    /// Smallest fraction of M̂ at the predicted boundary at the largest n.
    pub boundary_fraction_min: f64,
    /// Largest fraction of replications excluded for boundary estimates.
    pub exclusion_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            variance_rel: 0.15,
            tau1_rel: 0.10,
            forensic_var_rel: 0.20,
            limits_rel: 0.05,
            slope_margin: 0.15,
            gap_max: 0.1,
            boundary_fraction_min: 0.6,
            exclusion_max: 0.05,
        }
    }
}

fn default_m_values() -> Vec<f64> {
    vec![1.0]
}

fn default_m_max() -> f64 {
    DEFAULT_M_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationSpec,
    pub n_grid: Vec<u64>,
    pub replications: usize,
    #[serde(rename = "M_values", default = "default_m_values")]
    pub m_values: Vec<f64>,
    #[serde(default)]
    pub prior: PriorSpec,
    pub seed: u64,
    pub checks: Vec<Check>,
    #[serde(rename = "M_max", default = "default_m_max")]
    pub m_max: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.replications < 2 {
            return bad("replications must be at least 2");
        }
        if self.n_grid.is_empty() {
            return bad("n_grid must be nonempty");
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be strictly ascending");
        }
        if self.n_grid[0] < 2 {
            return bad("sample sizes must be at least 2");
        }
        if self.checks.is_empty() {
            return bad("no checks requested");
        }
        if self.m_values.is_empty() || self.m_values.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return bad("M_values must be nonempty, finite and >= 0");
        }
        if !(self.m_max > 0.0 && self.m_max.is_finite()) {
            return bad("M_max must be positive and finite");
        }
        self.prior.validate()
    }

    /// M used for fixed-M estimates: the fixed prior value, else the first of `M_values`.
    fn fit_m(&self) -> f64 {
        match self.prior.m_prior {
            MPrior::Fixed { value } => value,
            MPrior::UniformInterval { .. } => self.m_values[0],
        }
    }
}

/// A reported statistic and its Monte Carlo standard error (0 for
/// deterministic quantities, absent when it cannot be estimated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub se: Option<f64>,
}

impl Stat {
    fn exact(value: f64) -> Self {
        Self {
            value,
            se: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: f64,
    pub stats: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: Check,
    pub passed: bool,
    pub replications: usize,
    /// Replications dropped for a boundary estimate, per n.
    pub excluded: Vec<usize>,
    pub rows: Vec<Row>,
    pub criteria: Vec<Criterion>,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(check: Check, replications: usize) -> Self {
        Self {
            check,
            passed: true,
            replications,
            excluded: Vec::new(),
            rows: Vec::new(),
            criteria: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn criterion(&mut self, name: &str, passed: bool, detail: String) {
        self.passed &= passed;
        self.criteria.push(Criterion {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn exclusions(&mut self, max_rate: f64) {
        let worst = self.excluded.iter().copied().max().unwrap_or(0);
        let rate = worst as f64 / self.replications as f64;
        self.criterion(
            "exclusion rate",
            rate <= max_rate,
            format!("worst excluded fraction {rate:.4} (limit {max_rate})"),
        );
    }

    pub fn stat(&self, row: usize, name: &str) -> Option<Stat> {
        self.rows.get(row).and_then(|r| r.stats.get(name).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub constants: Vec<AsymptoticConstants>,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Population and per-n constants shared by the runs.
pub struct Setup {
    pub population: Population,
    pub constants: Vec<AsymptoticConstants>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let population = Population::from_spec(&cfg.population)?;
        let sigma0 = population.sigma0()?;
        let (t1, t2) = (tau1_sq(sigma0)?, tau2_sq(sigma0)?);
        let constants = cfg
            .n_grid
            .iter()
            .map(|&n| AsymptoticConstants::with_series(&population, n as f64, cfg.m_max, t1, t2))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            population,
            constants,
        })
    }
}

fn stream(seed: u64, check: Check, n_index: usize, rep: usize) -> RngStream {
    RngStream::new(
        derive_seed(seed, check.tag() * 1_000_000 + n_index as u64),
        rep as u64,
    )
}

fn replicate<T: Send, F: Fn(usize) -> T + Sync + Send>(reps: usize, f: F) -> Vec<T> {
    (0..reps).into_par_iter().map(f).collect()
}

fn mean_stat(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Stat {
        value: m,
        se: (xs.len() > 1).then(|| (v / n).sqrt()),
    }
}

/// Sample variance with the large-sample SE √((m₄ − s⁴)/R).
fn var_stat(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Stat {
        value: v,
        se: (xs.len() > 1).then(|| ((m4 - v * v).max(0.0) / n).sqrt()),
    }
}

/// Sample variance with a jackknife SE.
fn var_jackknife(xs: &[f64]) -> Stat {
    let r = xs.len();
    let n = r as f64;
    let s1: f64 = xs.iter().sum();
    let m = s1 / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    if r < 3 {
        return Stat { value: v, se: None };
    }
    let loo: Vec<f64> = (0..r)
        .map(|i| {
            let mi = (s1 - xs[i]) / (n - 1.0);
            xs.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, x)| (x - mi).powi(2))
                .sum::<f64>()
                / (n - 2.0)
        })
        .collect();
    let lm = loo.iter().sum::<f64>() / n;
    let jk = ((n - 1.0) / n * loo.iter().map(|x| (x - lm).powi(2)).sum::<f64>()).sqrt();
    Stat {
        value: v,
        se: Some(jk),
    }
}

/// Median with the normal-theory SE √(π/2)·sd/√R.
fn median_stat(xs: &[f64]) -> Stat {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    let med = if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    };
    let sd = var_stat(xs).value.sqrt();
    Stat {
        value: med,
        se: (k > 1).then(|| (std::f64::consts::PI / 2.0).sqrt() * sd / (k as f64).sqrt()),
    }
}

fn fraction_stat(hits: usize, total: usize) -> Stat {
    let p = hits as f64 / total as f64;
    Stat {
        value: p,
        se: Some((p * (1.0 - p) / total as f64).sqrt()),
    }
}

/// Kolmogorov-Smirnov distance to the standard normal.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Level-0.01 critical value of the KS distance for a fully specified law
/// (Stephens' finite-sample modification).
pub fn ks_critical_01(r: usize) -> f64 {
    let s = (r as f64).sqrt();
    1.628 / (s + 0.12 + 0.11 / s)
}

fn ks_stats(row: &mut Row, zs: &[f64]) -> (f64, f64) {
    let d = ks_normal(zs);
    let crit = ks_critical_01(zs.len());
    // the null law of √R·D has sd ≈ 0.2603
    row.stats.insert(
        "ks_statistic".into(),
        Stat {
            value: d,
            se: Some(0.2603 / (zs.len() as f64).sqrt()),
        },
    );
    row.stats
        .insert("ks_critical_0.01".into(), Stat::exact(crit));
    (d, crit)
}

fn constants_row(c: &AsymptoticConstants) -> Row {
    let mut stats = BTreeMap::new();
    stats.insert("sigma0n".into(), Stat::exact(c.sigma0n));
    stats.insert("alpha0".into(), Stat::exact(c.alpha_n));
    Row { n: c.n, stats }
}

/// Standardized MLE √α₀(n)(σ̂ − σ₀,ₙ)·τ₂²/τ₁ against N(0,1).
pub fn run_normality(cfg: &ExperimentConfig) -> Result<CheckReport> {
    normality(&Setup::new(cfg)?, cfg)
}

fn normality(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckReport> {
    let r = cfg.replications;
    let m = cfg.fit_m();
    let opts = EstimateOptions::default();
    let mut rep = CheckReport::new(Check::Normality, r);
    let mut last = None;
    for (i, c) in setup.constants.iter().enumerate() {
        let n = c.n as u64;
        let scale = c.alpha_n.sqrt() / c.sandwich_sd();
        let draws = replicate(r, |k| -> Result<Option<f64>> {
            let mut rng = stream(cfg.seed, Check::Normality, i, k).rng();
            let stats =
                PartitionStats::from_occupancy(&sample_iid(&setup.population, n, &mut rng))?;
            let e = mle_sigma(&stats, m, &opts)?;
            Ok((e.boundary == Boundary::Interior).then_some(scale * (e.sigma_hat - c.sigma0n)))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let zs: Vec<f64> = draws.iter().flatten().copied().collect();
        rep.excluded.push(r - zs.len());
        let mut row = constants_row(c);
        if zs.len() >= 2 {
            row.stats.insert("mean".into(), mean_stat(&zs));
            row.stats.insert("variance".into(), var_stat(&zs));
            let (d, crit) = ks_stats(&mut row, &zs);
            last = Some((zs.len(), mean_stat(&zs).value, var_stat(&zs).value, d, crit));
        }
        rep.rows.push(row);
    }
    rep.exclusions(cfg.tolerances.exclusion_max);
    match last {
        Some((kept, mean, var, d, crit)) => {
            let tol = cfg.tolerances.variance_rel;
            rep.criterion(
                "variance",
                (var - 1.0).abs() <= tol,
                format!("standardized variance {var:.4}, target 1 within {tol}"),
            );
            let bound = 3.0 / (kept as f64).sqrt();
            rep.criterion(
                "mean",
                mean.abs() <= bound,
                format!("standardized mean {mean:.4}, bound {bound:.4}"),
            );
            rep.criterion(
                "ks",
                d <= crit,
                format!("KS distance {d:.4}, critical value {crit:.4}"),
            );
        }
        None => rep.criterion(
            "estimates",
            false,
            "fewer than two interior estimates".into(),
        ),
    }
    if cfg.n_grid.len() > 1 {
        rep.notes
            .push("pass criteria are evaluated at the largest n".into());
    }
    Ok(rep)
}

struct BvmDraw {
    gap: f64,
    mean_gap: f64,
    prior_tv: f64,
}

fn bvm_draws(setup: &Setup, cfg: &ExperimentConfig) -> Result<(Vec<Vec<BvmDraw>>, Vec<usize>)> {
    let r = cfg.replications;
    let m = cfg.fit_m();
    let opts = EstimateOptions::default();
    let grid = GridOptions::default();
    let beta = PriorSpec {
        sigma_prior: SigmaPrior::Beta { a: 2.0, b: 2.0 },
        m_prior: cfg.prior.m_prior,
    };
    let flat = PriorSpec {
        sigma_prior: SigmaPrior::Uniform01,
        m_prior: cfg.prior.m_prior,
    };
    let mut all = Vec::new();
    let mut excluded = Vec::new();
    for (i, c) in setup.constants.iter().enumerate() {
        let n = c.n as u64;
        let var = 1.0 / (c.alpha_n * c.tau2_sq);
        let draws = replicate(r, |k| -> Result<Option<BvmDraw>> {
            let mut rng = stream(cfg.seed, Check::BvM, i, k).rng();
            let stats =
                PartitionStats::from_occupancy(&sample_iid(&setup.population, n, &mut rng))?;
            let e = mle_sigma(&stats, m, &opts)?;
            if e.boundary != Boundary::Interior {
                return Ok(None);
            }
            let post = posterior_sigma(&stats, &cfg.prior, &grid)?;
            if post.degenerate {
                return Ok(None);
            }
            let nodes = post.sigma_nodes.clone();
            let a = posterior_on_grid(&stats, &flat, nodes.clone(), grid.m_nodes)?;
            let b = posterior_on_grid(&stats, &beta, nodes, grid.m_nodes)?;
            Ok(Some(BvmDraw {
                gap: bvm_gap(&post, e.sigma_hat, var),
                mean_gap: c.alpha_n.sqrt() * (post.mean - e.sigma_hat).abs(),
                prior_tv: grid_tv(&a, &b)?,
            }))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let kept: Vec<BvmDraw> = draws.into_iter().flatten().collect();
        excluded.push(r - kept.len());
        all.push(kept);
    }
    Ok((all, excluded))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Gaussian comparison distance of the grid posterior along n_grid.
pub fn run_bvm(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let setup = Setup::new(cfg)?;
    let (draws, excluded) = bvm_draws(&setup, cfg)?;
    Ok(bvm_report(&setup, cfg, &draws, &excluded, Check::BvM))
}

/// √α₀(n)|posterior mean − σ̂| along n_grid.
pub fn run_posterior_mean(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let setup = Setup::new(cfg)?;
    let (draws, excluded) = bvm_draws(&setup, cfg)?;
    Ok(bvm_report(
        &setup,
        cfg,
        &draws,
        &excluded,
        Check::PosteriorMean,
    ))
}

fn bvm_report(
    setup: &Setup,
    cfg: &ExperimentConfig,
    draws: &[Vec<BvmDraw>],
    excluded: &[usize],
    check: Check,
) -> CheckReport {
    let mut rep = CheckReport::new(check, cfg.replications);
    rep.excluded = excluded.to_vec();
    let mut medians = Vec::new();
    for (c, d) in setup.constants.iter().zip(draws) {
        let mut row = constants_row(c);
        if !d.is_empty() {
            let gaps: Vec<f64> = d.iter().map(|x| x.gap).collect();
            let means: Vec<f64> = d.iter().map(|x| x.mean_gap).collect();
            let tvs: Vec<f64> = d.iter().map(|x| x.prior_tv).collect();
            let (g, mg) = (median_stat(&gaps), median_stat(&means));
            row.stats.insert("median_gap".into(), g);
            row.stats.insert("median_scaled_mean_gap".into(), mg);
            row.stats
                .insert("median_prior_tv".into(), median_stat(&tvs));
            medians.push((g.value, mg.value));
        }
        rep.rows.push(row);
    }
    rep.exclusions(cfg.tolerances.exclusion_max);
    if medians.len() != setup.constants.len() {
        rep.criterion("estimates", false, "no interior estimates at some n".into());
        return rep;
    }
    let gaps: Vec<f64> = medians.iter().map(|m| m.0).collect();
    let means: Vec<f64> = medians.iter().map(|m| m.1).collect();
    match check {
        Check::BvM => {
            if gaps.len() > 1 {
                rep.criterion(
                    "median gap decreasing",
                    strictly_decreasing(&gaps),
                    format!("medians {gaps:?}"),
                );
            }
            let last = *gaps.last().unwrap();
            let tol = cfg.tolerances.gap_max;
            rep.criterion(
                "median gap at largest n",
                last < tol,
                format!("median gap {last:.4}, limit {tol}"),
            );
        }
        _ => {
            if means.len() > 1 {
                rep.criterion(
                    "scaled mean gap decreasing",
                    strictly_decreasing(&means),
                    format!("medians {means:?}"),
                );
            } else {
                rep.notes.push("a single n gives no trend to check".into());
            }
        }
    }
    rep
}

/// Ratios of the exact occupancy sums to α₀(n) times their limits.
pub fn run_occupancy_limits(
    pop: &Population,
    sigma: f64,
    n_grid: &[u64],
    tol: f64,
) -> Result<CheckReport> {
    const NAMES: [&str; 8] = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii"];
    let sigma0 = pop.sigma0()?;
    let limits = occupancy_limits(sigma0, sigma)?;
    let mut rep = CheckReport::new(Check::OccupancyLimits, 1);
    let mut last = [f64::NAN; 8];
    for &n in n_grid {
        let sums = occupancy_sums(pop, n as f64, sigma)?;
        let mut stats = BTreeMap::new();
        for k in 0..8 {
            last[k] = sums[k] / limits[k];
            stats.insert(format!("ratio_{}", NAMES[k]), Stat::exact(last[k]));
        }
        stats.insert("alpha0".into(), Stat::exact(pop.alpha0(n as f64) as f64));
        rep.rows.push(Row { n: n as f64, stats });
        rep.excluded.push(0);
    }
    let finite = rep
        .rows
        .iter()
        .all(|r| r.stats.values().all(|s| s.value.is_finite()));
    rep.criterion(
        "ratios finite",
        finite,
        "every ratio is a finite number".into(),
    );
    for k in 0..8 {
        rep.criterion(
            &format!("limit {}", NAMES[k]),
            (last[k] - 1.0).abs() <= tol,
            format!(
                "ratio {:.5} at n = {}, tolerance {tol}",
                last[k],
                n_grid[n_grid.len() - 1]
            ),
        );
    }
    Ok(rep)
}

/// Least-squares slope of ln|σ₀,ₙ − σ₀| against ln n.
pub fn run_root_rate(pop: &Population, n_grid: &[u64], margin: f64) -> Result<CheckReport> {
    let rv = *pop.regular_variation().ok_or_else(|| {
        Error::Unsupported("root rate needs a regular-variation descriptor".into())
    })?;
    let mut rep = CheckReport::new(Check::RootRate, 1);
    let mut pts = Vec::new();
    for &n in n_grid {
        let root = sigma0n_root(pop, n as f64)?;
        let d = (root - rv.sigma0).abs();
        let mut stats = BTreeMap::new();
        stats.insert("sigma0n".into(), Stat::exact(root));
        stats.insert("abs_diff".into(), Stat::exact(d));
        stats.insert(
            "abs_diff_times_log_n".into(),
            Stat::exact(d * (n as f64).ln()),
        );
        rep.rows.push(Row { n: n as f64, stats });
        rep.excluded.push(0);
        if d > 0.0 {
            pts.push(((n as f64).ln(), d.ln()));
        }
    }
    if pts.len() < 2 {
        rep.notes
            .push("slope undefined: fewer than two sample sizes with a nonzero gap".into());
        return Ok(rep);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let se = (pts.len() > 2).then(|| {
        let rss = pts
            .iter()
            .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
            .sum::<f64>();
        (rss / (k - 2.0) / sxx).sqrt()
    });
    let mut stats = BTreeMap::new();
    stats.insert("slope".into(), Stat { value: slope, se });
    rep.rows.push(Row { n: f64::NAN, stats });
    match rv.l0 {
        SlowVariation::Constant { .. } => {
            let want = rv.beta0 - rv.sigma0;
            rep.criterion(
                "slope",
                (slope - want).abs() <= margin,
                format!("slope {slope:.4}, predicted {want:.4} within {margin}"),
            );
        }
        SlowVariation::LogPower { .. } => {
            rep.notes
                .push("logarithmic slow variation: the rate is reported without a bound".into());
        }
    }
    Ok(rep)
}

/// Variance of the Poissonized score Σ_j[1{N_j ≥ 1}/σ₀,ₙ − g(N_j)] over α₀(n), against τ₁².
pub fn run_tau1_mc(
    pop: &Population,
    n: f64,
    replications: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    if replications < 2 {
        return Err(Error::Config("replications must be at least 2".into()));
    }
    let sigma0 = pop.sigma0()?;
    let sigma = sigma0n_root(pop, n)?;
    let alpha = pop.alpha0(n) as f64;
    let target = tau1_sq(sigma0)?;
    let vs = replicate(replications, |k| {
        let mut rng = stream(seed, Check::Tau1MC, 0, k).rng();
        let counts = sample_poissonized(pop, n, &mut rng);
        let mut s = KahanSum::new();
        for &c in counts.counts.values() {
            s.add(1.0 / sigma - g_unchecked(c, sigma));
        }
        s.value() / alpha.sqrt()
    });
    let mut rep = CheckReport::new(Check::Tau1MC, replications);
    rep.excluded.push(0);
    let v = var_jackknife(&vs);
    let mut stats = BTreeMap::new();
    stats.insert("sigma0n".into(), Stat::exact(sigma));
    stats.insert("alpha0".into(), Stat::exact(alpha));
    stats.insert("variance_over_alpha".into(), v);
    stats.insert("tau1_sq".into(), Stat::exact(target));
    stats.insert("scaled_mean".into(), mean_stat(&vs));
    rep.rows.push(Row { n, stats });
    let rel = v.value / target - 1.0;
    rep.criterion(
        "variance",
        rel.abs() <= tol,
        format!(
            "variance/alpha0 {:.4} vs {target:.4} (relative {rel:+.4}, tolerance {tol})",
            v.value
        ),
    );
    Ok(rep)
}

/// Profile estimates of M along n_grid and σ̂ agreement across M values.
pub fn run_precision_profile(cfg: &ExperimentConfig) -> Result<CheckReport> {
    precision_profile(&Setup::new(cfg)?, cfg)
}

struct ProfileDraw {
    m_hat: f64,
    m_boundary: Boundary,
    agree: bool,
}

fn precision_profile(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckReport> {
    let r = cfg.replications;
    let opts = EstimateOptions::default();
    let mut rep = CheckReport::new(Check::PrecisionProfile, r);
    let predicted = match setup.constants[0].k0 {
        ExtReal::PosInf => Some(Boundary::UpperM),
        ExtReal::NegInf => Some(Boundary::LowerM),
        ExtReal::Finite(_) => None,
    };
    let mut fractions = Vec::new();
    let mut all_agree = true;
    for (i, c) in setup.constants.iter().enumerate() {
        let n = c.n as u64;
        let band = 3.0 / c.alpha_n.sqrt();
        let draws = replicate(r, |k| -> Result<Option<ProfileDraw>> {
            let mut rng = stream(cfg.seed, Check::PrecisionProfile, i, k).rng();
            let stats =
                PartitionStats::from_occupancy(&sample_iid(&setup.population, n, &mut rng))?;
            let p = profile_mle(&stats, cfg.m_max, &opts)?;
            if matches!(p.boundary, Boundary::LowerSigma | Boundary::UpperSigma) {
                return Ok(None);
            }
            let mut sig = Vec::with_capacity(cfg.m_values.len());
            for &m in &cfg.m_values {
                sig.push(mle_sigma(&stats, m, &opts)?.sigma_hat);
            }
            let agree = sig.iter().all(|s| (s - sig[0]).abs() <= band);
            Ok(Some(ProfileDraw {
                m_hat: p.m_hat.unwrap_or(0.0),
                m_boundary: p.m_boundary.unwrap_or(Boundary::Interior),
                agree,
            }))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let kept: Vec<ProfileDraw> = draws.into_iter().flatten().collect();
        rep.excluded.push(r - kept.len());
        let mut row = constants_row(c);
        row.stats.insert("M0".into(), Stat::exact(c.m0));
        if !kept.is_empty() {
            let ms: Vec<f64> = kept.iter().map(|d| d.m_hat).collect();
            row.stats.insert("median_M_hat".into(), median_stat(&ms));
            let lower = kept
                .iter()
                .filter(|d| d.m_boundary == Boundary::LowerM)
                .count();
            let upper = kept
                .iter()
                .filter(|d| d.m_boundary == Boundary::UpperM)
                .count();
            row.stats
                .insert("fraction_at_zero".into(), fraction_stat(lower, kept.len()));
            row.stats
                .insert("fraction_at_M_max".into(), fraction_stat(upper, kept.len()));
            let agree = kept.iter().filter(|d| d.agree).count();
            row.stats.insert(
                "sigma_agreement_fraction".into(),
                fraction_stat(agree, kept.len()),
            );
            all_agree &= agree == kept.len();
            if let Some(b) = predicted {
                let hits = kept.iter().filter(|d| d.m_boundary == b).count();
                let f = fraction_stat(hits, kept.len());
                row.stats.insert("fraction_at_predicted_boundary".into(), f);
                fractions.push(f.value);
            }
        }
        rep.rows.push(row);
    }
    rep.exclusions(cfg.tolerances.exclusion_max);
    if cfg.m_values.len() > 1 {
        rep.criterion(
            "sigma agreement across M",
            all_agree,
            format!("|σ̂_M − σ̂_M'| ≤ 3/√α₀(n) for M in {:?}", cfg.m_values),
        );
    }
    if predicted.is_some() {
        if fractions.len() != cfg.n_grid.len() {
            rep.criterion(
                "boundary fraction",
                false,
                "no usable replications at some n".into(),
            );
        } else {
            if fractions.len() > 1 {
                rep.criterion(
                    "boundary fraction nondecreasing",
                    fractions.windows(2).all(|w| w[1] >= w[0]),
                    format!("fractions {fractions:?}"),
                );
            }
            let last = *fractions.last().unwrap();
            let min = cfg.tolerances.boundary_fraction_min;
            rep.criterion(
                "boundary fraction at largest n",
                last >= min,
                format!("fraction {last:.3}, minimum {min}"),
            );
        }
    } else {
        rep.notes.push(
            "finite K0: the limit M0 is interior or at a boundary by value; no trend asserted"
                .into(),
        );
    }
    Ok(rep)
}

/// Standardized 1/(n φ̃) against N(0,1) and the ratio bound lr > n + 1.
pub fn run_forensic(cfg: &ExperimentConfig) -> Result<CheckReport> {
    forensic(&Setup::new(cfg)?, cfg)
}

fn forensic(setup: &Setup, cfg: &ExperimentConfig) -> Result<CheckReport> {
    let r = cfg.replications;
    let grid = GridOptions::default();
    let mut rep = CheckReport::new(Check::Forensic, r);
    let mut last_var = None;
    let mut bound_ok = true;
    for (i, c) in setup.constants.iter().enumerate() {
        let n = c.n as u64;
        let scale = c.alpha_n.sqrt() * (1.0 - c.sigma0).powi(2) * c.tau2_sq / c.tau1_sq.sqrt();
        let centre = 1.0 / (1.0 - c.sigma0n);
        let draws = replicate(r, |k| -> Result<Option<(f64, f64)>> {
            let mut rng = stream(cfg.seed, Check::Forensic, i, k).rng();
            let db = PartitionStats::from_occupancy(&sample_iid(&setup.population, n, &mut rng))?;
            if !db.has_ties() {
                return Ok(None);
            }
            let f = forensic_lr(&db.with_new_singleton(), &cfg.prior, &grid)?;
            let x = 1.0 / (n as f64 * f.phi_mean);
            Ok(Some((scale * (x - centre), f.lr / (n as f64 + 1.0))))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let kept: Vec<(f64, f64)> = draws.into_iter().flatten().collect();
        rep.excluded.push(r - kept.len());
        let mut row = constants_row(c);
        if kept.len() >= 2 {
            let zs: Vec<f64> = kept.iter().map(|d| d.0).collect();
            row.stats.insert("mean".into(), mean_stat(&zs));
            let v = var_stat(&zs);
            row.stats.insert("variance".into(), v);
            ks_stats(&mut row, &zs);
            last_var = Some(v.value);
        }
        let min_ratio = kept.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        bound_ok &= min_ratio > 1.0;
        row.stats
            .insert("min_lr_over_n_plus_1".into(), Stat::exact(min_ratio));
        rep.rows.push(row);
    }
    rep.exclusions(cfg.tolerances.exclusion_max);
    rep.criterion(
        "lr above n+1",
        bound_ok,
        "lr > n + 1 in every replication".into(),
    );
    match last_var {
        Some(v) => {
            let tol = cfg.tolerances.forensic_var_rel;
            rep.criterion(
                "variance",
                (v - 1.0).abs() <= tol,
                format!("standardized variance {v:.4}, target 1 within {tol}"),
            );
        }
        None => rep.criterion(
            "estimates",
            false,
            "fewer than two usable replications".into(),
        ),
    }
    Ok(rep)
}

/// Runs every requested check.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let setup = Setup::new(cfg)?;
    let tol = &cfg.tolerances;
    let mut checks: Vec<Check> = cfg.checks.clone();
    checks.sort();
    checks.dedup();
    let mut bvm_cache = None;
    let mut out = Vec::new();
    for check in checks {
        let rep = match check {
            Check::Normality => normality(&setup, cfg)?,
            Check::BvM | Check::PosteriorMean => {
                if bvm_cache.is_none() {
                    bvm_cache = Some(bvm_draws(&setup, cfg)?);
                }
                let (d, e) = bvm_cache.as_ref().unwrap();
                bvm_report(&setup, cfg, d, e, check)
            }
            Check::OccupancyLimits => run_occupancy_limits(
                &setup.population,
                setup.population.sigma0()?,
                &cfg.n_grid,
                tol.limits_rel,
            )?,
            Check::RootRate => run_root_rate(&setup.population, &cfg.n_grid, tol.slope_margin)?,
            Check::PrecisionProfile => precision_profile(&setup, cfg)?,
            Check::Tau1MC => {
                let n = *cfg.n_grid.last().unwrap() as f64;
                run_tau1_mc(
                    &setup.population,
                    n,
                    cfg.replications,
                    cfg.seed,
                    tol.tau1_rel,
                )?
            }
            Check::Forensic => forensic(&setup, cfg)?,
        };
        out.push(rep);
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        seed: cfg.seed,
        constants: setup.constants,
        passed: out.iter().all(|c| c.passed),
        checks: out,
    })
}

/// Outcome of one deterministic property check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// The bound it is held to.
    pub bound: f64,
}

fn property(name: &str, worst: f64, bound: f64) -> PropertyCheck {
    PropertyCheck {
        name: name.to_string(),
        passed: worst <= bound,
        worst,
        bound,
    }
}

fn binom(n: u64, k: u64) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// Both sides of Σ_{m=l+1}^{n} C(n,m) p^{m−1}(1−p)^{n−m−1}(m−np) = (n−l) C(n,l) p^l (1−p)^{n−l−1}
/// in exact rational arithmetic, for p = num/den ∈ (0,1).
pub fn binomial_identity_exact(n: u64, l: u64, num: i64, den: i64) -> (BigRational, BigRational) {
    let p = BigRational::new(BigInt::from(num), BigInt::from(den));
    let q = BigRational::one() - &p;
    let pow = |x: &BigRational, e: i64| -> BigRational {
        if e >= 0 {
            Pow::pow(x, e as u64)
        } else {
            Pow::pow(x.recip(), (-e) as u64)
        }
    };
    let n_r = BigRational::from_integer(BigInt::from(n));
    let mut lhs = BigRational::zero();
    for m in l + 1..=n {
        let c = BigRational::from_integer(binom(n, m));
        let mm = BigRational::from_integer(BigInt::from(m));
        lhs += c * pow(&p, m as i64 - 1) * pow(&q, n as i64 - m as i64 - 1) * (mm - &n_r * &p);
    }
    let rhs = BigRational::from_integer(BigInt::from(n - l) * binom(n, l))
        * pow(&p, l as i64)
        * pow(&q, n as i64 - l as i64 - 1);
    (lhs, rhs)
}

/// The same identity in floating point: returns (lhs, rhs, Σ|terms|).
pub fn binomial_identity_f64(n: u64, l: u64, p: f64) -> (f64, f64, f64) {
    let ln_c = |m: u64| {
        ln_gamma(n as f64 + 1.0) - ln_gamma(m as f64 + 1.0) - ln_gamma((n - m) as f64 + 1.0)
    };
    let (mut lhs, mut abs) = (KahanSum::new(), KahanSum::new());
    for m in l + 1..=n {
        let mag =
            (ln_c(m) + (m as f64 - 1.0) * p.ln() + (n as f64 - m as f64 - 1.0) * (1.0 - p).ln())
                .exp();
        let t = mag * (m as f64 - n as f64 * p);
        lhs.add(t);
        abs.add(t.abs());
    }
    let rhs = (n - l) as f64
        * (ln_c(l) + l as f64 * p.ln() + (n as f64 - l as f64 - 1.0) * (1.0 - p).ln()).exp();
    (lhs.value(), rhs, abs.value())
}

/// Remainder of Σ_{i=1}^{K−1} ln(M+iσ) after the expansion
/// K ln K + K ln(σ/e) + (M/σ − 1/2) ln K + ln(√(2π)/σ) − ln Γ(1+M/σ).
pub fn log_sum_remainder(k: u64, m: f64, sigma: f64) -> f64 {
    let mut s = KahanSum::new();
    for i in 1..k {
        s.add((m + i as f64 * sigma).ln());
    }
    let kf = k as f64;
    let a = m / sigma;
    let expansion = kf * kf.ln()
        + kf * (sigma.ln() - 1.0)
        + (a - 0.5) * kf.ln()
        + (2.0 * std::f64::consts::PI).sqrt().ln()
        - sigma.ln()
        - ln_gamma(1.0 + a);
    s.value() - expansion
}

/// The auxiliary identities and bounds: binomial identity, Stirling ratio
/// envelope, Poisson-weighted power inequalities and the log-sum expansion.
pub fn property_suite() -> Vec<PropertyCheck> {
    let mut out = Vec::new();

    let ps = [(1i64, 100i64), (3, 10), (9, 10)];
    let (mut exact_bad, mut rel_worst, mut f64_worst) = (0.0f64, 0.0f64, 0.0f64);
    for &n in &[5u64, 20, 100] {
        for l in 0..n {
            for &(num, den) in &ps {
                let (lhs, rhs) = binomial_identity_exact(n, l, num, den);
                if lhs != rhs {
                    exact_bad += 1.0;
                }
                let rel = ((&lhs - &rhs) / &rhs).abs();
                rel_worst = rel_worst.max(rat_to_f64(&rel));
                let (a, b, s) = binomial_identity_f64(n, l, num as f64 / den as f64);
                f64_worst = f64_worst.max((a - b).abs() / s.max(b.abs()));
            }
        }
    }
    out.push(property(
        "binomial identity, exact rational mismatches",
        exact_bad,
        0.0,
    ));
    out.push(property(
        "binomial identity, exact relative error",
        rel_worst,
        1e-10,
    ));
    out.push(property(
        "binomial identity, f64 error relative to term mass",
        f64_worst,
        1e-12,
    ));

    // Γ(n−γ) n^γ / Γ(n) = 1 + O(1/n)
    let (mut env, mut lead_err) = (0.0f64, 0.0f64);
    for &g in &[0.2, 0.5, 0.8] {
        let lead = g * (1.0 + g) / 2.0;
        let mut c_fit = 0.0f64;
        let mut n = 10.0f64;
        while n <= 1e6 {
            let q = (ln_gamma_ratio(n, -g) + g * n.ln()).exp();
            c_fit = c_fit.max(n * (q - 1.0).abs());
            n *= 1.5;
        }
        env = env.max(c_fit / (2.0 * lead));
        let q = (ln_gamma_ratio(1e6, -g) + g * 1e6f64.ln()).exp();
        lead_err = lead_err.max((1e6 * (q - 1.0) - lead).abs());
    }
    out.push(property(
        "Stirling ratio: fitted c over gamma(1+gamma)",
        env,
        1.0,
    ));
    out.push(property(
        "Stirling ratio: n(q-1) at n=1e6 vs gamma(1+gamma)/2",
        lead_err,
        1e-3,
    ));

    // Σ_{m≥1} s^m m^δ/m! ≤ s^δ e^s and Σ_{m≥2} s^m m^δ/m! ≤ s^δ (e^s − 1)
    let mut ratio = 0.0f64;
    for &s in &[0.1f64, 1.0, 10.0] {
        for &d in &[0.25f64, 0.5, 1.0] {
            let mut term = 1.0;
            let (mut all, mut from2) = (0.0, 0.0);
            for m in 1..200u32 {
                term *= s / m as f64;
                let t = term * (m as f64).powf(d);
                all += t;
                if m >= 2 {
                    from2 += t;
                }
            }
            ratio = ratio.max(all / (s.powf(d) * s.exp()));
            ratio = ratio.max(from2 / (s.powf(d) * s.exp_m1()));
        }
    }
    out.push(property(
        "Poisson power sums over their bounds",
        ratio,
        1.0 + 1e-14,
    ));

    // c fitted over the whole K range must stay a modest universal constant,
    // and K·|remainder|/(M/σ+1)² must settle, so the remainder is O(1/K)
    let ks = [10u64, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10_000];
    let (mut c_fit, mut drift) = (0.0f64, 0.0f64);
    for &m in &[0.0, 1.0, 10.0] {
        for &s in &[0.25, 0.5, 0.75] {
            let scale = (m / s + 1.0f64).powi(2);
            let vs: Vec<f64> = ks
                .iter()
                .map(|&k| log_sum_remainder(k, m, s).abs() * k as f64 / scale)
                .collect();
            c_fit = vs.iter().copied().fold(c_fit, f64::max);
            let (a, b) = (vs[vs.len() - 2], vs[vs.len() - 1]);
            drift = drift.max((b - a).abs() / b.max(1e-300));
        }
    }
    out.push(property("log-sum remainder: fitted c", c_fit, 1.0));
    out.push(property(
        "log-sum remainder: K-scaled change from 5e3 to 1e4",
        drift,
        0.05,
    ));
    out
}

fn rat_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::INFINITY)
}

/// Largest |Σ_partitions exp(log_eppf) − 1| for sample sizes up to `n_max` over
/// σ ∈ {0.25, 0.5, 0.75} and M ∈ {0, 0.5, 1, 5}.
pub fn eppf_normalization_error(n_max: usize) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=n_max {
        let parts: Vec<PartitionStats> = set_partitions(n)
            .iter()
            .map(|rgs| {
                PartitionStats::from_block_sizes(rgs_block_sizes(rgs)).expect("valid partition")
            })
            .collect();
        let surfaces: Vec<LikelihoodSurface> = parts.iter().map(LikelihoodSurface::new).collect();
        for &s in &[0.25, 0.5, 0.75] {
            for &m in &[0.0, 0.5, 1.0, 5.0] {
                let mut acc = KahanSum::new();
                for surf in &surfaces {
                    acc.add(surf.log_eppf(s, m).exp());
                }
                worst = worst.max((acc.value() - 1.0).abs());
            }
        }
    }
    worst
}

/// Everything `verify` runs: EPPF normalization, series identities, derivative
/// consistency and the property suite.
pub fn verify_suite(fast: bool) -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    out.push(property(
        "EPPF sums to one over set partitions",
        eppf_normalization_error(if fast { 6 } else { 8 }),
        1e-10,
    ));
    let gammas: &[f64] = if fast {
        &[0.5]
    } else {
        &[0.2, 0.35, 0.5, 0.65, 0.8]
    };
    let (mut e0, mut gr) = (0.0f64, 0.0f64);
    for &g in gammas {
        e0 = e0.max(e0_series(g, g)?.abs());
        let want = ln_gamma(1.0 - g).exp() / g;
        gr = gr.max((gamma_ratio_series(g)? - want).abs());
    }
    out.push(property("limit mean score vanishes at sigma0", e0, 1e-7));
    out.push(property("sum of Gamma(m-gamma)/m! identity", gr, 1e-7));
    let sig: &[f64] = if fast { &[0.5] } else { &[0.25, 0.5, 0.75] };
    let mut fd = 0.0f64;
    for &s in sig {
        let h = 1e-4;
        let d = (e0_series(s + h, s)? - e0_series(s - h, s)?) / (2.0 * h);
        let t2 = tau2_sq(s)?;
        fd = fd.max((t2 + d).abs() / t2);
    }
    out.push(property("tau2^2 against finite differences", fd, 1e-4));
    out.extend(property_suite());
    Ok(out)
}
