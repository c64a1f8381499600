//! Grid posterior for σ (optionally jointly with M), the Gaussian comparison
//! distance, posterior summaries and the rare-type match likelihood ratio.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::likelihood::LikelihoodSurface;
use crate::numerics::{golden_section_max, ln_gamma, log_sum_exp, normal_interval_mass};
use crate::partition::PartitionStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaPrior {
    Uniform01,
    /// Beta(a, b) with a, b ≥ 1 so that the density stays bounded.
    Beta {
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MPrior {
    Fixed {
        value: f64,
    },
    /// Uniform on [0, m_max].
    UniformInterval {
        m_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub sigma_prior: SigmaPrior,
    #[serde(rename = "M_prior")]
    pub m_prior: MPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            sigma_prior: SigmaPrior::Uniform01,
            m_prior: MPrior::Fixed { value: 1.0 },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if let SigmaPrior::Beta { a, b } = self.sigma_prior {
            if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Config(format!(
                    "Beta prior needs a, b >= 1 for a bounded density, got ({a}, {b})"
                )));
            }
        }
        match self.m_prior {
            MPrior::Fixed { value } if !(value >= 0.0 && value.is_finite()) => Err(Error::Config(
                format!("fixed M must be finite and >= 0, got {value}"),
            )),
            MPrior::UniformInterval { m_max } if !(m_max > 0.0 && m_max.is_finite()) => Err(
                Error::Config(format!("M_max must be positive and finite, got {m_max}")),
            ),
            _ => Ok(()),
        }
    }

    /// ln π(σ), normalized.
    pub fn log_sigma_density(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0 && sigma < 1.0) {
            return f64::NEG_INFINITY;
        }
        match self.sigma_prior {
            SigmaPrior::Uniform01 => 0.0,
            SigmaPrior::Beta { a, b } => {
                (a - 1.0) * sigma.ln() + (b - 1.0) * (1.0 - sigma).ln() - ln_gamma(a) - ln_gamma(b)
                    + ln_gamma(a + b)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub coarse_nodes: usize,
    pub fine_nodes: usize,
    pub m_nodes: usize,
    /// Grid clipping: σ ∈ [ε, 1 − ε].
    pub eps: f64,
    /// Half-width of the fine grid in posterior standard deviations.
    pub span_sd: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            coarse_nodes: 512,
            fine_nodes: 2049,
            m_nodes: 65,
            eps: 1e-6,
            span_sd: 10.0,
        }
    }
}

/// Joint (σ, M) part of a posterior; row-major with σ as the outer index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGrid {
    #[serde(rename = "M_nodes")]
    pub m_nodes: Vec<f64>,
    pub log_density: Vec<f64>,
    pub cell_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub sigma_nodes: Vec<f64>,
    /// Normalized log posterior density of σ at each node.
    pub log_weights: Vec<f64>,
    /// Trapezoid masses; cell i spans the midpoints around node i.
    pub cell_mass: Vec<f64>,
    pub log_normalizer: f64,
    pub mean: f64,
    pub sd: f64,
    /// M held fixed, when it is not integrated over.
    #[serde(rename = "M_fixed")]
    pub m_fixed: Option<f64>,
    pub joint: Option<JointGrid>,
    /// More than 99% of the mass sits in an outermost cell.
    pub degenerate: bool,
    /// Mass of the first and last cell.
    pub edge_mass: (f64, f64),
}

fn trapezoid_log_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n {
                nodes[i + 1] - nodes[i]
            } else {
                0.0
            };
            let w = 0.5 * (left + right);
            if n == 1 {
                0.0
            } else {
                w.ln()
            }
        })
        .collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Unnormalized log posterior of σ with M fixed or integrated out.
struct LogPost<'a> {
    surf: LikelihoodSurface,
    prior: &'a PriorSpec,
    m_nodes: Vec<f64>,
    m_log_w: Vec<f64>,
}

impl<'a> LogPost<'a> {
    fn new(stats: &PartitionStats, prior: &'a PriorSpec, opts: &GridOptions) -> Result<Self> {
        prior.validate()?;
        let (m_nodes, m_log_w) = match prior.m_prior {
            MPrior::Fixed { value } => (vec![value], vec![0.0]),
            MPrior::UniformInterval { m_max } => {
                if opts.m_nodes < 2 {
                    return domain("the M grid needs at least two nodes");
                }
                let nodes = linspace(0.0, m_max, opts.m_nodes);
                // uniform density 1/M_max folded into the weights
                let w = trapezoid_log_weights(&nodes)
                    .into_iter()
                    .map(|w| w - m_max.ln())
                    .collect();
                (nodes, w)
            }
        };
        Ok(Self {
            surf: LikelihoodSurface::new(stats),
            prior,
            m_nodes,
            m_log_w,
        })
    }

    fn joint_terms(&self, sigma: f64) -> Vec<f64> {
        let lp = self.prior.log_sigma_density(sigma);
        self.m_nodes
            .iter()
            .zip(&self.m_log_w)
            .map(|(&m, &w)| lp + w + self.surf.log_eppf(sigma, m))
            .collect()
    }

    fn eval(&self, sigma: f64) -> f64 {
        let terms = self.joint_terms(sigma);
        if terms.len() == 1 {
            terms[0]
        } else {
            log_sum_exp(&terms).unwrap_or(f64::NEG_INFINITY)
        }
    }
}

/// Posterior of σ on an adaptive grid.
///
/// A coarse uniform pass on [ε, 1−ε] locates the mode and the spread; the
/// fine grid then covers mode ± `span_sd` posterior standard deviations,
/// clipped to [ε, 1−ε]. With a uniform prior on M the posterior is computed
/// on the σ × M product grid and marginalized over M.
pub fn posterior_sigma(
    stats: &PartitionStats,
    prior: &PriorSpec,
    opts: &GridOptions,
) -> Result<PosteriorGrid> {
    if stats.n() < 2 {
        return domain("posterior needs at least two observations");
    }
    if opts.coarse_nodes < 3 || opts.fine_nodes < 3 {
        return domain("grids need at least three nodes");
    }
    let lp = LogPost::new(stats, prior, opts)?;
    let (lo, hi) = (opts.eps, 1.0 - opts.eps);
    let coarse = linspace(lo, hi, opts.coarse_nodes);
    let first = grid_from_nodes(&lp, coarse.clone())?;

    let i =
        first
            .log_weights
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > first.log_weights[b] { i } else { b });
    let (a, b) = (
        coarse[i.saturating_sub(1)],
        coarse[(i + 1).min(coarse.len() - 1)],
    );
    let (mode, _) = golden_section_max(|s| lp.eval(s), a, b, 1e-10);
    let h = coarse[1] - coarse[0];
    let sd = if first.sd > 3.0 * h {
        first.sd
    } else {
        let d = (1e-4f64)
            .min(0.5 * (mode - lo))
            .min(0.5 * (hi - mode))
            .max(1e-9);
        let curv = (lp.eval(mode + d) - 2.0 * lp.eval(mode) + lp.eval(mode - d)) / (d * d);
        if curv < 0.0 && curv.is_finite() {
            (-1.0 / curv).sqrt().max(first.sd)
        } else {
            first.sd.max(h)
        }
    };
    let a = (mode - opts.span_sd * sd).max(lo);
    let b = (mode + opts.span_sd * sd).min(hi);
    grid_from_nodes(&lp, linspace(a, b, opts.fine_nodes))
}

/// Posterior evaluated on given σ nodes (strictly increasing, inside (0,1)).
pub fn posterior_on_grid(
    stats: &PartitionStats,
    prior: &PriorSpec,
    nodes: Vec<f64>,
    m_nodes: usize,
) -> Result<PosteriorGrid> {
    if nodes.is_empty() || nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("σ nodes must be nonempty and strictly increasing");
    }
    if !(nodes[0] > 0.0 && nodes[nodes.len() - 1] < 1.0) {
        return domain("σ nodes must lie in (0,1)");
    }
    let opts = GridOptions {
        m_nodes,
        ..GridOptions::default()
    };
    let lp = LogPost::new(stats, prior, &opts)?;
    grid_from_nodes(&lp, nodes)
}

fn grid_from_nodes(lp: &LogPost, nodes: Vec<f64>) -> Result<PosteriorGrid> {
    let rows: Vec<Vec<f64>> = nodes.par_iter().map(|&s| lp.joint_terms(s)).collect();
    let marginal: Vec<f64> = rows
        .iter()
        .map(|r| {
            if r.len() == 1 {
                r[0]
            } else {
                log_sum_exp(r).unwrap_or(f64::NEG_INFINITY)
            }
        })
        .collect();
    let log_w = trapezoid_log_weights(&nodes);
    let terms: Vec<f64> = marginal.iter().zip(&log_w).map(|(l, w)| l + w).collect();
    let log_z = log_sum_exp(&terms)?;
    if !log_z.is_finite() {
        return Err(Error::Numerical(
            "posterior has no finite mass on the grid".into(),
        ));
    }
    let mut cell_mass: Vec<f64> = terms.iter().map(|t| (t - log_z).exp()).collect();
    let total: f64 = cell_mass.iter().sum();
    cell_mass.iter_mut().for_each(|c| *c /= total);
    let log_weights: Vec<f64> = marginal.iter().map(|l| l - log_z).collect();

    let joint = if lp.m_nodes.len() > 1 {
        let mut log_density = Vec::with_capacity(rows.len() * lp.m_nodes.len());
        let mut mass = Vec::with_capacity(log_density.capacity());
        for (row, w) in rows.iter().zip(&log_w) {
            for (t, mw) in row.iter().zip(&lp.m_log_w) {
                // t already carries the M quadrature weight; strip it for the density
                log_density.push(t - mw - log_z);
                mass.push((t + w - log_z).exp() / total);
            }
        }
        Some(JointGrid {
            m_nodes: lp.m_nodes.clone(),
            log_density,
            cell_mass: mass,
        })
    } else {
        None
    };
    let m_fixed = match lp.prior.m_prior {
        MPrior::Fixed { value } => Some(value),
        MPrior::UniformInterval { .. } => None,
    };
    Ok(finish_grid(
        nodes,
        log_weights,
        cell_mass,
        log_z,
        m_fixed,
        joint,
    ))
}

fn finish_grid(
    sigma_nodes: Vec<f64>,
    log_weights: Vec<f64>,
    cell_mass: Vec<f64>,
    log_normalizer: f64,
    m_fixed: Option<f64>,
    joint: Option<JointGrid>,
) -> PosteriorGrid {
    let mean: f64 = sigma_nodes.iter().zip(&cell_mass).map(|(s, p)| s * p).sum();
    let var: f64 = sigma_nodes
        .iter()
        .zip(&cell_mass)
        .map(|(s, p)| p * (s - mean).powi(2))
        .sum();
    let edge_mass = (cell_mass[0], cell_mass[cell_mass.len() - 1]);
    PosteriorGrid {
        degenerate: edge_mass.0.max(edge_mass.1) > 0.99,
        sigma_nodes,
        log_weights,
        cell_mass,
        log_normalizer,
        mean,
        sd: var.sqrt(),
        m_fixed,
        joint,
        edge_mass,
    }
}

impl PosteriorGrid {
    /// A grid from given nodes and cell masses (normalized here).
    pub fn from_cell_masses(
        sigma_nodes: Vec<f64>,
        cell_mass: Vec<f64>,
        m_fixed: Option<f64>,
    ) -> Result<Self> {
        if sigma_nodes.is_empty() || sigma_nodes.len() != cell_mass.len() {
            return domain("nodes and masses must be nonempty and of equal length");
        }
        if sigma_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("σ nodes must be strictly increasing");
        }
        if cell_mass.iter().any(|m| !(*m >= 0.0)) {
            return domain("cell masses must be nonnegative");
        }
        let total: f64 = cell_mass.iter().sum();
        if !(total > 0.0) {
            return domain("cell masses sum to zero");
        }
        let mass: Vec<f64> = cell_mass.iter().map(|m| m / total).collect();
        let log_w = trapezoid_log_weights(&sigma_nodes);
        let log_weights = mass.iter().zip(&log_w).map(|(m, w)| m.ln() - w).collect();
        Ok(finish_grid(
            sigma_nodes,
            log_weights,
            mass,
            0.0,
            m_fixed,
            None,
        ))
    }

    /// Cell edges: the grid ends and the midpoints between nodes.
    pub fn cell_edges(&self) -> Vec<f64> {
        let x = &self.sigma_nodes;
        let mut e = Vec::with_capacity(x.len() + 1);
        e.push(x[0]);
        e.extend(x.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        e.push(x[x.len() - 1]);
        e
    }

    pub fn mode(&self) -> f64 {
        let i = self.log_weights.iter().enumerate().fold(0, |b, (i, v)| {
            if *v > self.log_weights[b] {
                i
            } else {
                b
            }
        });
        self.sigma_nodes[i]
    }

    /// Posterior quantile by linear interpolation of the cumulative cell masses.
    pub fn quantile(&self, q: f64) -> f64 {
        let edges = self.cell_edges();
        let mut acc = 0.0;
        for (i, &m) in self.cell_mass.iter().enumerate() {
            if acc + m >= q && m > 0.0 {
                let t = ((q - acc) / m).clamp(0.0, 1.0);
                return edges[i] + t * (edges[i + 1] - edges[i]);
            }
            acc += m;
        }
        edges[edges.len() - 1]
    }

    /// E[f(σ, M)] over the grid (joint grid when M is integrated out).
    pub fn expect<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        match (&self.joint, self.m_fixed) {
            (Some(j), _) => {
                let k = j.m_nodes.len();
                j.cell_mass
                    .iter()
                    .enumerate()
                    .map(|(idx, p)| p * f(self.sigma_nodes[idx / k], j.m_nodes[idx % k]))
                    .sum()
            }
            (None, m) => {
                let m = m.unwrap_or(0.0);
                self.sigma_nodes
                    .iter()
                    .zip(&self.cell_mass)
                    .map(|(&s, p)| p * f(s, m))
                    .sum()
            }
        }
    }

    /// CSV with columns sigma, [M,] log_density, cell_mass.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        match &self.joint {
            Some(j) => {
                w.write_record(["sigma", "M", "log_density", "cell_mass"])
                    .map_err(csv_err)?;
                let k = j.m_nodes.len();
                for (idx, (ld, p)) in j.log_density.iter().zip(&j.cell_mass).enumerate() {
                    w.write_record([
                        self.sigma_nodes[idx / k].to_string(),
                        j.m_nodes[idx % k].to_string(),
                        ld.to_string(),
                        p.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            None => {
                w.write_record(["sigma", "log_density", "cell_mass"])
                    .map_err(csv_err)?;
                for ((s, ld), p) in self
                    .sigma_nodes
                    .iter()
                    .zip(&self.log_weights)
                    .zip(&self.cell_mass)
                {
                    w.write_record([s.to_string(), ld.to_string(), p.to_string()])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Total variation distance between the grid posterior and N(mean, var).
///
/// Gaussian mass is assigned to the same cells as the posterior; Gaussian mass
/// falling outside the grid counts fully towards the distance.
pub fn bvm_gap(post: &PosteriorGrid, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let edges = post.cell_edges();
    let mut inside = 0.0;
    let mut diff = 0.0;
    for (i, p) in post.cell_mass.iter().enumerate() {
        let q = normal_interval_mass((edges[i] - mean) / sd, (edges[i + 1] - mean) / sd);
        inside += q;
        diff += (p - q).abs();
    }
    (0.5 * diff + 0.5 * (1.0 - inside).max(0.0)).clamp(0.0, 1.0)
}

/// Total variation distance between two posteriors on the same nodes.
pub fn grid_tv(a: &PosteriorGrid, b: &PosteriorGrid) -> Result<f64> {
    if a.sigma_nodes != b.sigma_nodes {
        return domain("grids differ");
    }
    Ok(0.5
        * a.cell_mass
            .iter()
            .zip(&b.cell_mass)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior mean, sd and the equal-tail interval at `level`.
pub fn posterior_mean_and_interval(post: &PosteriorGrid, level: f64) -> Result<PosteriorSummary> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("level must lie in (0,1), got {level}"));
    }
    let tail = 0.5 * (1.0 - level);
    Ok(PosteriorSummary {
        mean: post.mean,
        sd: post.sd,
        level,
        lower: post.quantile(tail),
        upper: post.quantile(1.0 - tail),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForensicResult {
    /// Database size, excluding the crime-scene profile.
    pub n: u64,
    /// Distinct profiles including the crime-scene profile.
    #[serde(rename = "K")]
    pub k: u64,
    pub lr: f64,
    pub phi_mean: f64,
    pub phi_sd: f64,
    pub sigma_posterior_summary: PosteriorSummary,
}

/// Likelihood ratio for a crime-scene profile that is new to the database.
///
/// `stats` holds the database plus the crime-scene profile as a singleton.
/// φ = (1−σ)/(M+n+1) is averaged over the posterior given all n+1 profiles
/// and the ratio is 1/E[φ].
pub fn forensic_lr(
    stats: &PartitionStats,
    prior: &PriorSpec,
    opts: &GridOptions,
) -> Result<ForensicResult> {
    if stats.singletons() == 0 {
        return domain("the crime-scene profile must be a singleton, but the sample has none");
    }
    let post = posterior_sigma(stats, prior, opts)?;
    forensic_from_posterior(&post, stats.n() - 1, stats.k())
}

/// The ratio from a given posterior, for a database of `n` profiles.
pub fn forensic_from_posterior(post: &PosteriorGrid, n: u64, k: u64) -> Result<ForensicResult> {
    let n1 = n as f64 + 1.0;
    let phi = |s: f64, m: f64| (1.0 - s) / (m + n1);
    let phi_mean = post.expect(phi);
    let phi_sq = post.expect(|s, m| phi(s, m).powi(2));
    if !(phi_mean > 0.0) {
        return Err(Error::Numerical(
            "posterior mean of φ is not positive".into(),
        ));
    }
    Ok(ForensicResult {
        n,
        k,
        lr: 1.0 / phi_mean,
        phi_mean,
        phi_sd: (phi_sq - phi_mean * phi_mean).max(0.0).sqrt(),
        sigma_posterior_summary: posterior_mean_and_interval(post, 0.95)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::tau2_sq;
    use crate::estimators::{mle_sigma, EstimateOptions};
    use crate::sampler::{sample_py_partition, RngStream};

    fn py(sigma: f64, m: f64, n: u64, seed: u64) -> PartitionStats {
        sample_py_partition(sigma, m, n, &mut RngStream::new(seed, 0).rng()).unwrap()
    }

    fn gaussian_grid(mu: f64, sd: f64, nodes: usize) -> PosteriorGrid {
        let x = linspace(mu - 10.0 * sd, mu + 10.0 * sd, nodes);
        let mut e = vec![x[0]];
        e.extend(x.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        e.push(x[x.len() - 1]);
        let mass = (0..x.len())
            .map(|i| normal_interval_mass((e[i] - mu) / sd, (e[i + 1] - mu) / sd))
            .collect();
        PosteriorGrid::from_cell_masses(x, mass, Some(1.0)).unwrap()
    }

    #[test]
    fn flat_prior_mode_matches_mle() {
        let st = py(0.5, 1.0, 2000, 3);
        let post = posterior_sigma(&st, &PriorSpec::default(), &GridOptions::default()).unwrap();
        let mle = mle_sigma(&st, 1.0, &EstimateOptions::default()).unwrap();
        let h = post.sigma_nodes[1] - post.sigma_nodes[0];
        assert!(
            (post.mode() - mle.sigma_hat).abs() <= h,
            "{} vs {}",
            post.mode(),
            mle.sigma_hat
        );
        assert!(!post.degenerate);
        let total: f64 = post.cell_mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // spans mean ± 10 sd
        assert!(post.sigma_nodes[0] <= post.mean - 9.5 * post.sd);
        assert!(post.sigma_nodes[post.sigma_nodes.len() - 1] >= post.mean + 9.5 * post.sd);
    }

    #[test]
    fn beta_prior_shifts_log_density_exactly() {
        let st = py(0.4, 2.0, 500, 5);
        let nodes = linspace(0.2, 0.6, 301);
        let flat = posterior_on_grid(&st, &PriorSpec::default(), nodes.clone(), 65).unwrap();
        let beta = PriorSpec {
            sigma_prior: SigmaPrior::Beta { a: 2.0, b: 2.0 },
            ..PriorSpec::default()
        };
        let bp = posterior_on_grid(&st, &beta, nodes.clone(), 65).unwrap();
        let c = bp.log_weights[0] - flat.log_weights[0] - (nodes[0] * (1.0 - nodes[0])).ln();
        for (i, s) in nodes.iter().enumerate() {
            let d = bp.log_weights[i] - flat.log_weights[i] - (s * (1.0 - s)).ln();
            assert!((d - c).abs() < 1e-9, "{d} vs {c}");
        }
    }

    #[test]
    fn posterior_sd_matches_curvature_limit() {
        let st = py(0.5, 1.0, 10_000, 11);
        let post = posterior_sigma(&st, &PriorSpec::default(), &GridOptions::default()).unwrap();
        let mle = mle_sigma(&st, 1.0, &EstimateOptions::default()).unwrap();
        let alpha = st.k() as f64 / ln_gamma(1.0 - mle.sigma_hat).exp();
        let want = 1.0 / (alpha * tau2_sq(mle.sigma_hat).unwrap()).sqrt();
        assert!((post.sd / want - 1.0).abs() < 0.25, "{} vs {want}", post.sd);
    }

    #[test]
    fn gap_examples() {
        let g = gaussian_grid(0.5, 0.01, 2049);
        assert!(bvm_gap(&g, 0.5, 1e-4) <= 1e-6);
        let shifted = bvm_gap(&g, 0.55, 1e-4);
        assert!(shifted >= 0.97, "{shifted}");
        // symmetric Gaussian grid: mean at the center
        assert!((g.mean - 0.5).abs() < 1e-10);
        let s = posterior_mean_and_interval(&g, 0.95).unwrap();
        assert!(s.lower < 0.5 && s.upper > 0.5);
        assert!((s.upper - 0.5 - 1.959964 * 0.01).abs() < 1e-4);
    }

    #[test]
    fn tv_is_a_metric_on_fixed_grids() {
        let a = gaussian_grid(0.5, 0.01, 401);
        let nodes = a.sigma_nodes.clone();
        let mk = |mu: f64, sd: f64| {
            let m: Vec<f64> = nodes
                .iter()
                .map(|x| (-(x - mu).powi(2) / (2.0 * sd * sd)).exp())
                .collect();
            PosteriorGrid::from_cell_masses(nodes.clone(), m, None).unwrap()
        };
        let b = mk(0.51, 0.012);
        let c = mk(0.49, 0.02);
        assert_eq!(grid_tv(&a, &a).unwrap(), 0.0);
        assert_eq!(grid_tv(&a, &b).unwrap(), grid_tv(&b, &a).unwrap());
        assert!(
            grid_tv(&a, &c).unwrap() <= grid_tv(&a, &b).unwrap() + grid_tv(&b, &c).unwrap() + 1e-15
        );
    }

    #[test]
    fn refinement_stability() {
        let st = py(0.5, 1.0, 3000, 8);
        let coarse = posterior_sigma(&st, &PriorSpec::default(), &GridOptions::default()).unwrap();
        let (a, b) = (
            coarse.sigma_nodes[0],
            coarse.sigma_nodes[coarse.sigma_nodes.len() - 1],
        );
        let fine = posterior_on_grid(&st, &PriorSpec::default(), linspace(a, b, 4097), 65).unwrap();
        assert!((coarse.mean - fine.mean).abs() < 1e-8);
        let var = coarse.sd * coarse.sd;
        assert!(
            (bvm_gap(&coarse, coarse.mean, var) - bvm_gap(&fine, coarse.mean, var)).abs() < 1e-4
        );
    }

    #[test]
    fn uniform_m_prior_marginalizes() {
        let st = py(0.5, 3.0, 1000, 4);
        let prior = PriorSpec {
            sigma_prior: SigmaPrior::Uniform01,
            m_prior: MPrior::UniformInterval { m_max: 10.0 },
        };
        let post = posterior_sigma(&st, &prior, &GridOptions::default()).unwrap();
        let j = post.joint.as_ref().unwrap();
        assert_eq!(j.cell_mass.len(), post.sigma_nodes.len() * 65);
        let total: f64 = j.cell_mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (i, p) in post.cell_mass.iter().enumerate() {
            let row: f64 = j.cell_mass[i * 65..(i + 1) * 65].iter().sum();
            assert!((row - p).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        post.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sigma,M,log_density,cell_mass"));
    }

    #[test]
    fn all_distinct_is_flagged() {
        let st = PartitionStats::from_block_sizes(vec![1; 200]).unwrap();
        let post = posterior_sigma(&st, &PriorSpec::default(), &GridOptions::default()).unwrap();
        assert!(post.mean > 0.9);
    }

    #[test]
    fn forensic_identities() {
        let db = py(0.5, 1.0, 2000, 21);
        let st = db.with_new_singleton();
        let prior = PriorSpec::default();
        let r = forensic_lr(&st, &prior, &GridOptions::default()).unwrap();
        let n = db.n() as f64;
        assert_eq!(r.n, db.n());
        assert!(r.lr > n + 1.0);
        let post = posterior_sigma(&st, &prior, &GridOptions::default()).unwrap();
        let one_minus = post.expect(|s, _| 1.0 - s);
        assert!((r.lr * one_minus - (n + 2.0)).abs() < 1e-9 * n);

        let point = PosteriorGrid::from_cell_masses(vec![0.3], vec![1.0], Some(4.0)).unwrap();
        let r = forensic_from_posterior(&point, 100, 10).unwrap();
        assert!((r.lr - 105.0 / 0.7).abs() < 1e-10);
        assert_eq!(r.phi_sd, 0.0);

        let no_singleton = PartitionStats::from_block_sizes([2, 3]).unwrap();
        assert!(forensic_lr(&no_singleton, &prior, &GridOptions::default()).is_err());
    }

    #[test]
    fn prior_validation() {
        let bad = PriorSpec {
            sigma_prior: SigmaPrior::Beta { a: 0.5, b: 2.0 },
            ..PriorSpec::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&PriorSpec::default()).unwrap();
        let back: PriorSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PriorSpec::default());
    }
}
