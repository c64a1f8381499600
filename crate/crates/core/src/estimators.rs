//! Maximum marginal likelihood estimation of σ for fixed M, joint estimation
//! of (σ, M) through the profile likelihood, and plug-in standard errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{tau1_sq, tau2_sq};
use crate::error::{domain, Error, Result};
use crate::likelihood::{LikelihoodSurface, SIGMA_WINDOW};
use crate::numerics::{golden_section_max, ln_gamma};
use crate::partition::PartitionStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Interior,
    LowerSigma,
    UpperSigma,
    LowerM,
    UpperM,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Root tolerance in σ.
    pub root_tol: f64,
    /// Golden-section tolerance in M.
    pub m_tol: f64,
    /// Number of log-spaced profile grid points above M = 0.01.
    pub m_grid: usize,
    /// Also compute the sandwich standard error (evaluates the limit series).
    pub sandwich: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            root_tol: 1e-10,
            m_tol: 1e-6,
            m_grid: 64,
            sandwich: false,
        }
    }
}

pub const DEFAULT_M_MAX: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub sigma_hat: f64,
    #[serde(rename = "M_hat")]
    pub m_hat: Option<f64>,
    pub boundary: Boundary,
    /// Boundary status of M̂ for profile fits.
    #[serde(
        rename = "M_boundary",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub m_boundary: Option<Boundary>,
    pub score_at_opt: f64,
    pub se_sandwich: Option<f64>,
    pub se_curvature: Option<f64>,
    #[serde(rename = "K")]
    pub k: u64,
    pub n: u64,
    pub log_lik: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Root of the σ-score for fixed M, or the boundary it escapes to.
///
/// The score is strictly decreasing in σ. If it is still positive at 1 − 1e-9
/// (no ties) σ̂ is reported as 1 with `UpperSigma`; if it is already negative at
/// 1e-9, σ̂ is 0 with `LowerSigma`. Otherwise bracketed Newton steps (falling
/// back to bisection) run until the step is below the root tolerance.
pub fn mle_sigma(stats: &PartitionStats, m: f64, opts: &EstimateOptions) -> Result<EstimateResult> {
    let surf = LikelihoodSurface::new(stats);
    let mut res = mle_on_surface(&surf, m, opts)?;
    if opts.sandwich && res.boundary == Boundary::Interior {
        res.se_sandwich = Some(sandwich_se(stats, res.sigma_hat)?);
    }
    Ok(res)
}

pub(crate) fn mle_on_surface(
    surf: &LikelihoodSurface,
    m: f64,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    if surf.n() < 2 {
        return domain("estimation needs at least two observations");
    }
    if !(m >= 0.0) || !m.is_finite() {
        return domain(format!("M must be finite and >= 0, got {m}"));
    }
    let (lo, hi) = SIGMA_WINDOW;
    let s_lo = surf.score(lo, m);
    let s_hi = surf.score(hi, m);
    let mut diagnostics = BTreeMap::new();
    let result = |sigma_hat: f64, at: f64, boundary: Boundary, diagnostics| {
        let (score, hess) = surf.score_hess(at, m);
        EstimateResult {
            sigma_hat,
            m_hat: Some(m),
            boundary,
            m_boundary: None,
            score_at_opt: score,
            se_sandwich: None,
            se_curvature: if boundary == Boundary::Interior {
                Some(1.0 / (-hess).sqrt())
            } else {
                None
            },
            k: surf.k(),
            n: surf.n(),
            log_lik: surf.log_eppf(at, m),
            diagnostics,
        }
    };
    if s_hi >= 0.0 {
        return Ok(result(1.0, hi, Boundary::UpperSigma, diagnostics));
    }
    if s_lo <= 0.0 {
        return Ok(result(0.0, lo, Boundary::LowerSigma, diagnostics));
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5;
    let mut iters = 0;
    loop {
        iters += 1;
        let (s, h) = surf.score_hess(x, m);
        if s > 0.0 {
            a = x;
        } else if s < 0.0 {
            b = x;
        } else {
            break;
        }
        let mut next = x - s / h;
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        let step = (next - x).abs();
        x = next;
        if step <= opts.root_tol || b - a <= opts.root_tol {
            break;
        }
        if iters > 500 {
            return Err(Error::NonConvergence {
                estimate: x,
                error_bound: b - a,
            });
        }
    }
    diagnostics.insert("iterations".into(), iters as f64);
    Ok(result(x, x, Boundary::Interior, diagnostics))
}

/// Joint maximizer of Λ(σ, M) over σ ∈ (0,1), M ∈ [0, M̄] via the profile
/// M ↦ Λ(σ̂_M, M).
///
/// The profile is scanned at M = 0 and at log-spaced points in [0.01, M̄]; the
/// best grid point (ties to the smaller M) is refined by golden section on its
/// neighbouring interval, and the endpoints are compared explicitly so that a
/// boundary maximum is reported exactly.
pub fn profile_mle(
    stats: &PartitionStats,
    m_max: f64,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    if !(m_max > 0.0) || !m_max.is_finite() {
        return domain(format!("M_max must be positive and finite, got {m_max}"));
    }
    let surf = LikelihoodSurface::new(stats);
    if surf.n() < 2 {
        return domain("estimation needs at least two observations");
    }
    let profile = |m: f64| -> f64 {
        mle_on_surface(&surf, m, opts)
            .map(|r| r.log_lik)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut grid = vec![0.0];
    let start = 0.01f64.min(m_max);
    let pts = opts.m_grid.max(2);
    for i in 0..pts {
        let t = i as f64 / (pts - 1) as f64;
        grid.push(start * (m_max / start).powf(t));
    }
    grid.dedup();
    let values: Vec<f64> = grid.iter().map(|&m| profile(m)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (mut m_hat, mut v_hat) = (grid[best], values[best]);
    if hi > lo {
        let (mg, vg) = golden_section_max(profile, lo, hi, opts.m_tol);
        if vg > v_hat {
            m_hat = mg;
            v_hat = vg;
        }
    }
    let v0 = values[0];
    let v_max = *values.last().unwrap();
    let m_boundary = if v0 >= v_hat {
        m_hat = 0.0;
        Boundary::LowerM
    } else if v_max > v_hat {
        m_hat = m_max;
        Boundary::UpperM
    } else if m_hat == m_max {
        Boundary::UpperM
    } else {
        Boundary::Interior
    };
    let mut res = mle_on_surface(&surf, m_hat, opts)?;
    res.m_boundary = Some(m_boundary);
    if res.boundary == Boundary::Interior && m_boundary != Boundary::Interior {
        res.boundary = m_boundary;
    }
    res.diagnostics.insert("profile_at_zero".into(), v0);
    res.diagnostics.insert("profile_at_max".into(), v_max);
    res.diagnostics.insert("M_max".into(), m_max);
    if opts.sandwich && res.sigma_hat > 0.0 && res.sigma_hat < 1.0 {
        res.se_sandwich = Some(sandwich_se(stats, res.sigma_hat)?);
    }
    Ok(res)
}

/// τ̂₁/(τ̂₂² √α̂) with the limit constants at σ̂ and α̂ = K/Γ(1−σ̂).
pub fn sandwich_se(stats: &PartitionStats, sigma_hat: f64) -> Result<f64> {
    if !(sigma_hat > 0.0 && sigma_hat < 1.0) {
        return Err(Error::Boundary(format!(
            "sandwich standard error needs an interior estimate, got {sigma_hat}"
        )));
    }
    Ok(sandwich_se_from(
        stats.k(),
        sigma_hat,
        tau1_sq(sigma_hat)?,
        tau2_sq(sigma_hat)?,
    ))
}

/// The sandwich formula with given constants.
pub fn sandwich_se_from(k: u64, sigma_hat: f64, tau1_sq: f64, tau2_sq: f64) -> f64 {
    let alpha_hat = plug_in_alpha(k, sigma_hat);
    tau1_sq.sqrt() / (tau2_sq * alpha_hat.sqrt())
}

/// α̂ = K/Γ(1−σ̂), the plug-in for α₀(n).
pub fn plug_in_alpha(k: u64, sigma_hat: f64) -> f64 {
    k as f64 / ln_gamma(1.0 - sigma_hat).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bisect;
    use crate::sampler::{sample_py_partition, RngStream};
    use proptest::prelude::*;

    fn stats(sizes: &[u64]) -> PartitionStats {
        PartitionStats::from_block_sizes(sizes.iter().copied()).unwrap()
    }

    #[test]
    fn three_observation_example() {
        // blocks (2,1), M = 1: the score is 1/(1+σ) - 1/(1-σ), zero only at σ = 0
        let st = PartitionStats::from_observations(&["a", "b", "a"]).unwrap();
        let surf = LikelihoodSurface::new(&st);
        for s in [0.1, 0.3, 0.7] {
            let want = 1.0 / (1.0 + s) - 1.0 / (1.0 - s);
            assert!((surf.score(s, 1.0) - want).abs() < 1e-12);
        }
        let r = mle_sigma(&st, 1.0, &EstimateOptions::default()).unwrap();
        assert_eq!((r.boundary, r.sigma_hat), (Boundary::LowerSigma, 0.0));
        // with M = 0.5 the root is interior: (0.5+σ)(1-σ) peaks at σ = 1/4
        let f = |s: f64| Ok(1.0 / (0.5 + s) - 1.0 / (1.0 - s));
        let want = bisect(f, 1e-9, 1.0 - 1e-9, 1e-12).unwrap();
        let r = mle_sigma(&st, 0.5, &EstimateOptions::default()).unwrap();
        assert_eq!(r.boundary, Boundary::Interior);
        assert!(
            (r.sigma_hat - want).abs() < 1e-10,
            "{} vs {want}",
            r.sigma_hat
        );
        assert!((want - 0.25).abs() < 1e-10);
    }

    #[test]
    fn boundaries() {
        let r = mle_sigma(&stats(&[1, 1, 1, 1]), 1.0, &EstimateOptions::default()).unwrap();
        assert_eq!((r.boundary, r.sigma_hat), (Boundary::UpperSigma, 1.0));
        // one block of size 50 with large M: the score is negative everywhere
        let r = mle_sigma(&stats(&[50]), 5.0, &EstimateOptions::default()).unwrap();
        assert_eq!((r.boundary, r.sigma_hat), (Boundary::LowerSigma, 0.0));
        assert!(mle_sigma(&stats(&[1]), 1.0, &EstimateOptions::default()).is_err());
    }

    #[test]
    fn simulated_consistency() {
        let mut close = 0;
        let reps = 200;
        let (mut s1, mut s2, mut k, mut cv) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..reps {
            let st =
                sample_py_partition(0.5, 1.0, 10_000, &mut RngStream::new(42, r).rng()).unwrap();
            let e = mle_sigma(&st, 1.0, &EstimateOptions::default()).unwrap();
            if (e.sigma_hat - 0.5).abs() < 0.05 {
                close += 1;
            }
            s1 += e.sigma_hat;
            s2 += e.sigma_hat * e.sigma_hat;
            k += st.k() as f64;
            cv += e.se_curvature.unwrap().powi(2);
        }
        let sd = (s2 / reps as f64 - (s1 / reps as f64).powi(2)).sqrt();
        let curvature = (cv / reps as f64).sqrt();
        assert!(
            (sd / curvature - 1.0).abs() < 0.15,
            "sd {sd} vs curvature se {curvature}"
        );
        // limit-constant prediction 1/sqrt(α τ₂²), α = K/Γ(1/2), is 15-20% smaller at this n
        let alpha = k / reps as f64 / std::f64::consts::PI.sqrt();
        let limit = 1.0 / (alpha * tau2_sq(0.5).unwrap()).sqrt();
        assert!(sd > limit && sd < 1.3 * limit, "sd {sd} vs limit {limit}");
        assert!((s1 / reps as f64 - 0.5).abs() < 3.0 * sd / (reps as f64).sqrt());
        assert!(close as f64 >= 0.85 * reps as f64, "{close}/{reps}");
    }

    #[test]
    fn profile_examples() {
        let opts = EstimateOptions::default();
        let st = sample_py_partition(0.4, 3.0, 2000, &mut RngStream::new(1, 0).rng()).unwrap();
        let p = profile_mle(&st, 50.0, &opts).unwrap();
        let surf = LikelihoodSurface::new(&st);
        let prof = |m: f64| mle_on_surface(&surf, m, &opts).unwrap().log_lik;
        assert!(p.log_lik >= prof(0.0) - 1e-9);
        assert!(p.log_lik >= prof(50.0) - 1e-9);
        let direct = mle_sigma(&st, p.m_hat.unwrap(), &opts).unwrap();
        assert!((direct.sigma_hat - p.sigma_hat).abs() < 1e-8);
        let se = sandwich_se(&st, p.sigma_hat).unwrap();
        assert!(se > 0.0);
    }

    #[test]
    fn sandwich_scaling() {
        let a = sandwich_se_from(100, 0.5, 3.26, 11.1);
        let b = sandwich_se_from(200, 0.5, 3.26, 11.1);
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
        assert!(sandwich_se(&stats(&[2, 1]), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn interior_root_is_certified(sizes in prop::collection::vec(1u64..30, 2..80), m in 0.0f64..10.0) {
            let st = stats(&sizes);
            prop_assume!(st.has_ties());
            let r = mle_sigma(&st, m, &EstimateOptions::default()).unwrap();
            prop_assume!(r.boundary == Boundary::Interior);
            let s = LikelihoodSurface::new(&st);
            let d = 1e-6;
            prop_assume!(r.sigma_hat - d > 0.0 && r.sigma_hat + d < 1.0);
            prop_assert!(s.score(r.sigma_hat - d, m) > 0.0);
            prop_assert!(s.score(r.sigma_hat + d, m) < 0.0);
        }

        #[test]
        fn adding_a_tie_does_not_raise_sigma(sizes in prop::collection::vec(1u64..30, 2..80), m in 0.0f64..10.0) {
            let st = stats(&sizes);
            prop_assume!(st.singletons() > 0);
            let before = mle_sigma(&st, m, &EstimateOptions::default()).unwrap();
            // turn one singleton into a pair
            let mut grown: Vec<u64> = st.sizes().to_vec();
            let last = grown.len() - 1;
            grown[last] = 2;
            let after = mle_sigma(&stats(&grown), m, &EstimateOptions::default()).unwrap();
            prop_assert!(after.sigma_hat <= before.sigma_hat + 1e-10);
        }

        #[test]
        fn profile_ignores_order(mut sizes in prop::collection::vec(1u64..20, 2..40)) {
            let a = profile_mle(&stats(&sizes), 20.0, &EstimateOptions::default()).unwrap();
            sizes.reverse();
            let b = profile_mle(&stats(&sizes), 20.0, &EstimateOptions::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
