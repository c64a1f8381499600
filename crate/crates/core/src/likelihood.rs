//! The Pitman-Yor marginal likelihood of a tie pattern, its σ-derivatives and
//! the precision correction h_{σ,M}.
//!
//! All evaluations go through the occupancy form
//! Λ(σ,M) = Σ_{l<K} ln(M+lσ) + Σ_{l<n} Z_{l+1} ln(l−σ) − Σ_{i<n} ln(M+i),
//! with runs of constant Z_{l+1} collapsed, so the cost is governed by the number
//! of distinct block sizes rather than by n.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numerics::{digamma, ln_rising, trigamma, KahanSum};
use crate::partition::{PartitionStats, ZRun};

/// Evaluation window for σ; outside it the likelihood is reported as −∞.
pub const SIGMA_WINDOW: (f64, f64) = (1e-9, 1.0 - 1e-9);

const DIRECT_K: u64 = 4096;
const DIRECT_RUN: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PYParams {
    pub sigma: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

impl PYParams {
    pub fn new(sigma: f64, m: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return domain(format!("sigma must lie in (0,1), got {sigma}"));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return domain(format!("M must be finite and >= 0, got {m}"));
        }
        Ok(Self { sigma, m })
    }
}

pub fn in_window(sigma: f64) -> bool {
    sigma >= SIGMA_WINDOW.0 && sigma <= SIGMA_WINDOW.1
}

fn check_m(m: f64) -> Result<()> {
    if m >= 0.0 && m.is_finite() {
        Ok(())
    } else {
        domain(format!("M must be finite and >= 0, got {m}"))
    }
}

/// Cached run structure of a sample, for repeated evaluation at many (σ, M).
#[derive(Debug, Clone)]
pub struct LikelihoodSurface {
    n: u64,
    k: u64,
    runs: Vec<ZRun>,
}

impl LikelihoodSurface {
    pub fn new(stats: &PartitionStats) -> Self {
        Self {
            n: stats.n(),
            k: stats.k(),
            runs: stats.z_runs(),
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Σ_l Z_{l+1} ln(l−σ).
    pub fn z_log(&self, sigma: f64) -> f64 {
        let mut s = KahanSum::new();
        for r in &self.runs {
            s.add(r.z as f64 * ln_rising(r.from as f64 - sigma, r.to - r.from + 1));
        }
        s.value()
    }

    /// Σ_{l=1}^{K-1} ln(M+lσ).
    pub fn k_log(&self, sigma: f64, m: f64) -> f64 {
        let j = self.k - 1;
        if j == 0 {
            return 0.0;
        }
        if m == 0.0 {
            return j as f64 * sigma.ln() + ln_rising(1.0, j);
        }
        if j <= 32 {
            let mut s = KahanSum::new();
            for l in 1..=j {
                s.add((m + l as f64 * sigma).ln());
            }
            return s.value();
        }
        j as f64 * sigma.ln() + ln_rising(1.0 + m / sigma, j)
    }

    /// Σ_{i=1}^{n-1} ln(M+i).
    pub fn denom_log(&self, m: f64) -> f64 {
        ln_rising(m + 1.0, self.n - 1)
    }

    /// Λ(σ, M); −∞ outside the σ window.
    pub fn log_eppf(&self, sigma: f64, m: f64) -> f64 {
        if !in_window(sigma) {
            return f64::NEG_INFINITY;
        }
        self.k_log(sigma, m) + self.z_log(sigma) - self.denom_log(m)
    }

    /// Σ_{l=1}^{K-1} l/(M+lσ) and Σ_{l=1}^{K-1} l²/(M+lσ)².
    fn k_derivs(&self, sigma: f64, m: f64) -> (f64, f64) {
        let j = self.k - 1;
        if j == 0 {
            return (0.0, 0.0);
        }
        if m == 0.0 {
            return (j as f64 / sigma, j as f64 / (sigma * sigma));
        }
        if j <= DIRECT_K {
            let (mut s1, mut s2) = (KahanSum::new(), KahanSum::new());
            for l in 1..=j {
                let l = l as f64;
                let t = l / (m + l * sigma);
                s1.add(t);
                s2.add(t * t);
            }
            return (s1.value(), s2.value());
        }
        // l/(M+lσ) = (1 − a/(a+l))/σ with a = M/σ
        let a = m / sigma;
        let h1 = digamma(a + j as f64 + 1.0) - digamma(a + 1.0);
        let h2 = trigamma(a + 1.0) - trigamma(a + j as f64 + 1.0);
        let jf = j as f64;
        let s1 = (jf - a * h1) / sigma;
        let s2 = (jf - 2.0 * a * h1 + a * a * h2) / (sigma * sigma);
        (s1, s2)
    }

    /// G(σ) = Σ Z_{l+1}/(l−σ) and its σ-derivative Σ Z_{l+1}/(l−σ)².
    fn z_derivs(&self, sigma: f64) -> (f64, f64) {
        let (mut g, mut dg) = (KahanSum::new(), KahanSum::new());
        for r in &self.runs {
            let z = r.z as f64;
            if r.to - r.from < DIRECT_RUN {
                for l in r.from..=r.to {
                    let d = l as f64 - sigma;
                    g.add(z / d);
                    dg.add(z / (d * d));
                }
            } else {
                let lo = r.from as f64 - sigma;
                let hi = r.to as f64 + 1.0 - sigma;
                g.add(z * (digamma(hi) - digamma(lo)));
                dg.add(z * (trigamma(lo) - trigamma(hi)));
            }
        }
        (g.value(), dg.value())
    }

    /// G(σ) = Σ_l Z_{l+1}/(l−σ).
    pub fn g_sum(&self, sigma: f64) -> f64 {
        self.z_derivs(sigma).0
    }

    /// ∂Λ/∂σ and ∂²Λ/∂σ².
    pub fn score_hess(&self, sigma: f64, m: f64) -> (f64, f64) {
        let (k1, k2) = self.k_derivs(sigma, m);
        let (g, dg) = self.z_derivs(sigma);
        (k1 - g, -k2 - dg)
    }

    pub fn score(&self, sigma: f64, m: f64) -> f64 {
        self.k_derivs(sigma, m).0 - self.z_derivs(sigma).0
    }

    pub fn hess(&self, sigma: f64, m: f64) -> f64 {
        self.score_hess(sigma, m).1
    }
}

fn check_eval(params: &PYParams) -> Result<()> {
    check_m(params.m)?;
    if !(params.sigma > 0.0 && params.sigma < 1.0) {
        return domain(format!("sigma must lie in (0,1), got {}", params.sigma));
    }
    Ok(())
}

/// Log-probability of the observed tie pattern under PY(σ, M).
///
/// Returns −∞ when σ is outside [1e-9, 1 − 1e-9].
pub fn log_eppf(stats: &PartitionStats, params: PYParams) -> Result<f64> {
    check_m(params.m)?;
    if !(params.sigma > 0.0 && params.sigma < 1.0) {
        if params.sigma == 1.0 || params.sigma == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        return domain(format!("sigma must lie in (0,1), got {}", params.sigma));
    }
    Ok(LikelihoodSurface::new(stats).log_eppf(params.sigma, params.m))
}

pub fn score_sigma(stats: &PartitionStats, params: PYParams) -> Result<f64> {
    check_eval(&params)?;
    Ok(LikelihoodSurface::new(stats).score(params.sigma, params.m))
}

pub fn hess_sigma(stats: &PartitionStats, params: PYParams) -> Result<f64> {
    check_eval(&params)?;
    Ok(LikelihoodSurface::new(stats).hess(params.sigma, params.m))
}

/// h_{σ,M}(k) = 1 + Σ_{l=1}^{k-1} M/(M+lσ).
pub fn h_precision(k: u64, sigma: f64, m: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("sigma must lie in (0,1), got {sigma}"));
    }
    check_m(m)?;
    if k == 0 {
        return domain("h needs k >= 1");
    }
    if m == 0.0 {
        return Ok(1.0);
    }
    let mut s = KahanSum::new();
    s.add(1.0);
    for l in 1..k {
        s.add(m / (m + l as f64 * sigma));
    }
    Ok(s.value())
}
