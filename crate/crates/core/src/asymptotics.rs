//! Limit theory as computable objects: the centering function E₀,ₙ and its
//! root σ₀,ₙ, the limit E₀ and its slope τ₂², the score variance τ₁², and the
//! limiting precision M₀.
//!
//! The limit series decay like m^{-1-γ} (times powers of log m). They are summed
//! exactly up to m* = 10⁵ with the Γ-ratios carried by recursion, and the
//! remainder Σ_{m>m*} f(m) is replaced by ∫_{m*+1/2}^∞ f(x) dx over the
//! continuous extension of the summand (g extended through the digamma
//! function), whose error is O(f''(m*)).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{
    bisect, digamma, golden_section_max, integrate, integrate_to_infinity, ln_gamma,
    ln_gamma_ratio, poisson_expectations, poisson_weighted_reciprocal, GTable, KahanSum,
    QuadOptions, SeriesTolerance,
};
use crate::population::{Population, SlowVariation};

/// Number of exactly summed terms in the single limit series.
pub const SERIES_HEAD: u64 = 100_000;
/// Number of exactly summed diagonals in the double series.
pub const DIAGONAL_HEAD: u64 = 10_000;

const TAIL_REL_TOL: f64 = 1e-11;

/// The limit series of the Poissonized occupancy sums for a regular-variation
/// index γ, evaluated at σ.
#[derive(Debug, Clone)]
pub struct LimitSeries {
    gamma: f64,
    sigma: f64,
    table: GTable,
}

impl LimitSeries {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return domain(format!("gamma must lie in (0,1), got {gamma}"));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return domain(format!("sigma must lie in (0,1), got {sigma}"));
        }
        Ok(Self {
            gamma,
            sigma,
            table: GTable::new(sigma, SERIES_HEAD + 2)?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn g_real(&self, x: f64) -> f64 {
        if x < 1.0 {
            0.0
        } else {
            digamma(x - self.sigma) - digamma(1.0 - self.sigma)
        }
    }

    /// Σ_{m≥1} Γ(m+1−γ)/m! · h(m, g(m), g(m+1)).
    fn single_series<H: Fn(f64, f64, f64) -> f64>(&self, h: H) -> Result<f64> {
        let gam = self.gamma;
        let mut acc = KahanSum::new();
        let mut r = ln_gamma(2.0 - gam).exp();
        for m in 1..=SERIES_HEAD {
            let mf = m as f64;
            acc.add(r * h(mf, self.table.g(m), self.table.g(m + 1)));
            r *= (mf + 1.0 - gam) / (mf + 1.0);
        }
        let tail = integrate_to_infinity(
            |x| {
                let r = ln_gamma_ratio(x + 1.0, -gam).exp();
                r * h(x, self.g_real(x), self.g_real(x + 1.0))
            },
            SERIES_HEAD as f64 + 0.5,
            gam,
            TAIL_REL_TOL,
        )?;
        acc.add(tail);
        Ok(acc.value())
    }

    /// Γ(1−γ)
    pub fn i(&self) -> f64 {
        ln_gamma(1.0 - self.gamma).exp()
    }

    /// (2^γ − 1)Γ(1−γ)
    pub fn ii(&self) -> f64 {
        (self.gamma.exp2() - 1.0) * self.i()
    }

    /// Σ_{m≥1} Γ(m+1−γ)/(m!(m−σ))
    pub fn iii(&self) -> Result<f64> {
        let s = self.sigma;
        self.single_series(|m, _, _| 1.0 / (m - s))
    }

    /// Σ_{m≥1} Γ(m+1−γ)/(m!(m−σ)²)
    pub fn iv(&self) -> Result<f64> {
        let s = self.sigma;
        self.single_series(|m, _, _| 1.0 / ((m - s) * (m - s)))
    }

    /// Σ_{m≥1} Γ(m+1−γ)(g(m+1)+g(m))/(m!(m−σ))
    pub fn v(&self) -> Result<f64> {
        let s = self.sigma;
        self.single_series(|m, g0, g1| (g0 + g1) / (m - s))
    }

    /// Σ_{m≥1} Γ(m+1−γ)(g(m+1)² + g(m+1)g(m) + g(m)²)/(m!(m−σ))
    pub fn viii(&self) -> Result<f64> {
        let s = self.sigma;
        self.single_series(|m, g0, g1| (g1 * g1 + g1 * g0 + g0 * g0) / (m - s))
    }

    /// Σ_{m≥2} g(m) γ Γ(m−γ)/(m! 2^{m−γ}); converges geometrically.
    pub fn vii(&self) -> f64 {
        let gam = self.gamma;
        let mut acc = KahanSum::new();
        // q_m = Γ(m−γ)/(m! 2^{m−γ}), starting at m = 2
        let mut q =
            (ln_gamma(2.0 - gam) - 2.0f64.ln() - (2.0 - gam) * std::f64::consts::LN_2).exp();
        let mut m = 2u64;
        loop {
            let t = self.table.g(m) * gam * q;
            acc.add(t);
            if m > 10 && t.abs() < 1e-20 * acc.value().abs() {
                break;
            }
            let mf = m as f64;
            q *= (mf - gam) / ((mf + 1.0) * 2.0);
            m += 1;
        }
        acc.value()
    }

    /// One diagonal k + m = N of the double series.
    fn diagonal(&self, n: u64, table: &GTable) -> f64 {
        let gam = self.gamma;
        let s = self.sigma;
        let nf = n as f64;
        let w = (12.0 * nf.sqrt() + 20.0) as u64;
        let lo = (n / 2).saturating_sub(w).max(2);
        let hi = (n / 2 + w).min(n - 1);
        if lo > hi {
            return 0.0;
        }
        let mode = (n / 2).clamp(lo, hi);
        let ln_pm = ln_gamma(nf + 1.0)
            - ln_gamma(mode as f64 + 1.0)
            - ln_gamma((n - mode) as f64 + 1.0)
            - nf * std::f64::consts::LN_2;
        let pm = ln_pm.exp();
        let term = |k: u64, p: f64| p * table.g(k) / ((n - k) as f64 - s);
        let mut acc = KahanSum::new();
        let mut p = pm;
        for k in mode..=hi {
            acc.add(term(k, p));
            p *= (n - k) as f64 / (k + 1) as f64;
        }
        let mut p = pm;
        let mut k = mode;
        while k > lo {
            p *= k as f64 / (n - k + 1) as f64;
            k -= 1;
            acc.add(term(k, p));
        }
        gam.exp2() * ln_gamma_ratio(nf + 1.0, -gam).exp() * acc.value()
    }

    /// Σ_{k≥2} Σ_{m≥1} g(k) Γ(k+m+1−γ)/(k! m! 2^{k+m−γ} (m−σ)), summed by diagonals.
    ///
    /// On diagonal N the weights C(N,k)/2^N concentrate at k ≈ N/2, so for large N
    /// the diagonal behaves like 2^γ Γ(N+1−γ)/N! · g(N/2)/(N/2 − σ). That shape,
    /// rescaled to match the last exact diagonal with a 1/N correction, carries
    /// the tail beyond N* = 10⁴.
    pub fn vi(&self) -> Result<f64> {
        self.vi_with_head(DIAGONAL_HEAD)
    }

    pub(crate) fn vi_with_head(&self, head: u64) -> Result<f64> {
        let gam = self.gamma;
        let s = self.sigma;
        let table = &self.table;
        let mut acc = KahanSum::new();
        let mut last = 0.0;
        for n in 3..=head {
            last = self.diagonal(n, table);
            acc.add(last);
        }
        let model = |x: f64| {
            gam.exp2() * ln_gamma_ratio(x + 1.0, -gam).exp() * self.g_real(x / 2.0) / (x / 2.0 - s)
        };
        let ns = head as f64;
        let rho = last / model(ns);
        let tail = integrate_to_infinity(
            |x| model(x) * (1.0 + (rho - 1.0) * ns / x),
            ns + 0.5,
            gam,
            TAIL_REL_TOL,
        )?;
        acc.add(tail);
        Ok(acc.value())
    }
}

/// E₀(σ) = Γ(1−σ₀)/σ − Σ_{m≥1} Γ(m+1−σ₀)/(m!(m−σ)).
pub fn e0_series(sigma: f64, sigma0: f64) -> Result<f64> {
    let ls = LimitSeries::new(sigma0, sigma)?;
    Ok(ls.i() / sigma - ls.iii()?)
}

/// E₀′(σ) = −Γ(1−σ₀)/σ² − Σ_{m≥1} Γ(m+1−σ₀)/(m!(m−σ)²).
pub fn e0_series_derivative(sigma: f64, sigma0: f64) -> Result<f64> {
    let ls = LimitSeries::new(sigma0, sigma)?;
    Ok(-ls.i() / (sigma * sigma) - ls.iv()?)
}

/// Σ_{m≥1} Γ(m−γ)/m!, which equals Γ(1−γ)/γ.
pub fn gamma_ratio_series(gamma: f64) -> Result<f64> {
    LimitSeries::new(gamma, gamma)?.iii()
}

/// τ₂² = −E₀′(σ₀).
pub fn tau2_sq(sigma0: f64) -> Result<f64> {
    let t = -e0_series_derivative(sigma0, sigma0)?;
    if !(t > 0.0) {
        return Err(Error::Numerical(format!("tau2^2 = {t} is not positive")));
    }
    Ok(t)
}

/// The four components of τ₁² = (ii)/σ₀² + (v) − (vi) − (2/σ₀)(vii), all at σ = σ₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau1Components {
    pub indicator: f64,
    pub g_squared: f64,
    pub double_series: f64,
    pub cross: f64,
}

impl Tau1Components {
    pub fn total(&self) -> f64 {
        self.indicator + self.g_squared - self.double_series - self.cross
    }
}

pub fn tau1_components(sigma0: f64) -> Result<Tau1Components> {
    let ls = LimitSeries::new(sigma0, sigma0)?;
    Ok(Tau1Components {
        indicator: ls.ii() / (sigma0 * sigma0),
        g_squared: ls.v()?,
        double_series: ls.vi()?,
        cross: 2.0 * ls.vii() / sigma0,
    })
}

pub fn tau1_sq(sigma0: f64) -> Result<f64> {
    let t = tau1_components(sigma0)?.total();
    if !(t > 0.0) {
        return Err(Error::Numerical(format!(
            "tau1^2 = {t} is not positive; the series evaluation is broken"
        )));
    }
    Ok(t)
}

/// c₀ = Γ(1−σ₀)(1+σ₀)/(σ₀ τ₂²).
pub fn c0(sigma0: f64, tau2_sq: f64) -> f64 {
    ln_gamma(1.0 - sigma0).exp() * (1.0 + sigma0) / (sigma0 * tau2_sq)
}

/// Per-atom pieces of the centering function at one Poisson mean λ:
/// [(1−e^{−λ})/σ − E g(X), its σ-derivative].
fn e0n_atom(lambda: f64, sigma: f64, table: &GTable) -> [f64; 2] {
    let hit = -(-lambda).exp_m1();
    let [eg, edg] = poisson_expectations(lambda, |m| [table.g(m), table.dg(m)]);
    [hit / sigma - eg, -hit / (sigma * sigma) - edg]
}

fn gtable_for(pop: &Population, n: f64, sigma: f64) -> Result<GTable> {
    let lam_max = n * pop.p(1);
    let m_max = (lam_max + 12.0 * lam_max.sqrt() + 64.0).min(5e7);
    GTable::new(sigma, m_max as u64)
}

/// E₀,ₙ(σ) and its σ-derivative.
///
/// E₀,ₙ(σ) = ∫₀ⁿ α₀(n/s)[e^{−s}/σ − T(s,σ)] ds. Because α₀(n/s) counts the atoms
/// with n p_j ≥ s, the integral splits atom by atom into
/// Σ_j [(1−e^{−λ_j})/σ − E g_σ(Poisson(λ_j))] with λ_j = n p_j, which is summed
/// exactly (with the midpoint-rule continuation for far-tail atoms).
pub fn e0n_with_derivative(pop: &Population, n: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("sigma must lie in (0,1), got {sigma}"));
    }
    if !(n > 0.0) {
        return domain("n must be positive");
    }
    let table = gtable_for(pop, n, sigma)?;
    let [v, d] = pop.atom_sums(n, |lam| e0n_atom(lam, sigma, &table))?;
    Ok((v, d))
}

pub fn e0n(pop: &Population, n: f64, sigma: f64) -> Result<f64> {
    e0n_with_derivative(pop, n, sigma).map(|x| x.0)
}

/// E₀,ₙ by direct quadrature of its integral form, panel by panel between the
/// jumps of α₀(n/s). Finite populations only; used to cross-check [`e0n`].
pub fn e0n_quadrature(pop: &Population, n: f64, sigma: f64) -> Result<f64> {
    let atoms = pop
        .finite_atoms()
        .ok_or_else(|| Error::Unsupported("quadrature form needs a finite population".into()))?;
    let tol = SeriesTolerance::default();
    let opts = QuadOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-14,
        ..QuadOptions::default()
    };
    let h = |s: f64| {
        (-s).exp() / sigma - poisson_weighted_reciprocal(s, sigma, tol).unwrap_or(f64::NAN)
    };
    // jumps s_j = n p_j, descending; α₀(n/s) = j on (s_{j+1}, s_j]
    let mut edges: Vec<f64> = (1..=atoms as u64).map(|j| n * pop.p(j)).collect();
    edges.push(0.0);
    let mut acc = KahanSum::new();
    for j in 1..=atoms {
        let (a, b) = (edges[j], edges[j - 1]);
        if b > a {
            acc.add(j as f64 * integrate(h, a, b, &opts)?.value);
        }
    }
    Ok(acc.value())
}

/// σ₀,ₙ: the zero of E₀,ₙ, by bisection on [0.01, 0.99] to 1e-8.
pub fn sigma0n_root(pop: &Population, n: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return domain("sigma0n_root needs n >= 2");
    }
    bisect(|s| e0n(pop, n, s), 0.01, 0.99, 1e-8)
}

/// An extended real number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExtReal {
    Finite(f64),
    PosInf,
    NegInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionLimit {
    pub k0: ExtReal,
    pub m0: f64,
    /// True when M₀ sits at 0 or at M̄.
    pub at_boundary: bool,
}

/// f(M) = (M/σ₀)(K₀ + ln Γ(1−σ₀)) + ln Γ(1+M) − ln Γ(1+M/σ₀), the limiting
/// profile whose maximizer is M₀ when K₀ is finite.
pub fn precision_objective(m: f64, sigma0: f64, k0: f64) -> f64 {
    (m / sigma0) * (k0 + ln_gamma(1.0 - sigma0)) + ln_gamma(1.0 + m) - ln_gamma(1.0 + m / sigma0)
}

/// K₀ from the slowly varying factor and the resulting limit M₀ on [0, M̄].
///
/// K₀ = lim [c₀ L₀′(n) n log n / L₀(n) + log L₀(n)]. For constant L₀ this is
/// log L₀; for L₀ = scale·(log u + shift)^r the log L₀ term diverges with the
/// sign of r. K₀ = +∞ sends M₀ to M̄ and K₀ = −∞ sends it to 0.
pub fn precision_limit(
    sigma0: f64,
    l0: &SlowVariation,
    m_max: f64,
    tau2_sq: f64,
) -> Result<PrecisionLimit> {
    if !(sigma0 > 0.0 && sigma0 < 1.0) {
        return domain(format!("sigma0 must lie in (0,1), got {sigma0}"));
    }
    if !(m_max > 0.0) || !m_max.is_finite() {
        return domain("M_max must be positive and finite");
    }
    if !(tau2_sq > 0.0) {
        return domain("tau2^2 must be positive");
    }
    let k0 = match *l0 {
        SlowVariation::Constant { value } => ExtReal::Finite(value.ln()),
        SlowVariation::LogPower { r, scale, .. } => {
            if r > 0.0 {
                ExtReal::PosInf
            } else if r < 0.0 {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(scale.ln())
            }
        }
    };
    let (m0, at_boundary) = match k0 {
        ExtReal::PosInf => (m_max, true),
        ExtReal::NegInf => (0.0, true),
        ExtReal::Finite(k) => {
            let f = |m: f64| precision_objective(m, sigma0, k);
            let (mi, fi) = golden_section_max(f, 0.0, m_max, 1e-9 * m_max.max(1.0));
            let (f0, f1) = (f(0.0), f(m_max));
            if f0 >= fi && f0 >= f1 {
                (0.0, true)
            } else if f1 > fi {
                (m_max, true)
            } else {
                (mi, false)
            }
        }
    };
    Ok(PrecisionLimit {
        k0,
        m0,
        at_boundary,
    })
}

/// The asymptotic constants of a population at sample size n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    pub sigma0: f64,
    pub sigma0n: f64,
    pub n: f64,
    pub alpha_n: f64,
    pub tau1_sq: f64,
    pub tau2_sq: f64,
    pub c0: f64,
    #[serde(rename = "K0")]
    pub k0: ExtReal,
    #[serde(rename = "M0")]
    pub m0: f64,
    pub m0_at_boundary: bool,
    #[serde(rename = "M_max")]
    pub m_max: f64,
}

impl AsymptoticConstants {
    pub fn compute(pop: &Population, n: f64, m_max: f64) -> Result<Self> {
        let rv = pop.regular_variation().ok_or_else(|| {
            Error::Unsupported("population has no regular-variation descriptor".into())
        })?;
        let sigma0 = rv.sigma0;
        let t2 = tau2_sq(sigma0)?;
        let t1 = tau1_sq(sigma0)?;
        Self::with_series(pop, n, m_max, t1, t2)
    }

    /// As [`compute`](Self::compute) with τ₁², τ₂² supplied (they depend on σ₀ only).
    pub fn with_series(
        pop: &Population,
        n: f64,
        m_max: f64,
        tau1_sq: f64,
        tau2_sq: f64,
    ) -> Result<Self> {
        let rv = pop.regular_variation().ok_or_else(|| {
            Error::Unsupported("population has no regular-variation descriptor".into())
        })?;
        let sigma0 = rv.sigma0;
        let pl = precision_limit(sigma0, &rv.l0, m_max, tau2_sq)?;
        Ok(Self {
            sigma0,
            sigma0n: sigma0n_root(pop, n)?,
            n,
            alpha_n: pop.alpha0(n) as f64,
            tau1_sq,
            tau2_sq,
            c0: c0(sigma0, tau2_sq),
            k0: pl.k0,
            m0: pl.m0,
            m0_at_boundary: pl.at_boundary,
            m_max,
        })
    }

    /// Standard deviation of the limiting law of √α₀(n)(σ̂ − σ₀,ₙ).
    pub fn sandwich_sd(&self) -> f64 {
        self.tau1_sq.sqrt() / self.tau2_sq
    }
}

/// Left sides of the eight occupancy limits, each divided by α₀(n), computed as
/// exact Poisson expectations summed over atoms:
/// E1{X≥1}, var 1{X≥1}, E g, E ∂g, E g², (E g)², e^{−λ} E g, E g³.
pub fn occupancy_sums(pop: &Population, n: f64, sigma: f64) -> Result<[f64; 8]> {
    let table = gtable_for(pop, n, sigma)?;
    let sums = pop.atom_sums(n, |lam| {
        let e = (-lam).exp();
        let hit = -(-lam).exp_m1();
        let [g, dg, g2, g3] = poisson_expectations(lam, |m| {
            let v = table.g(m);
            [v, table.dg(m), v * v, v * v * v]
        });
        [hit, e * hit, g, dg, g2, g * g, e * g, g3]
    })?;
    let a = pop.alpha0(n) as f64;
    if a == 0.0 {
        return domain("alpha0(n) is zero; n is too small for this population");
    }
    Ok(sums.map(|s| s / a))
}

/// Right sides of the eight occupancy limits at (γ, σ).
pub fn occupancy_limits(gamma: f64, sigma: f64) -> Result<[f64; 8]> {
    let ls = LimitSeries::new(gamma, sigma)?;
    Ok([
        ls.i(),
        ls.ii(),
        ls.iii()?,
        ls.iv()?,
        ls.v()?,
        ls.vi()?,
        ls.vii(),
        ls.viii()?,
    ])
}
