//! True sampling distributions P₀, their counting function α₀ and regular
//! variation descriptors.
//!
//! Analytic families keep the first 2^20 atoms in memory with cumulative sums.
//! Atoms beyond that are handled through the continuous extension p(x) of the
//! atom probabilities: geometric segments with integrated masses for sampling,
//! and a midpoint-rule integral for sums over atoms.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::numerics::{integrate, KahanSum, QuadOptions};

/// Number of atoms materialized for the analytic families.
pub const HEAD_ATOMS: usize = 1 << 20;

const ATOM_SUM_CHUNK: usize = 1 << 14;

/// Serializable description of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// p_j ∝ j^{-alpha}
    PowerLaw { alpha: f64 },
    /// 1/p_j ∝ the inverse of u ↦ u^gamma (log(e u))^r, evaluated at j
    Synthetic { gamma: f64, r: f64 },
    /// A finite list of probabilities
    Explicit { probs: Vec<f64> },
}

/// The slowly varying factor L₀ in α₀(u) ≈ u^{σ₀} L₀(u).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SlowVariation {
    Constant {
        value: f64,
    },
    /// L₀(u) = scale · (ln u + shift)^r
    LogPower {
        r: f64,
        scale: f64,
        shift: f64,
    },
}

impl SlowVariation {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            SlowVariation::Constant { value } => value,
            SlowVariation::LogPower { r, scale, shift } => scale * (u.ln() + shift).powf(r),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            SlowVariation::Constant { .. } => 0.0,
            SlowVariation::LogPower { r, scale, shift } => {
                scale * r * (u.ln() + shift).powf(r - 1.0) / u
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularVariation {
    pub sigma0: f64,
    pub l0: SlowVariation,
    pub beta0: f64,
    /// Constant in |α₀(u) − u^{σ₀}L₀(u)| ≤ C u^{β₀}.
    pub c: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: u64,
    b: u64,
    p_a: f64,
}

#[derive(Debug, Clone)]
struct Tail {
    mass: f64,
    segments: Vec<Segment>,
    seg_cdf: Vec<f64>,
    unrepresented: f64,
}

#[derive(Debug, Clone)]
enum Family {
    PowerLaw {
        alpha: f64,
        c: f64,
    },
    Synthetic {
        gamma: f64,
        r: f64,
        w_min: f64,
        z: f64,
    },
    Explicit,
}

/// A discrete distribution with nonincreasing atom probabilities p_1 ≥ p_2 ≥ ...
#[derive(Debug, Clone)]
pub struct Population {
    spec: PopulationSpec,
    family: Family,
    rv: Option<RegularVariation>,
    head: Vec<f64>,
    head_cdf: Vec<f64>,
    head_total: f64,
    tail: Option<Tail>,
}

impl Serialize for Population {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Population {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = PopulationSpec::deserialize(d)?;
        Population::from_spec(&spec).map_err(serde::de::Error::custom)
    }
}

fn zeta_tail(alpha: f64, j: f64) -> f64 {
    // Σ_{i>j} i^{-α} by Euler-Maclaurin from j.
    let a = alpha;
    j.powf(1.0 - a) / (a - 1.0) - 0.5 * j.powf(-a) + a * j.powf(-a - 1.0) / 12.0
        - a * (a + 1.0) * (a + 2.0) * j.powf(-a - 3.0) / 720.0
}

/// Solves γ w + r ln(1+w) = target for w on the increasing branch w ≥ w_min.
fn synthetic_w(gamma: f64, r: f64, w_min: f64, target: f64, guess: f64) -> f64 {
    let f = |w: f64| gamma * w + r * (1.0 + w).ln() - target;
    let df = |w: f64| gamma + r / (1.0 + w);
    if f(w_min) >= 0.0 {
        return w_min;
    }
    let mut lo = w_min;
    let mut hi = guess.max(w_min) + 1.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi = 2.0 * hi + 1.0;
    }
    let mut w = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fw = f(w);
        if fw < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let d = df(w);
        let mut next = if d > 0.0 { w - fw / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 1e-15 * (1.0 + w.abs()) || hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            return next;
        }
        w = next;
    }
    w
}

impl Population {
    pub fn from_spec(spec: &PopulationSpec) -> Result<Self> {
        match spec {
            PopulationSpec::PowerLaw { alpha } => Self::power_law(*alpha),
            PopulationSpec::Synthetic { gamma, r } => Self::synthetic(*gamma, *r),
            PopulationSpec::Explicit { probs } => Self::explicit(probs.clone()),
        }
    }

    /// p_j = c / j^α with c = 1/ζ(α).
    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return domain(format!("power law needs alpha > 1, got {alpha}"));
        }
        let unnorm: Vec<f64> = (1..=HEAD_ATOMS).map(|j| (j as f64).powf(-alpha)).collect();
        let mut zeta = KahanSum::new();
        zeta.add(zeta_tail(alpha, HEAD_ATOMS as f64));
        for &v in unnorm.iter().rev() {
            zeta.add(v);
        }
        let c = 1.0 / zeta.value();
        let head: Vec<f64> = unnorm.iter().map(|v| c * v).collect();
        let tail_mass = c * zeta_tail(alpha, HEAD_ATOMS as f64);
        let family = Family::PowerLaw { alpha, c };
        let rv = RegularVariation {
            sigma0: 1.0 / alpha,
            l0: SlowVariation::Constant {
                value: c.powf(1.0 / alpha),
            },
            beta0: 0.0,
            c: 1.0,
        };
        Self::assemble(
            PopulationSpec::PowerLaw { alpha },
            family,
            Some(rv),
            head,
            tail_mass,
        )
    }

    /// Atoms whose counting function tracks u^γ (log(e u))^r, renormalized to sum to one.
    pub fn synthetic(gamma: f64, r: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return domain(format!(
                "synthetic population needs gamma in (0,1), got {gamma}"
            ));
        }
        if !(-2.0..=2.0).contains(&r) {
            return domain(format!("synthetic population needs r in [-2, 2], got {r}"));
        }
        let w_min = (-r / gamma - 1.0).max(0.0);
        let mut w = Vec::with_capacity(HEAD_ATOMS);
        let mut guess = w_min;
        for j in 1..=HEAD_ATOMS {
            let wj = synthetic_w(gamma, r, w_min, (j as f64).ln(), guess);
            w.push(wj);
            guess = wj;
        }
        // Σ_{j>J} e^{-w(j)} ≈ ∫_{J+1/2}^∞ e^{-w(x)} dx, written in w.
        let w_a = synthetic_w(gamma, r, w_min, (HEAD_ATOMS as f64 + 0.5).ln(), guess);
        let unnorm_tail = synthetic_tail_integral(gamma, r, w_a, f64::INFINITY)?;
        let mut z = KahanSum::new();
        z.add(unnorm_tail);
        for &wj in w.iter().rev() {
            z.add((-wj).exp());
        }
        let z = z.value();
        let head: Vec<f64> = w.iter().map(|wj| (-wj).exp() / z).collect();
        let family = Family::Synthetic { gamma, r, w_min, z };
        let rv = RegularVariation {
            sigma0: gamma,
            l0: if r == 0.0 {
                SlowVariation::Constant {
                    value: z.powf(-gamma),
                }
            } else {
                SlowVariation::LogPower {
                    r,
                    scale: z.powf(-gamma),
                    shift: 1.0 - z.ln(),
                }
            },
            beta0: 0.0,
            c: 1.0,
        };
        Self::assemble(
            PopulationSpec::Synthetic { gamma, r },
            family,
            Some(rv),
            head,
            unnorm_tail / z,
        )
    }

    /// A finite population; probabilities are sorted and renormalized.
    pub fn explicit(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty(
                "explicit population needs at least one atom".into(),
            ));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return domain("explicit population needs positive finite probabilities");
        }
        let spec = PopulationSpec::Explicit {
            probs: probs.clone(),
        };
        probs.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = crate::numerics::kahan_sum(probs.iter().copied());
        let head: Vec<f64> = probs.iter().map(|p| p / total).collect();
        Self::assemble(spec, Family::Explicit, None, head, 0.0)
    }

    fn assemble(
        spec: PopulationSpec,
        family: Family,
        rv: Option<RegularVariation>,
        head: Vec<f64>,
        tail_mass: f64,
    ) -> Result<Self> {
        let mut cdf = Vec::with_capacity(head.len());
        let mut acc = KahanSum::new();
        for &p in &head {
            acc.add(p);
            cdf.push(acc.value());
        }
        let head_total = acc.value();
        let mut pop = Population {
            spec,
            family,
            rv,
            head,
            head_cdf: cdf,
            head_total,
            tail: None,
        };
        if !matches!(pop.family, Family::Explicit) {
            pop.tail = Some(pop.build_tail(tail_mass)?);
        }
        Ok(pop)
    }

    fn build_tail(&self, mass: f64) -> Result<Tail> {
        let mut segments = Vec::new();
        let mut seg_cdf = Vec::new();
        let mut acc = KahanSum::new();
        let mut a = self.head.len() as u64 + 1;
        let cap = 1u64 << 62;
        while a < cap {
            let b = a.saturating_mul(2).min(cap);
            let m = self.tail_integral(a as f64 - 0.5, b as f64 - 0.5)?;
            acc.add(m);
            segments.push(Segment {
                a,
                b,
                p_a: self.p_cont(a as f64),
            });
            seg_cdf.push(acc.value());
            a = b;
        }
        let represented = acc.value();
        Ok(Tail {
            mass,
            segments,
            seg_cdf,
            unrepresented: (mass - represented).max(0.0),
        })
    }

    /// ∫_{x0}^{x1} p(x) dx over the continuous extension of the atoms.
    fn tail_integral(&self, x0: f64, x1: f64) -> Result<f64> {
        match self.family {
            Family::PowerLaw { alpha, c } => {
                let e = 1.0 - alpha;
                let hi = if x1.is_finite() { x1.powf(e) } else { 0.0 };
                Ok(c * (x0.powf(e) - hi) / (alpha - 1.0))
            }
            Family::Synthetic { gamma, r, w_min, z } => {
                let w0 = synthetic_w(gamma, r, w_min, x0.ln(), w_min);
                let w1 = if x1.is_finite() {
                    synthetic_w(gamma, r, w_min, x1.ln(), w0)
                } else {
                    f64::INFINITY
                };
                Ok(synthetic_tail_integral(gamma, r, w0, w1)? / z)
            }
            Family::Explicit => Ok(0.0),
        }
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn regular_variation(&self) -> Option<&RegularVariation> {
        self.rv.as_ref()
    }

    pub fn sigma0(&self) -> Result<f64> {
        self.rv.map(|rv| rv.sigma0).ok_or_else(|| {
            Error::Unsupported("population has no regular-variation descriptor".into())
        })
    }

    /// Normalizing constant: c = 1/ζ(α) for the power law, the sum of the
    /// unnormalized weights for the synthetic family, 1 otherwise.
    pub fn norm_constant(&self) -> f64 {
        match self.family {
            Family::PowerLaw { c, .. } => c,
            Family::Synthetic { z, .. } => z,
            Family::Explicit => 1.0,
        }
    }

    /// Number of atoms, if finite.
    pub fn finite_atoms(&self) -> Option<usize> {
        match self.family {
            Family::Explicit => Some(self.head.len()),
            _ => None,
        }
    }

    pub fn head_len(&self) -> usize {
        self.head.len()
    }

    /// Mass of the atoms past the materialized head.
    pub fn tail_mass(&self) -> f64 {
        self.tail.as_ref().map_or(0.0, |t| t.mass)
    }

    /// Tail mass beyond index 2^62, which the sampler cannot reach.
    pub fn unrepresented_mass(&self) -> f64 {
        self.tail.as_ref().map_or(0.0, |t| t.unrepresented)
    }

    /// Total mass, head plus analytic tail.
    pub fn total_mass(&self) -> f64 {
        self.head_total + self.tail_mass()
    }

    /// p_j for j ≥ 1 (0 past the end of a finite population).
    pub fn p(&self, j: u64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        if let Some(p) = self.head.get(j as usize - 1) {
            return *p;
        }
        match self.family {
            Family::Explicit => 0.0,
            _ => self.p_cont(j as f64),
        }
    }

    /// Continuous extension p(x), x ≥ 1.
    fn p_cont(&self, x: f64) -> f64 {
        match self.family {
            Family::PowerLaw { alpha, c } => c * x.powf(-alpha),
            Family::Synthetic { gamma, r, w_min, z } => {
                (-synthetic_w(gamma, r, w_min, x.ln(), w_min)).exp() / z
            }
            Family::Explicit => 0.0,
        }
    }

    /// α₀(u) = #{j : p_j ≥ 1/u}.
    pub fn alpha0(&self, u: f64) -> u64 {
        if !(u > 0.0) {
            return 0;
        }
        let ok = |j: u64| j >= 1 && self.p(j) * u >= 1.0;
        let guess = match self.family {
            Family::PowerLaw { alpha, c } => (c * u).powf(1.0 / alpha).floor(),
            Family::Synthetic { gamma, r, w_min, z } => {
                let lv = (u / z).ln();
                if lv < w_min {
                    0.0
                } else {
                    (gamma * lv + r * (1.0 + lv).ln()).exp().floor()
                }
            }
            Family::Explicit => {
                return self.head.partition_point(|p| p * u >= 1.0) as u64;
            }
        };
        let mut k = if guess.is_finite() {
            guess.min(9.0e18) as u64
        } else {
            0
        };
        while k >= 1 && !ok(k) {
            k -= 1;
        }
        while ok(k + 1) {
            k += 1;
        }
        k
    }

    /// Σ_j f(n p_j) for K functions at once.
    ///
    /// Head atoms are summed exactly, in fixed chunks folded in index order.
    /// Once n p_j falls below 1e-6 (and at least 1000 atoms have been summed
    /// exactly), the remaining atoms are replaced by ∫_{j-1/2}^∞ f(n p(x)) dx.
    pub fn atom_sums<const K: usize, F>(&self, n: f64, f: F) -> Result<[f64; K]>
    where
        F: Fn(f64) -> [f64; K] + Sync,
    {
        let cut = 1e-6 / n;
        let exact_end = match self.family {
            Family::Explicit => self.head.len(),
            _ => {
                let below = self.head.partition_point(|&p| p >= cut);
                below.max(1000).min(self.head.len())
            }
        };
        let partials: Vec<[f64; K]> = self.head[..exact_end]
            .par_chunks(ATOM_SUM_CHUNK)
            .map(|chunk| {
                let mut acc = [KahanSum::new(); K];
                for &p in chunk {
                    let v = f(n * p);
                    for i in 0..K {
                        acc[i].add(v[i]);
                    }
                }
                acc.map(|a| a.value())
            })
            .collect();
        let mut total = [KahanSum::new(); K];
        for part in &partials {
            for i in 0..K {
                total[i].add(part[i]);
            }
        }
        if !matches!(self.family, Family::Explicit) {
            let x0 = exact_end as f64 + 0.5;
            let tail = self.continuous_atom_integral(n, x0, &f)?;
            for i in 0..K {
                total[i].add(tail[i]);
            }
        }
        Ok(total.map(|t| t.value()))
    }

    fn continuous_atom_integral<const K: usize, F>(
        &self,
        n: f64,
        x0: f64,
        f: &F,
    ) -> Result<[f64; K]>
    where
        F: Fn(f64) -> [f64; K],
    {
        let sigma0 = self.sigma0()?;
        // In t = ln x the integrand decays at least like e^{-(1/σ₀ - 1) t}.
        let decay = 1.0 / sigma0 - 1.0;
        let t0 = x0.ln();
        let t1 = (t0 + 80.0 / decay + 20.0).min(43.0); // 2^62 ≈ e^43
        let mut out = [0.0; K];
        if t1 <= t0 {
            return Ok(out);
        }
        let opts = QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_panels: 4000,
            left_levels: 0,
        };
        for (i, slot) in out.iter_mut().enumerate() {
            let q = integrate(
                |t: f64| {
                    let x = t.exp();
                    f(n * self.p_cont(x))[i] * x
                },
                t0,
                t1,
                &opts,
            );
            *slot = match q {
                Ok(q) => q.value,
                Err(Error::NonConvergence {
                    estimate,
                    error_bound,
                }) if error_bound <= 1e-12 * (1.0 + estimate.abs()) => estimate,
                Err(e) => return Err(e),
            };
        }
        Ok(out)
    }

    /// Cumulative probability of atoms 1..=j, for j within the head.
    fn cdf_head(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.head_cdf[j.min(self.head_cdf.len()) - 1]
        }
    }

    /// Mass of atoms with index > j (j within the head).
    pub fn mass_beyond(&self, j: usize) -> f64 {
        (self.head_total - self.cdf_head(j)).max(0.0) + self.tail_mass()
    }

    /// Draws an atom index from P₀ conditioned on index > j0 (j0 within the head).
    pub fn draw_beyond<R: Rng + ?Sized>(&self, j0: usize, rng: &mut R) -> u64 {
        let j0 = j0.min(self.head.len());
        let base = self.cdf_head(j0);
        let rem_head = (self.head_total - base).max(0.0);
        let tail_mass = self
            .tail
            .as_ref()
            .map_or(0.0, |t| *t.seg_cdf.last().unwrap_or(&0.0));
        let total = rem_head + tail_mass;
        let u: f64 = rng.random::<f64>() * total;
        if u < rem_head || tail_mass == 0.0 {
            let target = base + u;
            let idx = self.head_cdf[j0..].partition_point(|&c| c < target) + j0;
            return idx.min(self.head.len() - 1) as u64 + 1;
        }
        self.draw_tail(u - rem_head, rng)
    }

    fn draw_tail<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> u64 {
        let tail = self.tail.as_ref().expect("tail present");
        let s = tail
            .seg_cdf
            .partition_point(|&c| c < u)
            .min(tail.segments.len() - 1);
        let seg = tail.segments[s];
        loop {
            let j = rng.random_range(seg.a..seg.b);
            let accept: f64 = rng.random();
            if accept * seg.p_a <= self.p_cont(j as f64) {
                return j;
            }
        }
    }
}

/// ∫_{w0}^{w1} e^{(γ−1)w} (1+w)^{r−1} (γ(1+w) + r) dw, the unnormalized atom
/// mass between indices φ(e^{w0}) and φ(e^{w1}).
fn synthetic_tail_integral(gamma: f64, r: f64, w0: f64, w1: f64) -> Result<f64> {
    let f = |w: f64| ((gamma - 1.0) * w).exp() * (1.0 + w).powf(r - 1.0) * (gamma * (1.0 + w) + r);
    let end = if w1.is_finite() {
        w1
    } else {
        w0 + (80.0 + 4.0 * (1.0 + w0).ln().max(0.0)) / (1.0 - gamma)
    };
    if !(end > w0) {
        return Ok(0.0);
    }
    let opts = QuadOptions {
        rel_tol: 1e-13,
        abs_tol: 0.0,
        max_panels: 4000,
        left_levels: 0,
    };
    let q = integrate(f, w0, end, &opts);
    match q {
        Ok(q) => Ok(q.value),
        Err(Error::NonConvergence {
            estimate,
            error_bound,
        }) if error_bound <= 1e-11 * estimate.abs() => Ok(estimate),
        Err(e) => Err(e),
    }
}
