//! Random generation: Pitman-Yor partitions through the prediction rule,
//! stick-breaking weights, and samples from a true population.
//!
//! Every sampler takes `&mut R: Rng`; reproducible streams come from
//! [`RngStream`], a ChaCha8 generator keyed by (seed, stream_id).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::kahan_sum;
use crate::partition::PartitionStats;
use crate::population::Population;

/// A (seed, stream) pair naming one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// SplitMix64 finalizer, used to derive child seeds from (seed, tag).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Multinomial { n: u64 },
    Poissonized { n: f64 },
}

/// Species index → number of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCounts {
    pub counts: BTreeMap<u64, u64>,
    pub regime: Regime,
}

impl OccupancyCounts {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Number of species seen at least once.
    pub fn occupied(&self) -> u64 {
        self.counts.values().filter(|&&c| c > 0).count() as u64
    }

    /// (label, count) rows for CSV export.
    pub fn rows(&self) -> Vec<(String, u64)> {
        self.counts
            .iter()
            .map(|(j, c)| (j.to_string(), *c))
            .collect()
    }
}

fn check_py(sigma: f64, m: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("sigma must lie in (0,1), got {sigma}"));
    }
    if !(m >= 0.0) || !m.is_finite() {
        return domain(format!("M must be finite and >= 0, got {m}"));
    }
    Ok(())
}

/// Block labels (0, 1, ... in order of first appearance) of n draws from the
/// Pitman-Yor prediction rule.
///
/// Joining block i has probability (N_i − σ)/(M+k). Since N_i − σ splits as
/// (N_i − 1) + (1 − σ), a join picks a uniformly random non-founding observation
/// with probability (k − K)/(k − Kσ) and a uniformly random block otherwise,
/// which makes every step O(1).
pub fn sample_py_sequence<R: Rng + ?Sized>(
    sigma: f64,
    m: f64,
    n: u64,
    rng: &mut R,
) -> Result<Vec<u32>> {
    check_py(sigma, m)?;
    if n == 0 {
        return domain("n must be positive");
    }
    let mut labels = Vec::with_capacity(n as usize);
    let mut non_founders: Vec<u32> = Vec::new();
    let mut blocks: u32 = 0;
    labels.push(0);
    blocks += 1;
    for k in 1..n {
        let kf = k as f64;
        let kb = blocks as f64;
        let u: f64 = rng.random::<f64>() * (m + kf);
        let label = if u < m + kb * sigma {
            blocks += 1;
            blocks - 1
        } else {
            let joined = kf - kb * sigma;
            let v: f64 = rng.random::<f64>() * joined;
            let l = if v < (kf - kb) {
                non_founders[rng.random_range(0..non_founders.len())]
            } else {
                rng.random_range(0..blocks)
            };
            non_founders.push(l);
            l
        };
        labels.push(label);
    }
    Ok(labels)
}

pub fn sample_py_partition<R: Rng + ?Sized>(
    sigma: f64,
    m: f64,
    n: u64,
    rng: &mut R,
) -> Result<PartitionStats> {
    let labels = sample_py_sequence(sigma, m, n, rng)?;
    let blocks = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut sizes = vec![0u64; blocks];
    for l in labels {
        sizes[l as usize] += 1;
    }
    PartitionStats::from_block_sizes(sizes)
}

/// Prediction probabilities for the next observation: existing blocks in the
/// order of `stats.sizes()`, then a new block.
pub fn ppf_weights(stats: &PartitionStats, sigma: f64, m: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&sigma) {
        return domain(format!("sigma must lie in [0,1), got {sigma}"));
    }
    if !(m >= 0.0) || !(m + sigma > 0.0) {
        return domain(format!("need M >= 0 and M + sigma > 0, got M = {m}"));
    }
    let denom = m + stats.n() as f64;
    let mut w: Vec<f64> = stats
        .sizes()
        .iter()
        .map(|&s| (s as f64 - sigma) / denom)
        .collect();
    w.push((m + stats.k() as f64 * sigma) / denom);
    let total = kahan_sum(w.iter().copied());
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Numerical(format!(
            "prediction weights sum to {total}"
        )));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickBreaking {
    pub weights: Vec<f64>,
    pub residual: f64,
}

fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let x = Gamma::new(a, 1.0).expect("shape > 0").sample(rng);
    let y = Gamma::new(b, 1.0).expect("shape > 0").sample(rng);
    if x + y == 0.0 {
        // both draws underflowed; fall back on the mean
        return a / (a + b);
    }
    x / (x + y)
}

/// W_i = V_i Π_{j<i}(1−V_j) with V_i ~ Beta(1−σ, M+iσ), for i ≤ k_trunc.
pub fn stick_breaking_weights<R: Rng + ?Sized>(
    sigma: f64,
    m: f64,
    k_trunc: usize,
    rng: &mut R,
) -> Result<StickBreaking> {
    if !(0.0..1.0).contains(&sigma) {
        return domain(format!("sigma must lie in [0,1), got {sigma}"));
    }
    if !(m > -sigma) || !m.is_finite() {
        return domain(format!("need M > -sigma, got M = {m}"));
    }
    if k_trunc == 0 {
        return domain("k_trunc must be positive");
    }
    let mut weights = Vec::with_capacity(k_trunc);
    let mut rest = 1.0;
    for i in 1..=k_trunc {
        let v = beta(1.0 - sigma, m + i as f64 * sigma, rng);
        weights.push(v * rest);
        rest *= 1.0 - v;
    }
    Ok(StickBreaking {
        weights,
        residual: rest,
    })
}

/// Number of leading atoms that are drawn directly (those with n p_j ≥ 1).
fn direct_atoms(pop: &Population, n: f64) -> usize {
    (pop.alpha0(n) as usize).min(pop.head_len())
}

/// Multinomial sample of size n from the population.
///
/// Atoms with n p_j ≥ 1 receive conditional binomial counts; the remaining
/// draws are placed one by one by inverse CDF over the rest of the population.
pub fn sample_iid<R: Rng + ?Sized>(pop: &Population, n: u64, rng: &mut R) -> OccupancyCounts {
    let mut counts = BTreeMap::new();
    let split = direct_atoms(pop, n as f64);
    let mut remaining = n;
    for j in 1..=split {
        if remaining == 0 {
            break;
        }
        let rest = pop.mass_beyond(j - 1);
        let q = (pop.p(j as u64) / rest).min(1.0);
        let c = Binomial::new(remaining, q)
            .expect("valid binomial")
            .sample(rng);
        if c > 0 {
            counts.insert(j as u64, c);
        }
        remaining -= c;
    }
    for _ in 0..remaining {
        *counts.entry(pop.draw_beyond(split, rng)).or_insert(0) += 1;
    }
    OccupancyCounts {
        counts,
        regime: Regime::Multinomial { n },
    }
}

/// Independent Poisson(n p_j) counts for every atom.
///
/// Atoms with n p_j ≥ 1 are drawn directly. The total count over the other
/// atoms is Poisson(n · their mass), and given that total the observations are
/// placed by inverse CDF, which reproduces independent Poisson counts exactly.
pub fn sample_poissonized<R: Rng + ?Sized>(
    pop: &Population,
    n: f64,
    rng: &mut R,
) -> OccupancyCounts {
    let mut counts = BTreeMap::new();
    let regime = Regime::Poissonized { n };
    if !(n > 0.0) {
        return OccupancyCounts { counts, regime };
    }
    let split = direct_atoms(pop, n);
    for j in 1..=split {
        let lam = n * pop.p(j as u64);
        let c = Poisson::new(lam).expect("positive rate").sample(rng) as u64;
        if c > 0 {
            counts.insert(j as u64, c);
        }
    }
    let rest = n * pop.mass_beyond(split);
    if rest > 0.0 {
        let total = Poisson::new(rest).expect("positive rate").sample(rng) as u64;
        for _ in 0..total {
            *counts.entry(pop.draw_beyond(split, rng)).or_insert(0) += 1;
        }
    }
    OccupancyCounts { counts, regime }
}

/// The exact law of the partition (as a restricted growth string) produced by
/// n steps of the prediction rule, by enumerating every construction path.
pub fn sequential_law(n: usize, sigma: f64, m: f64) -> Result<Vec<(Vec<u32>, f64)>> {
    check_py(sigma, m)?;
    if n == 0 {
        return domain("n must be positive");
    }
    let mut out = Vec::new();
    let mut rgs = vec![0u32];
    let mut sizes = vec![1u64];
    fn rec(
        n: usize,
        sigma: f64,
        m: f64,
        rgs: &mut Vec<u32>,
        sizes: &mut Vec<u64>,
        prob: f64,
        out: &mut Vec<(Vec<u32>, f64)>,
    ) -> Result<()> {
        if rgs.len() == n {
            out.push((rgs.clone(), prob));
            return Ok(());
        }
        let stats = PartitionStats::from_block_sizes(sizes.iter().copied())?;
        let w = ppf_weights(&stats, sigma, m)?;
        for b in 0..sizes.len() {
            // weights follow the sorted sizes; every block of a given size has the same weight
            let pos = stats
                .sizes()
                .iter()
                .position(|&s| s == sizes[b])
                .expect("size present");
            sizes[b] += 1;
            rgs.push(b as u32);
            rec(n, sigma, m, rgs, sizes, prob * w[pos], out)?;
            rgs.pop();
            sizes[b] -= 1;
        }
        sizes.push(1);
        rgs.push(sizes.len() as u32 - 1);
        rec(n, sigma, m, rgs, sizes, prob * w[w.len() - 1], out)?;
        rgs.pop();
        sizes.pop();
        Ok(())
    }
    rec(n, sigma, m, &mut rgs, &mut sizes, 1.0, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_eppf, PYParams};
    use crate::partition::rgs_block_sizes;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use std::collections::HashMap;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..5)
            .map(|_| RngStream::new(7, 1).rng().random())
            .collect();
        let mut r = RngStream::new(7, 1).rng();
        let b: Vec<u64> = (0..5).map(|_| r.random()).collect();
        assert!(a.iter().all(|x| *x == a[0]));
        assert_eq!(a[0], b[0]);
        let c: u64 = RngStream::new(7, 2).rng().random();
        assert_ne!(a[0], c);
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
    }

    #[test]
    fn first_draw_is_new() {
        let mut rng = RngStream::new(1, 0).rng();
        let s = sample_py_partition(0.5, 1.0, 1, &mut rng).unwrap();
        assert_eq!((s.n(), s.k(), s.sizes()), (1, 1, &[1u64][..]));
        assert!(sample_py_partition(0.5, 1.0, 0, &mut rng).is_err());
        assert!(sample_py_partition(1.0, 1.0, 3, &mut rng).is_err());
    }

    #[test]
    fn exact_law_matches_eppf() {
        for n in 1..=5 {
            for &sigma in &[0.1, 0.5, 0.9] {
                for &m in &[0.0, 1.0, 4.0] {
                    let law = sequential_law(n, sigma, m).unwrap();
                    let total: f64 = law.iter().map(|(_, p)| p).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    for (rgs, prob) in &law {
                        let st = PartitionStats::from_block_sizes(rgs_block_sizes(rgs)).unwrap();
                        let e = log_eppf(&st, PYParams::new(sigma, m).unwrap())
                            .unwrap()
                            .exp();
                        assert!((prob - e).abs() < 1e-12, "{rgs:?}");
                    }
                }
            }
        }
        let law = sequential_law(2, 0.5, 1.0).unwrap();
        let tie = law.iter().find(|(r, _)| r == &vec![0, 0]).unwrap().1;
        assert!((tie - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empirical_partition_frequencies() {
        // n = 4, 2·10^5 draws: every partition within 4 standard errors of its EPPF value.
        let (sigma, m, n, reps) = (0.5, 1.0, 4u64, 200_000usize);
        let mut rng = RngStream::new(11, 0).rng();
        let mut freq: HashMap<Vec<u32>, usize> = HashMap::new();
        for _ in 0..reps {
            let labels = sample_py_sequence(sigma, m, n, &mut rng).unwrap();
            *freq.entry(labels).or_insert(0) += 1;
        }
        for (rgs, prob) in sequential_law(n as usize, sigma, m).unwrap() {
            let f = *freq.get(&rgs).unwrap_or(&0) as f64 / reps as f64;
            let se = (prob * (1.0 - prob) / reps as f64).sqrt();
            assert!((f - prob).abs() < 4.0 * se, "{rgs:?}: {f} vs {prob}");
        }
    }

    #[test]
    fn ppf_examples() {
        let s = PartitionStats::from_block_sizes([1]).unwrap();
        let w = ppf_weights(&s, 0.5, 1.0).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let s = PartitionStats::from_block_sizes([3, 1]).unwrap();
        let w = ppf_weights(&s, 0.0, 2.0).unwrap();
        assert_eq!(w, vec![3.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0]);
        assert!(ppf_weights(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn stick_breaking_means() {
        let mut rng = RngStream::new(5, 0).rng();
        let reps = 100_000;
        let (sigma, m) = (0.5, 1.0);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..reps {
            let sb = stick_breaking_weights(sigma, m, 3, &mut rng).unwrap();
            let total: f64 = sb.weights.iter().sum::<f64>() + sb.residual;
            assert!((total - 1.0).abs() < 1e-12);
            assert!(sb.weights.iter().all(|w| *w >= 0.0));
            s += sb.weights[0];
            s2 += sb.weights[0] * sb.weights[0];
        }
        let mean = s / reps as f64;
        let se = ((s2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - (1.0 - sigma) / (m + 1.0)).abs() < 4.0 * se);

        let mut s = 0.0;
        for _ in 0..reps {
            s += stick_breaking_weights(0.0, 1.0, 1, &mut rng)
                .unwrap()
                .weights[0];
        }
        let se = (1.0f64 / 12.0 / reps as f64).sqrt();
        assert!((s / reps as f64 - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn iid_sampling() {
        let one = Population::explicit(vec![1.0]).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        let c = sample_iid(&one, 50, &mut rng);
        assert_eq!(c.counts, [(1u64, 50u64)].into_iter().collect());

        let pop = Population::explicit(vec![0.5, 0.3, 0.2]).unwrap();
        let reps = 20_000;
        let mut first = 0u64;
        for _ in 0..reps {
            let c = sample_iid(&pop, 10, &mut rng);
            assert_eq!(c.total(), 10);
            first += c.counts.get(&1).copied().unwrap_or(0);
        }
        let mean = first as f64 / reps as f64;
        let se = (10.0 * 0.25f64 / reps as f64).sqrt();
        assert!((mean - 5.0).abs() < 4.0 * se);
    }

    #[test]
    fn poissonized_sampling() {
        let pop = Population::power_law(2.0).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        assert_eq!(sample_poissonized(&pop, 0.0, &mut rng).total(), 0);
        let reps = 400;
        let n = 1e4;
        let totals: Vec<f64> = (0..reps)
            .map(|_| sample_poissonized(&pop, n, &mut rng).total() as f64)
            .collect();
        let mean = totals.iter().sum::<f64>() / reps as f64;
        assert!((mean - n).abs() < 4.0 * (n / reps as f64).sqrt());
    }

    proptest! {
        #[test]
        fn ppf_weights_sum_to_one(sizes in prop::collection::vec(1u64..50, 1..40), sigma in 0.0f64..0.999, m in 0.0f64..20.0) {
            prop_assume!(m + sigma > 0.0);
            let s = PartitionStats::from_block_sizes(sizes).unwrap();
            let w = ppf_weights(&s, sigma, m).unwrap();
            prop_assert_eq!(w.len() as u64, s.k() + 1);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }

        #[test]
        fn partition_sampler_is_deterministic(seed in any::<u64>(), stream in 0u64..1000) {
            let a = sample_py_partition(0.4, 2.0, 300, &mut RngStream::new(seed, stream).rng()).unwrap();
            let b = sample_py_partition(0.4, 2.0, 300, &mut RngStream::new(seed, stream).rng()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
