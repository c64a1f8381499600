//! The sufficient statistic of a sample: size, number of blocks, block sizes and
//! occupancy counts.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::OccupancyCounts;

/// (n, K, block sizes, occupancy counts) of a sample.
///
/// Block sizes are kept in descending order so equal samples serialize
/// identically. `z[l-1]` holds Z_l, the number of blocks of size at least l.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawStats", into = "RawStats")]
pub struct PartitionStats {
    n: u64,
    k: u64,
    sizes: Vec<u64>,
    z: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStats {
    n: u64,
    #[serde(rename = "K")]
    k: u64,
    #[serde(rename = "N")]
    sizes: Vec<u64>,
    #[serde(rename = "Z")]
    z: Vec<u64>,
}

impl From<PartitionStats> for RawStats {
    fn from(s: PartitionStats) -> Self {
        RawStats {
            n: s.n,
            k: s.k,
            sizes: s.sizes,
            z: s.z,
        }
    }
}

impl TryFrom<RawStats> for PartitionStats {
    type Error = Error;

    fn try_from(raw: RawStats) -> Result<Self> {
        let stats = PartitionStats::from_block_sizes(raw.sizes)?;
        if stats.n != raw.n || stats.k != raw.k || stats.z != raw.z {
            return Err(Error::Parse(
                "stats fields n, K and Z are inconsistent with the block sizes N".into(),
            ));
        }
        Ok(stats)
    }
}

/// A maximal range of l (inclusive) over which Z_{l+1} takes the constant value `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZRun {
    pub from: u64,
    pub to: u64,
    pub z: u64,
}

impl PartitionStats {
    /// Builds the statistic from block sizes; zero sizes are dropped.
    pub fn from_block_sizes<I: IntoIterator<Item = u64>>(sizes: I) -> Result<Self> {
        let mut sizes: Vec<u64> = sizes.into_iter().filter(|&s| s > 0).collect();
        if sizes.is_empty() {
            return Err(Error::Empty(
                "a partition needs at least one observation".into(),
            ));
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let n = sizes.iter().sum();
        let k = sizes.len() as u64;
        let max = sizes[0] as usize;
        let mut z = vec![0u64; max];
        // sizes are descending, so block j contributes to Z_1..Z_{N_j}
        let mut j = 0usize;
        for l in (1..=max).rev() {
            while j < sizes.len() && sizes[j] as usize >= l {
                j += 1;
            }
            z[l - 1] = j as u64;
        }
        Ok(Self { n, k, sizes, z })
    }

    /// Blocks are the classes of exactly equal labels.
    pub fn from_observations<L: AsRef<[u8]>>(labels: &[L]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("no observations".into()));
        }
        let mut counts: HashMap<&[u8], u64> = HashMap::new();
        for l in labels {
            *counts.entry(l.as_ref()).or_insert(0) += 1;
        }
        Self::from_block_sizes(counts.into_values())
    }

    pub fn from_occupancy(counts: &OccupancyCounts) -> Result<Self> {
        let s = Self::from_block_sizes(counts.counts.values().copied());
        s.map_err(|_| Error::Empty("all occupancy counts are zero".into()))
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Block sizes, descending.
    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// Z_1, Z_2, ... up to the largest block size.
    pub fn z(&self) -> &[u64] {
        &self.z
    }

    /// Z_l, zero beyond the largest block.
    pub fn z_at(&self, l: u64) -> u64 {
        if l == 0 {
            return self.k;
        }
        self.z.get(l as usize - 1).copied().unwrap_or(0)
    }

    pub fn has_ties(&self) -> bool {
        self.k < self.n
    }

    pub fn singletons(&self) -> u64 {
        self.z_at(1) - self.z_at(2)
    }

    /// Runs of constant Z_{l+1} for l = 1..n-1, skipping zeros, in increasing l.
    pub fn z_runs(&self) -> Vec<ZRun> {
        let mut distinct: Vec<(u64, u64)> = Vec::new(); // (size, #blocks with size >= it)
        let mut count = 0u64;
        for &s in &self.sizes {
            count += 1;
            match distinct.last_mut() {
                Some((d, c)) if *d == s => *c = count,
                _ => distinct.push((s, count)),
            }
        }
        let mut runs = Vec::with_capacity(distinct.len());
        for i in (0..distinct.len()).rev() {
            let (d, c) = distinct[i];
            let lower = if i + 1 < distinct.len() {
                distinct[i + 1].0
            } else {
                1
            };
            if d > lower || (i + 1 == distinct.len() && d > 1) {
                let from = lower.max(1);
                let to = d - 1;
                if to >= from {
                    runs.push(ZRun { from, to, z: c });
                }
            }
        }
        runs
    }

    /// One label per observation: block j repeated N_j times.
    pub fn expand(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.n as usize);
        for (j, &s) in self.sizes.iter().enumerate() {
            out.extend(std::iter::repeat_n(j as u64, s as usize));
        }
        out
    }

    /// The same sample with one additional observation of a new species.
    pub fn with_new_singleton(&self) -> Self {
        let mut sizes = self.sizes.clone();
        sizes.push(1);
        Self::from_block_sizes(sizes).expect("nonempty")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// All set partitions of {0..n-1} as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut rgs = vec![0u32; n];
    fn rec(i: usize, max: u32, rgs: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == rgs.len() {
            out.push(rgs.clone());
            return;
        }
        for b in 0..=max + 1 {
            rgs[i] = b;
            rec(i + 1, max.max(b), rgs, out);
        }
    }
    rec(1, 0, &mut rgs, &mut out);
    out
}

/// Block sizes of a restricted growth string.
pub fn rgs_block_sizes(rgs: &[u32]) -> Vec<u64> {
    let k = rgs.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut sizes = vec![0u64; k];
    for &b in rgs {
        sizes[b as usize] += 1;
    }
    sizes
}

/// Reads a sample CSV with a single `species` column.
pub fn read_sample_csv<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "species")
        .ok_or_else(|| Error::Parse("sample CSV needs a `species` header".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let v = rec
            .get(col)
            .ok_or_else(|| Error::Parse(format!("row {} has no species field", out.len() + 1)))?;
        out.push(v.to_string());
    }
    Ok(out)
}

/// Reads an occupancy CSV with columns `species,count`.
pub fn read_occupancy_csv<R: Read>(reader: R) -> Result<Vec<(String, u64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("occupancy CSV needs a `{name}` header")))
    };
    let (sc, cc) = (find("species")?, find("count")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let species = rec.get(sc).unwrap_or_default().to_string();
        let count = rec
            .get(cc)
            .unwrap_or_default()
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("row {}: bad count: {e}", i + 1)))?;
        out.push((species, count));
    }
    Ok(out)
}

pub fn write_sample_csv<W: Write, L: AsRef<str>>(writer: W, labels: &[L]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["species"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for l in labels {
        w.write_record([l.as_ref()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_occupancy_csv<W: Write>(writer: W, rows: &[(String, u64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["species", "count"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for (s, c) in rows {
        w.write_record([s.as_str(), &c.to_string()])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Regime;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn observation_examples() {
        let s = PartitionStats::from_observations(&["a"]).unwrap();
        assert_eq!(
            (s.n(), s.k(), s.sizes(), s.z()),
            (1, 1, &[1u64][..], &[1u64][..])
        );
        let s = PartitionStats::from_observations(&["a", "b", "a"]).unwrap();
        assert_eq!(
            (s.n(), s.k(), s.sizes(), s.z()),
            (3, 2, &[2u64, 1][..], &[2u64, 1][..])
        );
        let s = PartitionStats::from_observations(&["a", "a", "a"]).unwrap();
        assert_eq!(
            (s.n(), s.k(), s.sizes(), s.z()),
            (3, 1, &[3u64][..], &[1u64, 1, 1][..])
        );
        let empty: [&str; 0] = [];
        assert!(PartitionStats::from_observations(&empty).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let mut counts = BTreeMap::new();
        counts.insert(7u64, 2u64);
        counts.insert(9, 1);
        counts.insert(11, 0);
        let occ = OccupancyCounts {
            counts,
            regime: Regime::Multinomial { n: 3 },
        };
        let s = PartitionStats::from_occupancy(&occ).unwrap();
        assert_eq!((s.n(), s.k(), s.sizes()), (3, 2, &[2u64, 1][..]));
        assert_eq!(
            s,
            PartitionStats::from_observations(&["x", "x", "y"]).unwrap()
        );

        let zero = OccupancyCounts {
            counts: [(1u64, 0u64)].into_iter().collect(),
            regime: Regime::Poissonized { n: 0.0 },
        };
        assert!(PartitionStats::from_occupancy(&zero).is_err());
    }

    #[test]
    fn runs_cover_nonzero_occupancy() {
        let s = PartitionStats::from_block_sizes([5, 3, 3, 1, 1]).unwrap();
        let runs = s.z_runs();
        for l in 1..s.n() {
            let z = s.z_at(l + 1);
            let hit: Vec<_> = runs.iter().filter(|r| r.from <= l && l <= r.to).collect();
            if z == 0 {
                assert!(hit.is_empty());
            } else {
                assert_eq!(hit.len(), 1);
                assert_eq!(hit[0].z, z);
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = PartitionStats::from_block_sizes([4, 1, 2]).unwrap();
        let js = s.to_json();
        assert_eq!(js, r#"{"n":7,"K":3,"N":[4,2,1],"Z":[3,2,1,1]}"#);
        let back: PartitionStats = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<PartitionStats>(
            r#"{"n":8,"K":3,"N":[4,2,1],"Z":[3,2,1,1]}"#
        )
        .is_err());
    }

    #[test]
    fn bell_numbers() {
        let bell = [1usize, 2, 5, 15, 52, 203, 877, 4140];
        for (i, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(i + 1).len(), b);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &["a", "b", "a"]).unwrap();
        let labels = read_sample_csv(buf.as_slice()).unwrap();
        assert_eq!(labels, vec!["a", "b", "a"]);
        assert!(read_sample_csv("name\nx\n".as_bytes()).is_err());
        let occ = read_occupancy_csv("species,count\nx,2\ny,0\nz,5\n".as_bytes()).unwrap();
        assert_eq!(occ, vec![("x".into(), 2), ("y".into(), 0), ("z".into(), 5)]);
        assert!(read_occupancy_csv("species,count\nx,-1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn invariants_hold(sizes in proptest::collection::vec(1u64..40, 1..30)) {
            let s = PartitionStats::from_block_sizes(sizes.clone()).unwrap();
            prop_assert_eq!(s.n(), sizes.iter().sum::<u64>());
            prop_assert_eq!(s.z()[0], s.k());
            prop_assert!(s.z().windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(s.z().iter().sum::<u64>(), s.n());
            let weighted: u64 = (1..=s.z().len() as u64).map(|l| l * (s.z_at(l) - s.z_at(l + 1))).sum();
            prop_assert_eq!(weighted, s.n());
        }

        #[test]
        fn round_trip_through_labels(sizes in proptest::collection::vec(1u64..20, 1..20)) {
            let s = PartitionStats::from_block_sizes(sizes).unwrap();
            let labels: Vec<String> = s.expand().iter().map(|j| j.to_string()).collect();
            prop_assert_eq!(PartitionStats::from_observations(&labels).unwrap(), s);
        }

        #[test]
        fn order_invariant(mut labels in proptest::collection::vec(0u8..12, 1..60), seed in 0u64..1000) {
            let a = PartitionStats::from_observations(&labels.iter().map(|b| [*b]).collect::<Vec<_>>()).unwrap();
            // deterministic shuffle
            let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..labels.len()).rev() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                labels.swap(i, (x >> 33) as usize % (i + 1));
            }
            let b = PartitionStats::from_observations(&labels.iter().map(|b| [*b]).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
