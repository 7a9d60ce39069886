//! Side-information construction: triplets `(i, j, k)` with `j` a same-class
//! neighbor of anchor `i` and `k` a point from another class.

use std::io::{BufRead, Write};

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::error::{LmlError, Result};
use crate::metric::Triplet;
use crate::scalar::Real;

/// Above this many rows [`enumerate_triplets`] refuses to run.
pub const ENUMERATE_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSet {
    triplets: Vec<Triplet>,
    source_n: usize,
}

impl TripletSet {
    pub fn new(triplets: Vec<Triplet>, source_n: usize) -> Self {
        TripletSet { triplets, source_n }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triplet> {
        self.triplets.iter()
    }

    pub fn as_slice(&self) -> &[Triplet] {
        &self.triplets
    }

    /// Checks index bounds and the class constraint against `data`.
    pub fn validate<T: Real>(&self, data: &LabeledDataset<T>) -> Result<()> {
        if self.source_n != data.len() {
            return Err(LmlError::shape(format!(
                "triplets built for {} rows, dataset has {}",
                self.source_n,
                data.len()
            )));
        }
        let y = data.labels();
        for t in &self.triplets {
            if t.anchor >= self.source_n || t.positive >= self.source_n || t.negative >= self.source_n {
                return Err(LmlError::Index(format!("{t:?} with n={}", self.source_n)));
            }
            if t.anchor == t.positive || y[t.anchor] != y[t.positive] || y[t.anchor] == y[t.negative] {
                return Err(LmlError::config(format!("{t:?} violates the class constraint")));
            }
        }
        Ok(())
    }

    /// Writes the cache format: a `# n=<source_n>` header, then `i j k` lines.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# n={}", self.source_n)?;
        for t in &self.triplets {
            writeln!(out, "{} {} {}", t.anchor, t.positive, t.negative)?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let source_n = header
            .trim()
            .strip_prefix("# n=")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| LmlError::Format(format!("bad triplet cache header `{header}`")))?;
        let mut triplets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| LmlError::Format(format!("triplet line {}: {e}", lineno + 2)))?;
            if idx.len() != 3 {
                return Err(LmlError::Format(format!("triplet line {}: expected 3 indices", lineno + 2)));
            }
            if idx.iter().any(|&i| i >= source_n) {
                return Err(LmlError::Index(format!("triplet line {}: index >= {source_n}", lineno + 2)));
            }
            triplets.push(Triplet::new(idx[0], idx[1], idx[2]));
        }
        Ok(TripletSet { triplets, source_n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub neighbors_per_anchor: usize,
    pub impostors_per_pair: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { neighbors_per_anchor: 3, impostors_per_pair: 10, seed: 0 }
    }
}

fn require_two_classes<T: Real>(data: &LabeledDataset<T>) -> Result<()> {
    if data.classes().len() < 2 {
        return Err(LmlError::config(format!("task `{}`: need >=2 classes to form triplets", data.task_id())));
    }
    Ok(())
}

fn squared_euclidean<T: Real>(data: &LabeledDataset<T>, a: usize, b: usize) -> T {
    data.row(a).iter().zip(data.row(b).iter()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Nearest same-class positives plus uniformly sampled impostors.
///
/// Each anchor takes its `neighbors_per_anchor` Euclidean-nearest classmates
/// (ties to the lower index); each resulting pair draws `impostors_per_pair`
/// distinct other-class points without replacement. Output is ordered by
/// anchor, then neighbor rank, then draw order.
pub fn mine_triplets<T: Real>(data: &LabeledDataset<T>, cfg: &MiningConfig) -> Result<TripletSet> {
    require_two_classes(data)?;
    if cfg.neighbors_per_anchor == 0 || cfg.impostors_per_pair == 0 {
        return Err(LmlError::config("neighbors_per_anchor and impostors_per_pair must be >= 1"));
    }
    let n = data.len();
    let y = data.labels();
    let groups = data.class_members();
    for (label, members) in &groups {
        if members.len() == 1 {
            warn!("task `{}`: class {label} has a single member; no triplets anchored there", data.task_id());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for i in 0..n {
        let mates: Vec<usize> = groups[&y[i]].iter().copied().filter(|&j| j != i).collect();
        if mates.is_empty() {
            continue;
        }
        let mut ranked: Vec<(T, usize)> = mates.iter().map(|&j| (squared_euclidean(data, i, j), j)).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        ranked.truncate(cfg.neighbors_per_anchor);

        let others: Vec<usize> = (0..n).filter(|&k| y[k] != y[i]).collect();
        let draws = cfg.impostors_per_pair.min(others.len());
        for &(_, j) in &ranked {
            for pick in sample(&mut rng, others.len(), draws).iter() {
                out.push(Triplet::new(i, j, others[pick]));
            }
        }
    }
    Ok(TripletSet::new(out, n))
}

/// Every valid triplet, in lexicographic `(i, j, k)` order. Limited to
/// [`ENUMERATE_LIMIT`] rows since the count grows cubically.
pub fn enumerate_triplets<T: Real>(data: &LabeledDataset<T>) -> Result<TripletSet> {
    require_two_classes(data)?;
    let n = data.len();
    if n > ENUMERATE_LIMIT {
        return Err(LmlError::config(format!(
            "full enumeration is limited to {ENUMERATE_LIMIT} rows, dataset has {n}"
        )));
    }
    let y = data.labels();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if j == i || y[j] != y[i] {
                continue;
            }
            for k in 0..n {
                if y[k] != y[i] {
                    out.push(Triplet::new(i, j, k));
                }
            }
        }
    }
    Ok(TripletSet::new(out, n))
}
