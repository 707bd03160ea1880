//! k-means visual vocabularies and bag-of-words histograms.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorChannel;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub channel: Option<DescriptorChannel>,
    pub k: usize,
    pub dim: usize,
    /// Row-major k × dim.
    pub centers: Vec<f64>,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        nearest_center(&self.centers, self.dim, v)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let d = x[j] - y[j];
            acc[j] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn nearest_center(centers: &[f64], dim: usize, v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

struct BitsKey<'a>(&'a [f64]);

impl Hash for BitsKey<'_> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for v in self.0 {
            v.to_bits().hash(state);
        }
    }
}

impl PartialEq for BitsKey<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for BitsKey<'_> {}

/// Number of bitwise-distinct rows.
pub fn count_distinct(data: &[f64], dim: usize) -> usize {
    data.chunks_exact(dim).map(BitsKey).collect::<HashSet<_>>().len()
}

fn assign(data: &[f64], dim: usize, centers: &[f64]) -> Vec<(usize, f64)> {
    let n = data.len() / dim;
    crate::par::map_range(n, |i| nearest_center(centers, dim, &data[i * dim..(i + 1) * dim]))
}

fn kmeans_pp(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut d2: Vec<f64> = crate::par::map_range(n, |i| sq_dist(row(i), row(first)));
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        chosen = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // rounding can walk past the end; take the last positive weight
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            unreachable!("fewer distinct rows than k was checked by the caller")
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        let c = centers[start..].to_vec();
        let upd: Vec<f64> = crate::par::map_range(n, |i| sq_dist(row(i), &c));
        for (d, u) in d2.iter_mut().zip(upd) {
            if u < *d {
                *d = u;
            }
        }
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations. `data` is row-major
/// with rows of length `dim`.
pub fn kmeans_fit(data: &[f64], dim: usize, k: usize, seed: u64) -> Result<Codebook> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::Fit(format!(
            "data length {} is not a multiple of dimension {dim}",
            data.len()
        )));
    }
    if k == 0 {
        return Err(Error::Fit("k must be at least 1".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input".into()));
    }
    let n = data.len() / dim;
    let distinct = count_distinct(data, dim);
    if distinct < k {
        return Err(Error::Fit(format!("{distinct} distinct vectors, need at least k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(data, dim, k, &mut rng);
    let mut assignment = assign(data, dim, &centers);
    let mut inertia: f64 = assignment.iter().map(|a| a.1).sum();
    let mut history = vec![inertia];

    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            let dst = &mut sums[c * dim..(c + 1) * dim];
            for (s, v) in dst.iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        // farthest points, used to reseed empty clusters
        let mut far: Vec<usize> = Vec::new();
        if counts.contains(&0) {
            far = (0..n).collect();
            far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
        }
        let mut far = far.into_iter();
        for c in 0..k {
            let dst = &mut centers[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                let p = far.next().expect("more empty clusters than points");
                dst.copy_from_slice(&data[p * dim..(p + 1) * dim]);
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *d = s * inv;
                }
            }
        }
        assignment = assign(data, dim, &centers);
        let next: f64 = assignment.iter().map(|a| a.1).sum();
        history.push(next);
        let improvement = if inertia > 0.0 { (inertia - next) / inertia } else { 0.0 };
        inertia = next;
        if improvement < RELATIVE_TOLERANCE {
            break;
        }
    }

    Ok(Codebook {
        channel: None,
        k,
        dim,
        centers,
        seed,
        inertia,
        inertia_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HistogramScaling {
    /// Divide by the largest bin.
    #[default]
    Max,
    /// Divide by the total count.
    L1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram {
    pub channel: Option<DescriptorChannel>,
    pub counts: Vec<u64>,
    pub values: Vec<f64>,
}

impl BowHistogram {
    pub fn from_counts(counts: Vec<u64>, scaling: HistogramScaling) -> Self {
        let denom = match scaling {
            HistogramScaling::Max => counts.iter().copied().max().unwrap_or(0),
            HistogramScaling::L1 => counts.iter().sum(),
        };
        let values = if denom > 0 {
            counts.iter().map(|&c| c as f64 / denom as f64).collect()
        } else {
            vec![0.0; counts.len()]
        };
        BowHistogram {
            channel: None,
            counts,
            values,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Hard-assigns each descriptor (row-major, rows of codebook.dim) to its
/// nearest center.
pub fn quantize(codebook: &Codebook, descriptors: &[f64], scaling: HistogramScaling) -> Result<BowHistogram> {
    if !descriptors.len().is_multiple_of(codebook.dim) {
        return Err(Error::Domain(format!(
            "descriptor data length {} does not match codebook dimension {}",
            descriptors.len(),
            codebook.dim
        )));
    }
    let mut counts = vec![0u64; codebook.k];
    for row in descriptors.chunks_exact(codebook.dim) {
        counts[codebook.nearest(row).0] += 1;
    }
    let mut h = BowHistogram::from_counts(counts, scaling);
    h.channel = codebook.channel;
    Ok(h)
}
