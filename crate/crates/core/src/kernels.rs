//! χ² distances and extended Gaussian kernels.

use crate::error::{Error, Result};

/// Below this mean distance the corpus is treated as all-identical.
pub const DEGENERATE_MEAN: f64 = 1e-12;

/// Half the sum of (a−b)²/(a+b); bins empty in both contribute nothing.
pub fn chi_square_distance(h1: &[f64], h2: &[f64]) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::Domain(format!(
            "histogram lengths differ: {} vs {}",
            h1.len(),
            h2.len()
        )));
    }
    Ok(chi_square_unchecked(h1, h2))
}

#[inline]
fn chi_square_unchecked(h1: &[f64], h2: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in h1.iter().zip(h2) {
        let s = a + b;
        if s > 0.0 {
            let d = a - b;
            acc += d * d / s;
        }
    }
    0.5 * acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub a: f64,
    pub degenerate: bool,
}

/// Mean χ² distance over unordered pairs i < j.
pub fn mean_pairwise_distance<H: AsRef<[f64]> + Sync>(histograms: &[H]) -> Result<Bandwidth> {
    let n = histograms.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 histograms, got {n}")));
    }
    let len = histograms[0].as_ref().len();
    if let Some(h) = histograms.iter().find(|h| h.as_ref().len() != len) {
        return Err(Error::Domain(format!(
            "histogram lengths differ: {} vs {len}",
            h.as_ref().len()
        )));
    }
    let row_sums = crate::par::map_range(n, |i| {
        (i + 1..n)
            .map(|j| chi_square_unchecked(histograms[i].as_ref(), histograms[j].as_ref()))
            .sum::<f64>()
    });
    let pairs = (n * (n - 1) / 2) as f64;
    let mean = row_sums.iter().sum::<f64>() / pairs;
    if mean < DEGENERATE_MEAN {
        log::warn!("all {n} histograms are identical; using bandwidth 1");
        return Ok(Bandwidth { a: 1.0, degenerate: true });
    }
    Ok(Bandwidth { a: mean, degenerate: false })
}

/// Dense row-major kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Self {
        let mut data = vec![0.0; rows * cols];
        crate::par::fill_rows(&mut data, cols, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(i, j);
            }
        });
        KernelMatrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> KernelMatrix {
        KernelMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    /// Elementwise power; exp(−D/A)^s = exp(−s·D/A).
    pub fn powf(&self, s: f64) -> KernelMatrix {
        if s == 1.0 {
            return self.clone();
        }
        KernelMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.powf(s)).collect(),
        }
    }
}

/// exp(−D(r_i, c_j)/A).
pub fn kernel_matrix<H: AsRef<[f64]> + Sync>(rows: &[H], cols: &[H], a: f64) -> Result<KernelMatrix> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("bandwidth must be positive, got {a}")));
    }
    let len = rows.first().or(cols.first()).map(|h| h.as_ref().len()).unwrap_or(0);
    if rows.iter().chain(cols).any(|h| h.as_ref().len() != len) {
        return Err(Error::Domain("histogram lengths differ".into()));
    }
    Ok(KernelMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        (-chi_square_unchecked(rows[i].as_ref(), cols[j].as_ref()) / a).exp()
    }))
}

/// Square training kernel; symmetric with an exact unit diagonal.
pub fn training_kernel_matrix<H: AsRef<[f64]> + Sync>(hist: &[H], a: f64) -> Result<KernelMatrix> {
    let mut k = kernel_matrix(hist, hist, a)?;
    let n = k.rows;
    for i in 0..n {
        k.data[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = k.data[i * n + j];
            k.data[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Aligned base kernels, one per descriptor channel, with their bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub matrices: Vec<KernelMatrix>,
    pub bandwidths: Vec<f64>,
}

impl KernelSet {
    pub fn new(matrices: Vec<KernelMatrix>, bandwidths: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Domain("kernel set is empty".into()));
        }
        if matrices.len() != bandwidths.len() {
            return Err(Error::Domain(format!(
                "{} matrices but {} bandwidths",
                matrices.len(),
                bandwidths.len()
            )));
        }
        let (r, c) = (matrices[0].rows, matrices[0].cols);
        if let Some(m) = matrices.iter().find(|m| m.rows != r || m.cols != c) {
            return Err(Error::Domain(format!(
                "kernel shapes differ: {}x{} vs {r}x{c}",
                m.rows, m.cols
            )));
        }
        Ok(KernelSet { matrices, bandwidths })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.matrices[0].rows
    }

    pub fn cols(&self) -> usize {
        self.matrices[0].cols
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> KernelSet {
        KernelSet {
            matrices: self.matrices.iter().map(|m| m.select(rows, cols)).collect(),
            bandwidths: self.bandwidths.clone(),
        }
    }

    pub fn subset(&self, channels: &[usize]) -> KernelSet {
        KernelSet {
            matrices: channels.iter().map(|&c| self.matrices[c].clone()).collect(),
            bandwidths: channels.iter().map(|&c| self.bandwidths[c]).collect(),
        }
    }

    pub fn powf(&self, s: f64) -> KernelSet {
        KernelSet {
            matrices: self.matrices.iter().map(|m| m.powf(s)).collect(),
            bandwidths: self.bandwidths.iter().map(|a| a / s).collect(),
        }
    }

    /// Σ_k w_k K_k.
    pub fn combine(&self, weights: &[f64]) -> KernelMatrix {
        let first = &self.matrices[0];
        let mut data = vec![0.0; first.data.len()];
        for (m, &w) in self.matrices.iter().zip(weights) {
            if w != 0.0 {
                for (d, v) in data.iter_mut().zip(&m.data) {
                    *d += w * v;
                }
            }
        }
        KernelMatrix {
            rows: first.rows,
            cols: first.cols,
            data,
        }
    }
}

/// Training kernels for every channel. `per_channel[c][i]` is sample i's
/// histogram in channel c.
pub fn build_kernel_set<H: AsRef<[f64]> + Sync>(
    per_channel: &[Vec<H>],
    bandwidths: &[f64],
) -> Result<KernelSet> {
    if per_channel.len() != bandwidths.len() {
        return Err(Error::Domain(format!(
            "{} channels but {} bandwidths",
            per_channel.len(),
            bandwidths.len()
        )));
    }
    let n = per_channel.first().map(Vec::len).unwrap_or(0);
    if let Some(bad) = per_channel.iter().find(|h| h.len() != n) {
        return Err(Error::Domain(format!(
            "misaligned samples: {} vs {n}",
            bad.len()
        )));
    }
    let matrices = per_channel
        .iter()
        .zip(bandwidths)
        .map(|(h, &a)| training_kernel_matrix(h, a))
        .collect::<Result<Vec<_>>>()?;
    KernelSet::new(matrices, bandwidths.to_vec())
}

/// Test-vs-train kernels reusing the training bandwidths.
pub fn build_cross_kernel_set<H: AsRef<[f64]> + Sync>(
    test: &[Vec<H>],
    train: &[Vec<H>],
    bandwidths: &[f64],
) -> Result<KernelSet> {
    if test.len() != train.len() || test.len() != bandwidths.len() {
        return Err(Error::Domain("channel counts differ".into()));
    }
    let matrices = test
        .iter()
        .zip(train)
        .zip(bandwidths)
        .map(|((t, r), &a)| kernel_matrix(t, r, a))
        .collect::<Result<Vec<_>>>()?;
    KernelSet::new(matrices, bandwidths.to_vec())
}
