//! SMO soft-margin SVM on precomputed kernels, p-norm multiple kernel
//! learning, one-vs-rest multi-class training and grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, KernelSet};

pub const MAX_OUTER_ROUNDS: usize = 50;
pub const BETA_TOLERANCE: f64 = 1e-4;
const SYMMETRY_TOLERANCE: f64 = 1e-9;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kkt_tol: f64,
    pub max_passes: u64,
    /// Multiplies 1/A in every base kernel.
    pub gamma_scale: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 10.0,
            kkt_tol: 1e-3,
            max_passes: 1_000_000,
            gamma_scale: 1.0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::Config(format!("kkt_tol must be positive, got {}", self.kkt_tol)));
        }
        if !(self.gamma_scale > 0.0 && self.gamma_scale.is_finite()) {
            return Err(Error::Config(format!(
                "gamma_scale must be positive, got {}",
                self.gamma_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective Σα − ½αᵀQα.
    pub objective: f64,
    pub support: Vec<usize>,
    pub converged: bool,
    pub iterations: u64,
    /// Largest KKT violation at termination.
    pub violation: f64,
}

impl BinarySolution {
    /// Σ α_i y_i k_i + b for one row of kernel values against the training set.
    pub fn decision(&self, y: &[f64], k_row: &[f64]) -> f64 {
        self.support
            .iter()
            .map(|&i| self.alpha[i] * y[i] * k_row[i])
            .sum::<f64>()
            + self.bias
    }
}

fn check_labels(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::Domain(format!("{} labels for a {n}x{n} kernel", y.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Domain("labels must be +1 or -1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::Training("both labels must be present".into()));
    }
    Ok(())
}

/// Maximal-violating-pair SMO. `warm` must be feasible for the box and
/// equality constraints.
pub fn smo_solve(
    k: &KernelMatrix,
    y: &[f64],
    params: &SvmParams,
    warm: Option<&[f64]>,
) -> Result<BinarySolution> {
    params.validate()?;
    if !k.is_square() {
        return Err(Error::Domain(format!("kernel is {}x{}, not square", k.rows, k.cols)));
    }
    let n = k.rows;
    check_labels(y, n)?;
    if k.max_asymmetry() > SYMMETRY_TOLERANCE {
        return Err(Error::Domain("kernel matrix is not symmetric".into()));
    }
    let c = params.c;
    let mut alpha = match warm {
        Some(a) if a.len() == n => a.iter().map(|v| v.clamp(0.0, c)).collect(),
        _ => vec![0.0; n],
    };

    // G = Qα − e with Q_ij = y_i y_j K_ij
    let mut g = vec![-1.0; n];
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            let row = k.row(j);
            for i in 0..n {
                g[i] += y[i] * y[j] * row[i] * aj;
            }
        }
    }

    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let mut iterations = 0u64;
    let mut converged = false;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * g[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        violation = if i == usize::MAX || j == usize::MAX { 0.0 } else { gmax - gmin };
        if violation <= params.kkt_tol {
            converged = true;
            break;
        }
        if iterations >= params.max_passes {
            log::warn!("SMO stopped after {iterations} updates with violation {violation:.3e}");
            break;
        }
        iterations += 1;

        let kii = k.get(i, i);
        let kjj = k.get(j, j);
        let kij = k.get(i, j);
        let quad = {
            let q = kii + kjj - 2.0 * kij;
            if q > 0.0 { q } else { TAU }
        };
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let di = ai - old_i;
        let dj = aj - old_j;
        let (ri, rj) = (k.row(i), k.row(j));
        for t in 0..n {
            g[t] += y[t] * (y[i] * ri[t] * di + y[j] * rj[t] * dj);
        }
    }

    // bias: average over free vectors, else midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { 0.5 * (ub + lb) };

    let objective = 0.5 * alpha.iter().zip(&g).map(|(a, gt)| a - a * gt).sum::<f64>();
    let support = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(BinarySolution {
        alpha,
        bias: -rho,
        objective,
        support,
        converged,
        iterations,
        violation,
    })
}

/// Dual objective Σα − ½αᵀQα recomputed from scratch.
pub fn dual_objective(k: &KernelMatrix, y: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = k.row(i);
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * row[j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// ½αᵀQα + C Σ max(0, 1 − y_i f(x_i)).
pub fn primal_objective(k: &KernelMatrix, y: &[f64], sol: &BinarySolution, c: f64) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    let mut hinge = 0.0;
    for i in 0..n {
        let row = k.row(i);
        let s: f64 = (0..n).map(|j| sol.alpha[j] * y[j] * row[j]).sum();
        quad += sol.alpha[i] * y[i] * s;
        hinge += (1.0 - y[i] * (s + sol.bias)).max(0.0);
    }
    0.5 * quad + c * hinge
}

/// Closed-form p-norm weights: β_k ∝ γ_k^{2/(p+1)}, scaled to ‖β‖_p = 1.
pub fn optimal_kernel_weights(gamma: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Domain(format!("p must exceed 1, got {p}")));
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::DegenerateWeights(format!("invalid margin terms {gamma:?}")));
    }
    if gamma.iter().all(|&g| g == 0.0) {
        return Err(Error::DegenerateWeights("all margin terms are zero".into()));
    }
    let e = 2.0 / (p + 1.0);
    let raw: Vec<f64> = gamma.iter().map(|g| g.powf(e)).collect();
    let norm = raw.iter().map(|r| r.powf(p)).sum::<f64>().powf(1.0 / p);
    Ok(raw.iter().map(|r| r / norm).collect())
}

pub fn p_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// αᵀ(y∘K∘y)α restricted to the support.
fn margin_term(k: &KernelMatrix, y: &[f64], alpha: &[f64], support: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &i in support {
        let row = k.row(i);
        let mut s = 0.0;
        for &j in support {
            s += alpha[j] * y[j] * row[j];
        }
        acc += alpha[i] * y[i] * s;
    }
    acc.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MklBinary {
    pub solution: BinarySolution,
    pub beta: Vec<f64>,
    /// Combined dual objective after each outer round.
    pub objectives: Vec<f64>,
    pub converged: bool,
}

/// Alternates an SVM solve on Σβ_k K_k with the closed-form weight update.
/// The update is fed the per-kernel block norms ‖w_k‖ = β_k·sqrt(αᵀ(y∘K_k∘y)α).
pub fn mkl_train_binary(ks: &KernelSet, y: &[f64], params: &SvmParams, p: f64) -> Result<MklBinary> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Domain(format!("p must exceed 1, got {p}")));
    }
    if ks.rows() != ks.cols() {
        return Err(Error::Domain("training kernels must be square".into()));
    }
    let n_k = ks.len();
    let mut beta = vec![(n_k as f64).powf(-1.0 / p); n_k];
    let mut warm: Option<Vec<f64>> = None;
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut solution = None;
    for _ in 0..MAX_OUTER_ROUNDS {
        let combined = ks.combine(&beta);
        let sol = smo_solve(&combined, y, params, warm.as_deref())?;
        objectives.push(sol.objective);
        let gamma: Vec<f64> = ks
            .matrices
            .iter()
            .zip(&beta)
            .map(|(m, b)| b * margin_term(m, y, &sol.alpha, &sol.support).sqrt())
            .collect();
        let next = optimal_kernel_weights(&gamma, p)?;
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        warm = Some(sol.alpha.clone());
        solution = Some(sol);
        if change < BETA_TOLERANCE {
            converged = true;
            break;
        }
        beta = next;
    }
    if !converged {
        log::warn!("kernel weights did not settle within {MAX_OUTER_ROUNDS} rounds");
    }
    Ok(MklBinary {
        solution: solution.expect("at least one round runs"),
        beta,
        objectives,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MklModel {
    pub p: f64,
    pub params: SvmParams,
    /// Training label of every sample, in kernel order.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub classes: Vec<ClassModel>,
}

fn one_vs_rest(labels: &[usize], class: usize) -> Vec<f64> {
    labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect()
}

pub fn train_multiclass(
    ks: &KernelSet,
    labels: &[usize],
    n_classes: usize,
    params: &SvmParams,
    p: f64,
) -> Result<MklModel> {
    if n_classes < 2 {
        return Err(Error::Training(format!("need at least 2 classes, got {n_classes}")));
    }
    if labels.len() != ks.rows() {
        return Err(Error::Domain(format!(
            "{} labels for {} kernel rows",
            labels.len(),
            ks.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Domain(format!("label {bad} out of range")));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::Training(format!(
            "class {c} has {} samples, need at least 2",
            counts[c]
        )));
    }
    let scaled = ks.powf(params.gamma_scale);
    let ids: Vec<usize> = (0..n_classes).collect();
    let classes = crate::par::try_map(&ids, |&c| {
        let y = one_vs_rest(labels, c);
        let r = mkl_train_binary(&scaled, &y, params, p)?;
        Ok::<_, Error>(ClassModel {
            alpha: r.solution.alpha,
            bias: r.solution.bias,
            beta: r.beta,
            objective: r.solution.objective,
            converged: r.converged && r.solution.converged,
        })
    })?;
    Ok(MklModel {
        p,
        params: *params,
        labels: labels.to_vec(),
        n_classes,
        classes,
    })
}

impl MklModel {
    pub fn n_kernels(&self) -> usize {
        self.classes.first().map(|c| c.beta.len()).unwrap_or(0)
    }

    /// Per-class decision values for every row of a test-vs-train kernel set.
    pub fn decision_values(&self, cross: &KernelSet) -> Result<Vec<Vec<f64>>> {
        if cross.len() != self.n_kernels() {
            return Err(Error::Domain(format!(
                "model has {} kernels, got {}",
                self.n_kernels(),
                cross.len()
            )));
        }
        if cross.cols() != self.labels.len() {
            return Err(Error::Domain(format!(
                "cross kernels have {} columns, model has {} training samples",
                cross.cols(),
                self.labels.len()
            )));
        }
        let scaled = cross.powf(self.params.gamma_scale);
        let m = scaled.rows();
        Ok(crate::par::map_range(m, |r| {
            self.classes
                .iter()
                .enumerate()
                .map(|(c, cm)| {
                    let mut f = cm.bias;
                    for (i, &a) in cm.alpha.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let yi = if self.labels[i] == c { 1.0 } else { -1.0 };
                        let kv: f64 = scaled
                            .matrices
                            .iter()
                            .zip(&cm.beta)
                            .map(|(k, b)| b * k.get(r, i))
                            .sum();
                        f += a * yi * kv;
                    }
                    f
                })
                .collect()
        }))
    }

    pub fn predict(&self, cross: &KernelSet) -> Result<Vec<(usize, Vec<f64>)>> {
        Ok(self
            .decision_values(cross)?
            .into_iter()
            .map(|d| (argmax(&d), d))
            .collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Stratification(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < folds {
            return Err(Error::Stratification(format!(
                "class {c} has {} samples for {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold_of[i] = r % folds;
        }
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub c: f64,
    pub gamma_scale: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: SvmParams,
    pub accuracy: f64,
    pub points: Vec<GridPoint>,
}

/// Cross-validated search over C × gamma_scale. Ties prefer the smaller C,
/// then the smaller gamma_scale.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    ks: &KernelSet,
    labels: &[usize],
    n_classes: usize,
    c_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    seed: u64,
    base: &SvmParams,
    p: f64,
) -> Result<GridResult> {
    if c_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::Config("grid search needs nonempty grids".into()));
    }
    let fold_of = stratified_folds(labels, n_classes, folds, seed)?;
    let mut cs = c_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut gs = gamma_grid.to_vec();
    gs.sort_by(f64::total_cmp);
    gs.dedup();

    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let train = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let test = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            (train, test)
        })
        .collect();

    let mut points = Vec::new();
    let mut best: Option<(SvmParams, f64)> = None;
    for &c in &cs {
        for &g in &gs {
            let params = SvmParams { c, gamma_scale: g, ..*base };
            let mut correct = 0usize;
            for (train, test) in &splits {
                let tr_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                let model = train_multiclass(&ks.select(train, train), &tr_labels, n_classes, &params, p)?;
                let pred = model.predict(&ks.select(test, train))?;
                correct += pred
                    .iter()
                    .zip(test)
                    .filter(|((cls, _), &i)| *cls == labels[i])
                    .count();
            }
            let accuracy = correct as f64 / labels.len() as f64;
            points.push(GridPoint { c, gamma_scale: g, accuracy });
            if best.is_none_or(|(_, a)| accuracy > a) {
                best = Some((params, accuracy));
            }
        }
    }
    let (best, accuracy) = best.expect("grids are nonempty");
    Ok(GridResult { best, accuracy, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::Rng;

    fn identity(n: usize) -> KernelMatrix {
        KernelMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    fn tight() -> SvmParams {
        SvmParams { kkt_tol: 1e-9, ..SvmParams::default() }
    }

    #[test]
    fn two_point_identity() {
        let y = [1.0, -1.0];
        let s = smo_solve(&identity(2), &y, &tight(), None).unwrap();
        assert!((s.alpha[0] - 1.0).abs() < 1e-9 && (s.alpha[1] - 1.0).abs() < 1e-9);
        assert!(s.bias.abs() < 1e-9);
        assert!((s.decision(&y, &[1.0, 0.0]) - 1.0).abs() < 1e-9);
        assert!((s.decision(&y, &[0.0, 1.0]) + 1.0).abs() < 1e-9);

        let s = smo_solve(&identity(2), &y, &SvmParams { c: 0.5, ..tight() }, None).unwrap();
        assert_eq!(s.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(
            smo_solve(&identity(2), &[1.0, 1.0], &tight(), None),
            Err(Error::Training(_))
        ));
        let asym = KernelMatrix { rows: 2, cols: 2, data: vec![1.0, 0.5, 0.2, 1.0] };
        assert!(matches!(smo_solve(&asym, &[1.0, -1.0], &tight(), None), Err(Error::Domain(_))));
    }

    #[test]
    fn weight_formula() {
        assert_eq!(optimal_kernel_weights(&[1.0, 0.0], 2.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(optimal_kernel_weights(&[1.0, 0.0], 5.0).unwrap(), vec![1.0, 0.0]);
        let b = optimal_kernel_weights(&[1.0, 1.0], 2.0).unwrap();
        assert!((b[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let b = optimal_kernel_weights(&[4.0, 1.0], 2.0).unwrap();
        assert!((b[0] - 0.92952).abs() < 2e-4 && (b[1] - 0.36889).abs() < 2e-4);
        assert!((p_norm(&b, 2.0) - 1.0).abs() < 1e-10);
        assert!(matches!(optimal_kernel_weights(&[0.0, 0.0], 2.0), Err(Error::DegenerateWeights(_))));
    }

    fn blob_problem(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let off = if c == 0 { 0.0 } else { 3.0 };
            x.push(vec![off + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            l.push(c);
        }
        (x, l)
    }

    fn rbf(x: &[Vec<f64>], z: &[Vec<f64>]) -> KernelMatrix {
        KernelMatrix::from_fn(x.len(), z.len(), |i, j| {
            let d: f64 = x[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d / 2.0).exp()
        })
    }

    #[test]
    fn identical_kernels_get_equal_weights() {
        let (x, l) = blob_problem(20, 3);
        let y: Vec<f64> = l.iter().map(|&c| if c == 0 { 1.0 } else { -1.0 }).collect();
        let k = rbf(&x, &x);
        let ks = KernelSet::new(vec![k.clone(), k.clone()], vec![1.0, 1.0]).unwrap();
        let r = mkl_train_binary(&ks, &y, &tight(), 2.0).unwrap();
        assert!((r.beta[0] - r.beta[1]).abs() < 1e-12);
        let single = smo_solve(&k, &y, &tight(), None).unwrap();
        let scale: f64 = r.beta.iter().sum();
        for i in 0..x.len() {
            let f_mkl = r.solution.decision(&y, ks.combine(&r.beta).row(i));
            let f_one = single.decision(&y, k.row(i));
            assert!((f_mkl - f_one).abs() < 1e-4 * (1.0 + scale), "{f_mkl} vs {f_one}");
        }
    }

    fn informative_set(n: usize, seed: u64) -> (KernelSet, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let block = KernelMatrix::from_fn(n, n, |i, j| if y[i] == y[j] { 1.0 } else { 0.1 });
        let noise_pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let noise = rbf(&noise_pts, &noise_pts);
        (KernelSet::new(vec![block, noise], vec![1.0, 1.0]).unwrap(), y)
    }

    #[test]
    fn informative_kernel_dominates() {
        let (ks, y) = informative_set(16, 5);
        let r = mkl_train_binary(&ks, &y, &tight(), 2.0).unwrap();
        assert!(r.beta[0] > r.beta[1], "{:?}", r.beta);
        assert!((p_norm(&r.beta, 2.0) - 1.0).abs() < 1e-6);
        for w in r.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{:?}", r.objectives);
        }
    }

    #[test]
    fn larger_p_flattens_weights() {
        let (ks, y) = informative_set(16, 9);
        let ratio = |p| {
            let b = mkl_train_binary(&ks, &y, &tight(), p).unwrap().beta;
            b.iter().cloned().fold(0.0, f64::max) / b.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        assert!(ratio(16.0) < ratio(1.1));
    }

    #[test]
    fn permuting_kernels_permutes_weights() {
        let (ks, y) = informative_set(12, 2);
        let r = mkl_train_binary(&ks, &y, &tight(), 2.0).unwrap();
        let swapped = ks.subset(&[1, 0]);
        let s = mkl_train_binary(&swapped, &y, &tight(), 2.0).unwrap();
        assert!((r.beta[0] - s.beta[1]).abs() < 1e-6 && (r.beta[1] - s.beta[0]).abs() < 1e-6);
    }

    fn multiclass_fixture(per_class: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                x.push(vec![4.0 * c as f64 + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
                l.push(c);
            }
        }
        (x, l)
    }

    #[test]
    fn multiclass_structure_and_memorization() {
        let (x, l) = multiclass_fixture(5, 2);
        let k = rbf(&x, &x);
        let ks = KernelSet::new(vec![k.clone(), k], vec![1.0, 1.0]).unwrap();
        let m = train_multiclass(&ks, &l, 2, &SvmParams::default(), 2.0).unwrap();
        assert_eq!(m.classes.len(), 2);
        let d = m.decision_values(&ks).unwrap();
        for (row, &c) in d.iter().zip(&l) {
            assert_eq!(row.len(), 2);
            assert!(row[0].signum() != row[1].signum());
            assert_eq!(argmax(row), c);
        }

        let (x, l) = multiclass_fixture(3, 15);
        let k = rbf(&x, &x);
        let ks = KernelSet::new(vec![k], vec![1.0]).unwrap();
        let m = train_multiclass(&ks, &l, 15, &SvmParams::default(), 2.0).unwrap();
        assert_eq!(m.classes.len(), 15);
        let preds = m.predict(&ks).unwrap();
        assert!(preds.iter().zip(&l).all(|((p, _), c)| p == c));

        let mut scaled = m.clone();
        for cm in &mut scaled.classes {
            cm.beta.iter_mut().for_each(|b| *b *= 2.0);
            cm.bias *= 2.0;
        }
        let again = scaled.predict(&ks).unwrap();
        assert!(preds.iter().zip(&again).all(|(a, b)| a.0 == b.0));
    }

    #[test]
    fn multiclass_rejects_sparse_class() {
        let ks = KernelSet::new(vec![identity(3)], vec![1.0]).unwrap();
        let e = train_multiclass(&ks, &[0, 0, 1], 2, &SvmParams::default(), 2.0).unwrap_err();
        assert!(matches!(e, Error::Training(ref m) if m.contains("class 1")));
        assert!(train_multiclass(&ks, &[0, 0, 0], 2, &SvmParams::default(), 2.0).is_err());
    }

    #[test]
    fn prediction_rejects_channel_mismatch() {
        let (x, l) = multiclass_fixture(3, 2);
        let k = rbf(&x, &x);
        let ks = KernelSet::new(vec![k.clone(), k.clone()], vec![1.0, 1.0]).unwrap();
        let m = train_multiclass(&ks, &l, 2, &SvmParams::default(), 2.0).unwrap();
        let one = KernelSet::new(vec![k], vec![1.0]).unwrap();
        assert!(matches!(m.decision_values(&one), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_search_rules() {
        let (x, l) = multiclass_fixture(6, 2);
        let k = rbf(&x, &x);
        let ks = KernelSet::new(vec![k], vec![1.0]).unwrap();
        let base = SvmParams::default();
        let r = grid_search(&ks, &l, 2, &[3.0], &[0.5], 3, 1, &base, 2.0).unwrap();
        assert_eq!((r.best.c, r.best.gamma_scale), (3.0, 0.5));
        assert_eq!(r.accuracy, 1.0);
        let r = grid_search(&ks, &l, 2, &[8.0, 2.0], &[1.0], 3, 1, &base, 2.0).unwrap();
        assert_eq!(r.best.c, 2.0);
        assert!(matches!(
            grid_search(&ks, &l, 2, &[1.0], &[1.0], 7, 1, &base, 2.0),
            Err(Error::Stratification(_))
        ));
        let a = grid_search(&ks, &l, 2, &[1.0, 4.0], &[0.5, 1.0], 3, 9, &base, 2.0).unwrap();
        let b = grid_search(&ks, &l, 2, &[1.0, 4.0], &[0.5, 1.0], 3, 9, &base, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let f = stratified_folds(&labels, 3, 3, 4).unwrap();
        for fold in 0..3 {
            for c in 0..3 {
                let n = (0..30).filter(|&i| f[i] == fold && labels[i] == c).count();
                assert_eq!(n, 10 / 3 + usize::from(fold < 10 % 3));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn solutions_are_feasible(seed in 0u64..10_000, n in 4usize..20, c in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            y[0] = 1.0;
            y[1] = -1.0;
            let k = rbf(&pts, &pts);
            let params = SvmParams { c, kkt_tol: 1e-6, ..SvmParams::default() };
            let s = smo_solve(&k, &y, &params, None).unwrap();
            prop_assert!(s.converged);
            prop_assert!(s.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            let eq: f64 = s.alpha.iter().zip(&y).map(|(a, b)| a * b).sum();
            prop_assert!(eq.abs() < 1e-8);
            prop_assert!((s.objective - dual_objective(&k, &y, &s.alpha)).abs() < 1e-8 * (1.0 + s.objective.abs()));
            let gap = primal_objective(&k, &y, &s, c) - s.objective;
            prop_assert!(gap <= 1e-2 * (1.0 + s.objective.abs()), "gap {gap}");
        }
    }
}
