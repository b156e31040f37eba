//! Per-slice empirical risk: negative log-likelihood factors for the
//! multinomial link and squared loss for the Gaussian baseline.
//!
//! The multinomial likelihood factors across slices, and slice `l` only
//! sees whether each draw's label equals `l + 1` or exceeds it. A slice
//! problem therefore stores, per unique observed entry, the count of
//! equal labels and the count of greater labels; entries with neither are
//! dropped from the slice's active set entirely.

use crate::error::{Error, Result};
use crate::link::{sigmoid, softplus};
use crate::tensor::GroupedObservations;

/// Sparse matrix in coordinate form, the carrier for loss gradients.
///
/// Duplicate coordinates are legal and accumulate in matrix-vector
/// products, though gradients produced by this crate use unique entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    m1: usize,
    m2: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        m1: usize,
        m2: usize,
        rows: Vec<u32>,
        cols: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows.len() != values.len() || cols.len() != values.len() {
            return Err(Error::structural("coordinate arrays have mismatched lengths"));
        }
        if rows.iter().any(|&r| r as usize >= m1) || cols.iter().any(|&c| c as usize >= m2) {
            return Err(Error::structural("coordinate outside matrix shape"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("sparse matrix contains a non-finite value"));
        }
        Ok(Self { m1, m2, rows, cols, values })
    }

    pub fn rows_dim(&self) -> usize {
        self.m1
    }

    pub fn cols_dim(&self) -> usize {
        self.m2
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn coordinates(&self) -> (&[u32], &[u32], &[f64]) {
        (&self.rows, &self.cols, &self.values)
    }

    /// `out = A v`, with `v` of length `m2` and `out` of length `m1`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for ((&r, &c), &x) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            out[r as usize] += x * v[c as usize];
        }
    }

    /// `out = A^T u`, with `u` of length `m1` and `out` of length `m2`.
    pub fn apply_transpose(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for ((&r, &c), &x) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            out[c as usize] += x * u[r as usize];
        }
    }

    /// Frobenius inner product with the rank-one matrix `u v^T`.
    pub fn inner_rank_one(&self, u: &[f64], v: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.values)
            .map(|((&r, &c), &x)| x * u[r as usize] * v[c as usize])
            .sum()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Largest singular value of a sparse matrix by power iteration on
/// `A^T A`, with a deterministic seeded start.
///
/// Returns `(u, v, sigma)` with `u^T A v = sigma >= 0`, or `None` when the
/// matrix is zero.
pub(crate) fn power_top_pair(
    a: &SparseMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    if a.values.iter().all(|&x| x == 0.0) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; a.m2];
    let mut u = vec![0.0; a.m1];
    let mut w = vec![0.0; a.m2];

    'restart: for _attempt in 0..4 {
        for x in v.iter_mut() {
            *x = rng.gen::<f64>() - 0.5;
        }
        let norm = norm2(&v);
        for x in v.iter_mut() {
            *x /= norm;
        }
        let mut sigma_prev = 0.0;
        for _ in 0..max_iter {
            a.apply(&v, &mut u);
            let nu = norm2(&u);
            if nu == 0.0 {
                continue 'restart;
            }
            for x in u.iter_mut() {
                *x /= nu;
            }
            a.apply_transpose(&u, &mut w);
            let sigma = norm2(&w);
            if sigma == 0.0 {
                continue 'restart;
            }
            for (vi, &wi) in v.iter_mut().zip(&w) {
                *vi = wi / sigma;
            }
            if (sigma - sigma_prev).abs() <= tol * sigma {
                break;
            }
            sigma_prev = sigma;
        }
        // Final left vector from the converged right vector, so that
        // u^T A v equals sigma exactly and is non-negative.
        a.apply(&v, &mut u);
        let sigma = norm2(&u);
        if sigma == 0.0 {
            continue 'restart;
        }
        for x in u.iter_mut() {
            *x /= sigma;
        }
        return Some((u, v, sigma));
    }
    None
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Continues a power iteration from an already-computed right vector
/// until an Aitken extrapolation of the singular value sequence
/// certifies that at most `delta_abs` of it is still missing.
///
/// The plain iteration stops on successive differences, which badly
/// understate the limit when the top of the spectrum clusters: the
/// per-step gain shrinks long before the estimate is close. The
/// geometric tail `d * q / (1 - q)` built from the last two gains `d`
/// and their ratio `q` estimates what is left instead.
pub(crate) fn refine_top_pair(
    a: &SparseMatrix,
    v_start: &[f64],
    delta_abs: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let mut v = v_start.to_vec();
    let norm = norm2(&v);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut u = vec![0.0; a.m1];
    let mut w = vec![0.0; a.m2];
    let mut sigma_prev = 0.0;
    let mut diff_prev = f64::INFINITY;
    for iter in 0..max_iter {
        a.apply(&v, &mut u);
        let nu = norm2(&u);
        if nu == 0.0 {
            return None;
        }
        for x in u.iter_mut() {
            *x /= nu;
        }
        a.apply_transpose(&u, &mut w);
        let sigma = norm2(&w);
        if sigma == 0.0 {
            return None;
        }
        for (vi, &wi) in v.iter_mut().zip(&w) {
            *vi = wi / sigma;
        }
        let diff = (sigma - sigma_prev).abs();
        if iter >= 2 {
            let q = if diff_prev > 0.0 && diff_prev.is_finite() {
                (diff / diff_prev).min(0.999_999)
            } else {
                0.0
            };
            let tail = diff * q / (1.0 - q);
            if diff == 0.0 || tail <= delta_abs {
                break;
            }
        }
        diff_prev = diff;
        sigma_prev = sigma;
    }
    // Recompute the left vector from the final right vector so that
    // u^T A v equals the reported value exactly.
    a.apply(&v, &mut u);
    let sigma = norm2(&u);
    if sigma == 0.0 {
        return None;
    }
    for x in u.iter_mut() {
        *x /= sigma;
    }
    Some((u, v, sigma))
}

/// Hard cap on the certification iterations; generous because it only
/// applies to clustered spectra on stopping decisions.
pub(crate) const CERTIFY_MAX_ITERS: usize = 50_000;

/// Spectral norm of a gradient matrix, certified by the extrapolated
/// refinement. Zero matrices report zero.
pub fn gradient_operator_norm(grad: &SparseMatrix) -> f64 {
    let Some((_, v, sigma)) = power_top_pair(grad, 1e-12, 5000, 0x9e3779b97f4a7c15) else {
        return 0.0;
    };
    match refine_top_pair(grad, &v, (sigma * 1e-9).max(1e-15), CERTIFY_MAX_ITERS) {
        Some((_, _, refined)) => refined.max(sigma),
        None => sigma,
    }
}

/// Which empirical risk a slice problem carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Factorized multinomial negative log-likelihood for one slice.
    Multinomial,
    /// Half squared error against raw labels, for the Gaussian baseline.
    Squared,
}

#[derive(Debug, Clone)]
enum LossData {
    Multinomial {
        /// Count of draws whose label equals `slice + 1`, per active entry.
        c_eq: Vec<f64>,
        /// Count of draws whose label exceeds `slice + 1`, per active entry.
        c_gt: Vec<f64>,
    },
    Squared {
        /// Draw count per entry.
        counts: Vec<f64>,
        /// Sum of labels per entry.
        sums: Vec<f64>,
        /// Sum of squared labels over all draws, a constant in the risk.
        sq_sum: f64,
    },
}

/// Empirical risk for one parameter slice restricted to its active
/// observed entries.
///
/// The risk is `(1/n) sum_i rho(W_{entry(i)})` with `n` the total draw
/// count of the originating observation set, so values are comparable
/// across slices and fits.
#[derive(Debug, Clone)]
pub struct SliceProblem {
    m1: usize,
    m2: usize,
    slice: usize,
    kind: LossKind,
    rows: Vec<u32>,
    cols: Vec<u32>,
    data: LossData,
    n: f64,
}

impl SliceProblem {
    /// Multinomial risk for `slice` (0-based, parametrizing class
    /// `slice + 1`). Entries with no draws labelled `>= slice + 1` carry
    /// no information for this slice and are dropped.
    pub fn multinomial(grouped: &GroupedObservations, slice: usize) -> Result<Self> {
        let q = grouped.classes() - 1;
        if slice >= q {
            return Err(Error::structural(format!(
                "slice {slice} out of range for {} classes",
                grouped.classes()
            )));
        }
        if grouped.total() == 0 {
            return Err(Error::domain("observation set is empty"));
        }
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut c_eq = Vec::new();
        let mut c_gt = Vec::new();
        for e in 0..grouped.unique_entries() {
            let counts = grouped.entry_counts(e);
            let eq = counts[slice] as f64;
            let gt: f64 = counts[slice + 1..].iter().map(|&c| c as f64).sum();
            if eq + gt > 0.0 {
                rows.push(grouped.entry_rows()[e]);
                cols.push(grouped.entry_cols()[e]);
                c_eq.push(eq);
                c_gt.push(gt);
            }
        }
        Ok(Self {
            m1: grouped.rows_dim(),
            m2: grouped.cols_dim(),
            slice,
            kind: LossKind::Multinomial,
            rows,
            cols,
            data: LossData::Multinomial { c_eq, c_gt },
            n: grouped.total() as f64,
        })
    }

    /// Squared-error risk against the raw labels, used by the Gaussian
    /// baseline. Always a single slice.
    pub fn squared(grouped: &GroupedObservations) -> Result<Self> {
        if grouped.total() == 0 {
            return Err(Error::domain("observation set is empty"));
        }
        let e = grouped.unique_entries();
        let mut counts = Vec::with_capacity(e);
        let mut sums = Vec::with_capacity(e);
        let mut sq_sum = 0.0;
        for i in 0..e {
            let c = grouped.entry_counts(i);
            let m: u32 = c.iter().sum();
            let s: f64 = c
                .iter()
                .enumerate()
                .map(|(k, &cnt)| (k as f64 + 1.0) * cnt as f64)
                .sum();
            sq_sum += c
                .iter()
                .enumerate()
                .map(|(k, &cnt)| {
                    let y = k as f64 + 1.0;
                    y * y * cnt as f64
                })
                .sum::<f64>();
            counts.push(m as f64);
            sums.push(s);
        }
        Ok(Self {
            m1: grouped.rows_dim(),
            m2: grouped.cols_dim(),
            slice: 0,
            kind: LossKind::Squared,
            rows: grouped.entry_rows().to_vec(),
            cols: grouped.entry_cols().to_vec(),
            data: LossData::Squared { counts, sums, sq_sum },
            n: grouped.total() as f64,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn slice(&self) -> usize {
        self.slice
    }

    pub fn rows_dim(&self) -> usize {
        self.m1
    }

    pub fn cols_dim(&self) -> usize {
        self.m2
    }

    /// Number of active observed entries for this slice.
    pub fn active_len(&self) -> usize {
        self.rows.len()
    }

    /// Total draw count of the originating set (the `1/n` normalizer).
    pub fn total_draws(&self) -> f64 {
        self.n
    }

    pub fn entry_rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn entry_cols(&self) -> &[u32] {
        &self.cols
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.rows.len() {
            return Err(Error::structural(format!(
                "entry value buffer has length {}, expected {}",
                w.len(),
                self.rows.len()
            )));
        }
        Ok(())
    }

    /// Risk at the given parameter values on the active entries.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        let total = match &self.data {
            LossData::Multinomial { c_eq, c_gt } => {
                let mut acc = 0.0;
                for ((&x, &eq), &gt) in w.iter().zip(c_eq).zip(c_gt) {
                    acc += eq * softplus(-x) + gt * softplus(x);
                }
                acc
            }
            LossData::Squared { counts, sums, sq_sum } => {
                let mut acc = *sq_sum;
                for ((&x, &m), &s) in w.iter().zip(counts).zip(sums) {
                    acc += x * (m * x - 2.0 * s);
                }
                acc / 2.0
            }
        };
        let value = total / self.n;
        if !value.is_finite() {
            return Err(Error::numerical("risk evaluated to a non-finite value"));
        }
        Ok(value)
    }

    /// Writes the per-entry risk derivative into `out` (resized to the
    /// active length).
    pub(crate) fn gradient_values_into(&self, w: &[f64], out: &mut Vec<f64>) -> Result<()> {
        self.check_w(w)?;
        out.clear();
        out.reserve(w.len());
        match &self.data {
            LossData::Multinomial { c_eq, c_gt } => {
                for ((&x, &eq), &gt) in w.iter().zip(c_eq).zip(c_gt) {
                    out.push(((eq + gt) * sigmoid(x) - eq) / self.n);
                }
            }
            LossData::Squared { counts, sums, .. } => {
                for ((&x, &m), &s) in w.iter().zip(counts).zip(sums) {
                    out.push((m * x - s) / self.n);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("risk gradient is non-finite"));
        }
        Ok(())
    }

    /// Sparse risk gradient at the given parameter values. Supported on
    /// the active entries only.
    pub fn gradient(&self, w: &[f64]) -> Result<SparseMatrix> {
        let mut values = Vec::new();
        self.gradient_values_into(w, &mut values)?;
        SparseMatrix::new(self.m1, self.m2, self.rows.clone(), self.cols.clone(), values)
    }

    /// Risk at the zero matrix, used for scale-free stopping thresholds.
    pub fn objective_at_zero(&self) -> f64 {
        match &self.data {
            LossData::Multinomial { c_eq, c_gt } => {
                let total: f64 = c_eq.iter().zip(c_gt).map(|(&a, &b)| a + b).sum();
                total * std::f64::consts::LN_2 / self.n
            }
            LossData::Squared { sq_sum, .. } => sq_sum / (2.0 * self.n),
        }
    }
}
