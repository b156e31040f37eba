//! Core data model: observation sets, dense parameter tensors, and the
//! rank-one atomic decompositions produced by the solver.
//!
//! An observation is a `(row, col, label)` triple with 0-based indices and
//! 1-based class labels. Repeated draws of the same entry are legal and
//! common; [`GroupedObservations`] collapses them into per-entry class
//! counts so likelihood code pays once per unique entry.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension per axis. Grouping packs `(row, col, label)`
/// into a single sortable `u64`, which needs each index to fit in 20 bits.
pub const MAX_DIM: usize = 1 << 20;

/// One observed draw: entry `(row, col)` produced class `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub row: u32,
    pub col: u32,
    /// Class label in `1..=classes`.
    pub label: u32,
}

/// A multiset of observations over an `m1 x m2` grid with `classes` labels.
///
/// Records keep their insertion order, so splits and serialization are
/// reproducible. Duplicates are allowed and meaningful.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSet {
    m1: usize,
    m2: usize,
    classes: usize,
    records: Vec<Observation>,
}

impl ObservationSet {
    /// Validates every record against the declared shape.
    pub fn new(m1: usize, m2: usize, classes: usize, records: Vec<Observation>) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::structural("matrix dimensions must be positive"));
        }
        if m1 > MAX_DIM || m2 > MAX_DIM {
            return Err(Error::structural(format!(
                "dimensions are capped at {MAX_DIM} per axis"
            )));
        }
        if classes < 2 {
            return Err(Error::structural("need at least two classes"));
        }
        if classes > 63 {
            return Err(Error::structural("class count is capped at 63"));
        }
        for (i, r) in records.iter().enumerate() {
            if r.row as usize >= m1 || r.col as usize >= m2 {
                return Err(Error::data(format!(
                    "record {i}: entry ({}, {}) outside {m1} x {m2}",
                    r.row, r.col
                )));
            }
            if r.label == 0 || r.label as usize > classes {
                return Err(Error::data(format!(
                    "record {i}: label {} outside 1..={classes}",
                    r.label
                )));
            }
        }
        Ok(Self { m1, m2, classes, records })
    }

    pub fn rows(&self) -> usize {
        self.m1
    }

    pub fn cols(&self) -> usize {
        self.m2
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of observation records, counting duplicates.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    /// New set over the same grid containing the records at `indices`,
    /// in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| Error::structural(format!("record index {i} out of range")))?;
            records.push(*r);
        }
        Ok(Self { m1: self.m1, m2: self.m2, classes: self.classes, records })
    }

    /// Collapses the record list into unique entries with per-class counts.
    pub fn grouped(&self) -> GroupedObservations {
        GroupedObservations::from_set(self)
    }
}

/// Unique observed entries with per-class multiplicities.
///
/// Entries are sorted by `(row, col)`. `counts` is row-major `E x classes`:
/// `counts[e * classes + (label - 1)]` is how many times entry `e` was
/// observed with that label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedObservations {
    m1: usize,
    m2: usize,
    classes: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    counts: Vec<u32>,
    total: usize,
}

impl GroupedObservations {
    fn from_set(set: &ObservationSet) -> Self {
        let classes = set.classes;
        // Pack (row, col, label) into one key; sorting groups duplicates.
        let mut keys: Vec<u64> = set
            .records
            .iter()
            .map(|r| ((r.row as u64) << 26 | r.col as u64) << 6 | r.label as u64)
            .collect();
        keys.sort_unstable();

        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        let mut last_entry = u64::MAX;
        for key in keys {
            let entry = key >> 6;
            let label = (key & 0x3f) as usize;
            if entry != last_entry {
                rows.push((entry >> 26) as u32);
                cols.push((entry & ((1 << 26) - 1)) as u32);
                counts.extend(std::iter::repeat(0).take(classes));
                last_entry = entry;
            }
            let base = counts.len() - classes;
            counts[base + label - 1] += 1;
        }
        Self {
            m1: set.m1,
            m2: set.m2,
            classes,
            rows,
            cols,
            counts,
            total: set.records.len(),
        }
    }

    pub fn rows_dim(&self) -> usize {
        self.m1
    }

    pub fn cols_dim(&self) -> usize {
        self.m2
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of unique observed entries.
    pub fn unique_entries(&self) -> usize {
        self.rows.len()
    }

    /// Total observation count, duplicates included.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry_rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn entry_cols(&self) -> &[u32] {
        &self.cols
    }

    /// Per-class counts for unique entry `e`.
    pub fn entry_counts(&self, e: usize) -> &[u32] {
        &self.counts[e * self.classes..(e + 1) * self.classes]
    }
}

/// Dense stack of `q` real matrices sharing one shape, with an optional
/// sup-norm bound `gamma` that is checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTensor {
    slices: Vec<Array2<f64>>,
    gamma: Option<f64>,
}

impl ParameterTensor {
    pub fn new(slices: Vec<Array2<f64>>, gamma: Option<f64>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::structural("tensor needs at least one slice"));
        }
        let dim = slices[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::structural("tensor slices must be non-empty"));
        }
        for (l, s) in slices.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::structural(format!(
                    "slice {l} has shape {:?}, expected {:?}",
                    s.dim(),
                    dim
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("slice {l} contains a non-finite value")));
            }
        }
        if let Some(g) = gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::domain("gamma bound must be positive and finite"));
            }
            for (l, s) in slices.iter().enumerate() {
                if s.iter().any(|v| v.abs() > g) {
                    return Err(Error::domain(format!(
                        "slice {l} exceeds the declared sup-norm bound {g}"
                    )));
                }
            }
        }
        Ok(Self { slices, gamma })
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    pub fn rows(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.slices[0].ncols()
    }

    pub fn slice(&self, l: usize) -> &Array2<f64> {
        &self.slices[l]
    }

    pub fn slices(&self) -> &[Array2<f64>] {
        &self.slices
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// Largest absolute entry across all slices.
    pub fn sup_norm(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }
}

/// Rank-one factor pair with unit-norm sides.
///
/// Construction renormalizes each side when its norm is off by more than
/// 1e-10, and rejects zero or non-finite factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    u: Vec<f64>,
    v: Vec<f64>,
}

const ATOM_NORM_TOL: f64 = 1e-10;

fn unitize(mut x: Vec<f64>, side: &str) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("atom {side} factor contains a non-finite value")));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::structural(format!("atom {side} factor is the zero vector")));
    }
    if (norm - 1.0).abs() > ATOM_NORM_TOL {
        for v in &mut x {
            *v /= norm;
        }
    }
    Ok(x)
}

impl Atom {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.is_empty() || v.is_empty() {
            return Err(Error::structural("atom factors must be non-empty"));
        }
        Ok(Self { u: unitize(u, "left")?, v: unitize(v, "right")? })
    }

    pub fn left(&self) -> &[f64] {
        &self.u
    }

    pub fn right(&self) -> &[f64] {
        &self.v
    }

    /// Value of the rank-one matrix `u v^T` at `(row, col)`.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.u[row] * self.v[col]
    }

    fn negate(&mut self) {
        for x in &mut self.u {
            *x = -*x;
        }
    }
}

/// Non-negative combination of rank-one atoms representing one matrix slice.
///
/// The represented matrix is `sum_k weights[k] * u_k v_k^T`; the weight sum
/// upper-bounds its nuclear norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDecomposition {
    m1: usize,
    m2: usize,
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

const COMPACT_COLINEARITY_TOL: f64 = 1e-9;

impl AtomicDecomposition {
    /// The zero matrix of the given shape.
    pub fn empty(m1: usize, m2: usize) -> Self {
        Self { m1, m2, atoms: Vec::new(), weights: Vec::new() }
    }

    pub fn from_parts(m1: usize, m2: usize, atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        let mut out = Self::empty(m1, m2);
        if atoms.len() != weights.len() {
            return Err(Error::structural("atom and weight counts differ"));
        }
        for (a, w) in atoms.into_iter().zip(weights) {
            out.push(a, w)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, atom: Atom, weight: f64) -> Result<()> {
        if atom.u.len() != self.m1 || atom.v.len() != self.m2 {
            return Err(Error::structural(format!(
                "atom shape {} x {} does not match decomposition {} x {}",
                atom.u.len(),
                atom.v.len(),
                self.m1,
                self.m2
            )));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::domain(format!("atom weight {weight} must be finite and >= 0")));
        }
        self.atoms.push(atom);
        self.weights.push(weight);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.m1
    }

    pub fn cols(&self) -> usize {
        self.m2
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum of weights; an upper bound on the nuclear norm of the
    /// reconstructed matrix.
    pub fn nuclear_norm_bound(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Dense `m1 x m2` matrix represented by this decomposition.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.m1, self.m2));
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            for (i, &ui) in atom.u.iter().enumerate() {
                let scale = w * ui;
                let mut row = out.row_mut(i);
                for (j, &vj) in atom.v.iter().enumerate() {
                    row[j] += scale * vj;
                }
            }
        }
        out
    }

    /// Values of the represented matrix at the given entries, without
    /// forming the dense matrix. Summation order matches `reconstruct`.
    pub fn entry_values(&self, entries: &[(u32, u32)]) -> Result<Vec<f64>> {
        for &(r, c) in entries {
            if r as usize >= self.m1 || c as usize >= self.m2 {
                return Err(Error::structural(format!(
                    "entry ({r}, {c}) outside {} x {}",
                    self.m1, self.m2
                )));
            }
        }
        let mut out = vec![0.0; entries.len()];
        self.accumulate_entries_split(
            &entries.iter().map(|e| e.0).collect::<Vec<_>>(),
            &entries.iter().map(|e| e.1).collect::<Vec<_>>(),
            &mut out,
        );
        Ok(out)
    }

    /// Adds the represented matrix, entrywise at `(rows[i], cols[i])`, into
    /// `out`. Indices must already be validated.
    pub(crate) fn accumulate_entries_split(&self, rows: &[u32], cols: &[u32], out: &mut [f64]) {
        debug_assert_eq!(rows.len(), out.len());
        debug_assert_eq!(cols.len(), out.len());
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            for ((&r, &c), o) in rows.iter().zip(cols).zip(out.iter_mut()) {
                *o += w * atom.u[r as usize] * atom.v[c as usize];
            }
        }
    }

    /// Merges atoms whose factor pairs are colinear (up to sign) and drops
    /// zero weights. The reconstructed matrix is unchanged.
    pub fn compact(&mut self) {
        let tol = COMPACT_COLINEARITY_TOL;
        let t = self.atoms.len();
        let mut alive = vec![true; t];
        for i in 0..t {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..t {
                if !alive[j] {
                    continue;
                }
                let du: f64 = dot(&self.atoms[i].u, &self.atoms[j].u);
                let dv: f64 = dot(&self.atoms[i].v, &self.atoms[j].v);
                if du.abs() < 1.0 - tol || dv.abs() < 1.0 - tol {
                    continue;
                }
                if du * dv > 0.0 {
                    // Same rank-one matrix: fold j into i.
                    self.weights[i] += self.weights[j];
                } else {
                    // Opposite sign: the pair partially cancels.
                    self.weights[i] -= self.weights[j];
                    if self.weights[i] < 0.0 {
                        self.weights[i] = -self.weights[i];
                        self.atoms[i].negate();
                    }
                }
                alive[j] = false;
            }
        }
        let keep: Vec<bool> =
            alive.iter().zip(&self.weights).map(|(&a, &w)| a && w != 0.0).collect();
        let mut i = 0;
        self.atoms.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut j = 0;
        self.weights.retain(|_| {
            j += 1;
            keep[j - 1]
        });
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_decomposition(m1: usize, m2: usize, t: usize, seed: u64) -> AtomicDecomposition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = AtomicDecomposition::empty(m1, m2);
        for _ in 0..t {
            let u: Vec<f64> = (0..m1).map(|_| rng.gen::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..m2).map(|_| rng.gen::<f64>() - 0.5).collect();
            d.push(Atom::new(u, v).unwrap(), rng.gen::<f64>() * 3.0).unwrap();
        }
        d
    }

    #[test]
    fn reconstruct_matches_naive_sum() {
        let d = random_decomposition(7, 5, 4, 11);
        let dense = d.reconstruct();
        for i in 0..7 {
            for j in 0..5 {
                let mut want = 0.0;
                for (a, &w) in d.atoms().iter().zip(d.weights()) {
                    want += w * a.left()[i] * a.right()[j];
                }
                assert!((dense[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entry_values_agree_with_reconstruct() {
        let d = random_decomposition(9, 6, 5, 3);
        let dense = d.reconstruct();
        let entries: Vec<(u32, u32)> =
            (0..9).flat_map(|i| (0..6).map(move |j| (i as u32, j as u32))).collect();
        let vals = d.entry_values(&entries).unwrap();
        for (&(i, j), v) in entries.iter().zip(vals) {
            assert!((dense[(i as usize, j as usize)] - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_decomposition_is_zero() {
        let d = AtomicDecomposition::empty(3, 4);
        assert_eq!(d.reconstruct(), Array2::<f64>::zeros((3, 4)));
        assert_eq!(d.nuclear_norm_bound(), 0.0);
        assert_eq!(d.entry_values(&[(2, 3)]).unwrap(), vec![0.0]);
    }

    #[test]
    fn atom_normalization() {
        let a = Atom::new(vec![3.0, 4.0], vec![0.0, 2.0]).unwrap();
        assert!((a.left()[0] - 0.6).abs() < 1e-15);
        assert!((a.left()[1] - 0.8).abs() < 1e-15);
        assert_eq!(a.right(), &[0.0, 1.0]);

        // A vector already unit within 1e-10 is kept bit-for-bit.
        let x = 1.0 / 3.0f64.sqrt();
        let a = Atom::new(vec![x, x, x], vec![1.0]).unwrap();
        assert_eq!(a.left(), &[x, x, x]);
    }

    #[test]
    fn atom_rejects_degenerate_factors() {
        assert!(Atom::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Atom::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(Atom::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn decomposition_rejects_bad_pushes() {
        let mut d = AtomicDecomposition::empty(2, 2);
        let atom = Atom::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!(d.push(atom.clone(), -0.5).is_err());
        assert!(d.push(atom, f64::INFINITY).is_err());
        let wrong = Atom::new(vec![1.0, 0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!(d.push(wrong, 1.0).is_err());
    }

    #[test]
    fn compact_merges_colinear_atoms() {
        let u = vec![0.6, 0.8];
        let v = vec![1.0, 0.0, 0.0];
        let mut d = AtomicDecomposition::empty(2, 3);
        d.push(Atom::new(u.clone(), v.clone()).unwrap(), 2.0).unwrap();
        d.push(Atom::new(u.iter().map(|x| -x).collect(), v.clone()).unwrap(), 0.5).unwrap();
        d.push(Atom::new(u.clone(), v.clone()).unwrap(), 1.0).unwrap();
        let before = d.reconstruct();
        d.compact();
        assert_eq!(d.len(), 1);
        assert!((d.nuclear_norm_bound() - 2.5).abs() < 1e-12);
        let after = d.reconstruct();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compact_flips_sign_when_cancellation_dominates() {
        let u = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        let mut d = AtomicDecomposition::empty(2, 2);
        d.push(Atom::new(u.clone(), v.clone()).unwrap(), 1.0).unwrap();
        d.push(Atom::new(vec![-1.0, 0.0], v.clone()).unwrap(), 3.0).unwrap();
        let before = d.reconstruct();
        d.compact();
        assert_eq!(d.len(), 1);
        assert!((d.nuclear_norm_bound() - 2.0).abs() < 1e-12);
        for (a, b) in before.iter().zip(d.reconstruct().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grouping_collapses_duplicates() {
        let records = vec![
            Observation { row: 1, col: 2, label: 1 },
            Observation { row: 0, col: 0, label: 3 },
            Observation { row: 1, col: 2, label: 3 },
            Observation { row: 1, col: 2, label: 1 },
        ];
        let set = ObservationSet::new(2, 3, 3, records).unwrap();
        let g = set.grouped();
        assert_eq!(g.unique_entries(), 2);
        assert_eq!(g.total(), 4);
        assert_eq!(g.entry_rows(), &[0, 1]);
        assert_eq!(g.entry_cols(), &[0, 2]);
        assert_eq!(g.entry_counts(0), &[0, 0, 1]);
        assert_eq!(g.entry_counts(1), &[2, 0, 1]);
    }

    #[test]
    fn grouping_preserves_multiset_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m1, m2, k) = (13, 9, 4);
        let records: Vec<Observation> = (0..500)
            .map(|_| Observation {
                row: rng.gen_range(0..m1) as u32,
                col: rng.gen_range(0..m2) as u32,
                label: rng.gen_range(1..=k) as u32,
            })
            .collect();
        let set = ObservationSet::new(m1, m2, k, records.clone()).unwrap();
        let g = set.grouped();
        let total: u32 = (0..g.unique_entries()).map(|e| g.entry_counts(e).iter().sum::<u32>()).sum();
        assert_eq!(total as usize, records.len());
        for e in 0..g.unique_entries() {
            let (r, c) = (g.entry_rows()[e], g.entry_cols()[e]);
            for label in 1..=k {
                let want = records
                    .iter()
                    .filter(|o| o.row == r && o.col == c && o.label == label as u32)
                    .count();
                assert_eq!(g.entry_counts(e)[label - 1] as usize, want);
            }
        }
        // Sorted by (row, col), strictly increasing.
        for e in 1..g.unique_entries() {
            let prev = (g.entry_rows()[e - 1], g.entry_cols()[e - 1]);
            let cur = (g.entry_rows()[e], g.entry_cols()[e]);
            assert!(prev < cur);
        }
    }

    #[test]
    fn observation_set_validates_records() {
        let bad_row = vec![Observation { row: 5, col: 0, label: 1 }];
        assert!(ObservationSet::new(5, 5, 2, bad_row).is_err());
        let bad_label = vec![Observation { row: 0, col: 0, label: 0 }];
        assert!(ObservationSet::new(5, 5, 2, bad_label).is_err());
        let bad_label_hi = vec![Observation { row: 0, col: 0, label: 3 }];
        assert!(ObservationSet::new(5, 5, 2, bad_label_hi).is_err());
        assert!(ObservationSet::new(0, 5, 2, vec![]).is_err());
        assert!(ObservationSet::new(5, 5, 1, vec![]).is_err());
    }

    #[test]
    fn tensor_checks_shapes_and_gamma() {
        let a = Array2::from_elem((2, 2), 0.5);
        let b = Array2::from_elem((2, 3), 0.5);
        assert!(ParameterTensor::new(vec![a.clone(), b], None).is_err());
        assert!(ParameterTensor::new(vec![a.clone()], Some(0.4)).is_err());
        let t = ParameterTensor::new(vec![a.clone(), a], Some(0.5)).unwrap();
        assert_eq!(t.slice_count(), 2);
        assert_eq!(t.sup_norm(), 0.5);
        let nan = Array2::from_elem((1, 1), f64::NAN);
        assert!(ParameterTensor::new(vec![nan], None).is_err());
    }

    #[test]
    fn decomposition_serde_round_trip() {
        let d = random_decomposition(4, 3, 2, 99);
        let text = serde_json::to_string(&d).unwrap();
        let back: AtomicDecomposition = serde_json::from_str(&text).unwrap();
        assert_eq!(d, back);
    }
}
