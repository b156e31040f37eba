//! Data handling: synthetic ground truth, entry sampling, record-level
//! splits, the MovieLens rating format, and binary containers for
//! observation sets and dense truth tensors.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::sigmoid;
use crate::tensor::{Observation, ObservationSet, ParameterTensor};

/// Default signal amplitude for synthetic truth. Calibrated so the
/// default two-class and five-class experiments land in the moderate
/// noise regime where the regularized logistic fit separates visibly
/// from the Gaussian baseline.
pub const DEFAULT_GAMMA_SCALE: f64 = 0.6;

/// Default component amplitudes of the rank-five synthetic signal.
pub const DEFAULT_ALPHAS: [f64; 5] = [2.0, 1.0, 0.5, 0.25, 0.1];

/// Recipe for a synthetic low-rank ground truth tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m1: usize,
    pub m2: usize,
    pub classes: usize,
    /// Overall signal amplitude in front of the rank part.
    pub gamma_scale: f64,
    /// Per-component amplitudes of the rank part.
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(m1: usize, m2: usize, classes: usize, seed: u64) -> Self {
        Self {
            m1,
            m2,
            classes,
            gamma_scale: DEFAULT_GAMMA_SCALE,
            alphas: DEFAULT_ALPHAS.to_vec(),
            seed,
        }
    }

    pub fn with_gamma_scale(mut self, gamma_scale: f64) -> Self {
        self.gamma_scale = gamma_scale;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::domain("dimensions must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::domain("need at least two classes"));
        }
        if !(self.gamma_scale > 0.0) || !self.gamma_scale.is_finite() {
            return Err(Error::domain("gamma_scale must be positive and finite"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::domain("alphas must be positive and finite"));
        }
        if self.alphas.len() > self.m1.min(self.m2) {
            return Err(Error::domain("rank exceeds matrix dimensions"));
        }
        Ok(())
    }
}

/// Synthetic truth kept in factored per-slice form, so very large grids
/// never need a dense materialization.
#[derive(Debug, Clone)]
pub struct LowRankTruth {
    m1: usize,
    m2: usize,
    classes: usize,
    slices: Vec<SliceFactors>,
}

#[derive(Debug, Clone)]
struct SliceFactors {
    /// Component amplitudes with the global scale folded in.
    coeffs: Vec<f64>,
    us: Vec<Vec<f64>>,
    vs: Vec<Vec<f64>>,
    /// Constant offset making the center-class shares uniform.
    offset: f64,
}

impl LowRankTruth {
    pub fn rows(&self) -> usize {
        self.m1
    }

    pub fn cols(&self) -> usize {
        self.m2
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Value of slice `l` at `(i, j)`.
    pub fn entry(&self, l: usize, i: usize, j: usize) -> f64 {
        let s = &self.slices[l];
        let mut acc = s.offset;
        for ((&c, u), v) in s.coeffs.iter().zip(&s.us).zip(&s.vs) {
            acc += c * u[i] * v[j];
        }
        acc
    }

    /// Writes all slice values at `(i, j)` into `out` (length `K - 1`).
    pub fn entry_vector(&self, i: usize, j: usize, out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            *o = self.entry(l, i, j);
        }
    }

    /// Dense tensor with an exact sup-norm bound attached.
    pub fn to_dense(&self) -> Result<ParameterTensor> {
        let mut slices = Vec::with_capacity(self.slices.len());
        let mut sup = 0.0f64;
        for l in 0..self.slices.len() {
            let s = Array2::from_shape_fn((self.m1, self.m2), |(i, j)| self.entry(l, i, j));
            sup = s.iter().fold(sup, |acc, &v| acc.max(v.abs()));
            slices.push(s);
        }
        ParameterTensor::new(slices, Some(sup.max(f64::MIN_POSITIVE)))
    }
}

/// Offset applied to slice `l` (0-based) of a `classes`-class truth.
///
/// With all slice values at their offsets, the class shares are exactly
/// uniform: solving `sigma(eta_l) * prod_{l'<l} (1 - sigma(eta_l')) = 1/K`
/// forward gives `eta_l = -ln(K - l)` for 1-based `l`.
pub fn slice_offset(classes: usize, slice: usize) -> f64 {
    -(((classes - slice - 1) as f64).ln())
}

/// Draws the synthetic truth in factored form: slice `l` is
/// `gamma_scale * sqrt(m1 m2) * sum_k alpha_k u_k v_k^T + eta_l * 1`
/// with `u_k`, `v_k` uniform on the unit spheres, fresh per slice.
pub fn generate_truth_factors(spec: &SyntheticSpec) -> Result<LowRankTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.gamma_scale * ((spec.m1 * spec.m2) as f64).sqrt();
    let q = spec.classes - 1;
    let mut slices = Vec::with_capacity(q);
    for l in 0..q {
        let coeffs: Vec<f64> = spec.alphas.iter().map(|&a| scale * a).collect();
        let us: Vec<Vec<f64>> =
            (0..spec.alphas.len()).map(|_| random_unit(spec.m1, &mut rng)).collect();
        let vs: Vec<Vec<f64>> =
            (0..spec.alphas.len()).map(|_| random_unit(spec.m2, &mut rng)).collect();
        slices.push(SliceFactors { coeffs, us, vs, offset: slice_offset(spec.classes, l) });
    }
    Ok(LowRankTruth { m1: spec.m1, m2: spec.m2, classes: spec.classes, slices })
}

/// Dense synthetic truth; see [`generate_truth_factors`].
pub fn generate_truth(spec: &SyntheticSpec) -> Result<ParameterTensor> {
    generate_truth_factors(spec)?.to_dense()
}

/// Gaussian vector normalized to the unit sphere.
fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v = Vec::with_capacity(dim);
        while v.len() < dim {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            v.push(r * c);
            if v.len() < dim {
                v.push(r * s);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut v {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Lower bound enforced on `mu = m1 * m2 * min pi`.
pub const MU_FLOOR: f64 = 0.3;

/// Entry sampling distribution in product form, `pi_{ij} = r_i * c_j`.
///
/// Construction keeps the regularity quantities in range: `mu`, the
/// smallest entry probability scaled by `m1 * m2`, stays at or above
/// [`MU_FLOOR`], and `nu` bounds the scaled row and column marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    row_probs: Vec<f64>,
    col_probs: Vec<f64>,
    row_cdf: Vec<f64>,
    col_cdf: Vec<f64>,
}

impl SamplingDistribution {
    /// Uniform sampling over all entries, `mu = nu = 1`.
    pub fn uniform(m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::domain("dimensions must be positive"));
        }
        Ok(Self::from_probs(vec![1.0 / m1 as f64; m1], vec![1.0 / m2 as f64; m2]))
    }

    /// Non-uniform product distribution with log-uniform raw weights on
    /// `[1, 3]`, floored so `mu >= 0.3` still holds.
    pub fn row_column_product(m1: usize, m2: usize, seed: u64) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::domain("dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<f64> = (0..m1).map(|_| 3.0f64.powf(rng.gen::<f64>())).collect();
        let cols: Vec<f64> = (0..m2).map(|_| 3.0f64.powf(rng.gen::<f64>())).collect();
        let row_probs = floor_and_normalize(&rows, MU_FLOOR.sqrt() / m1 as f64)?;
        let col_probs = floor_and_normalize(&cols, MU_FLOOR.sqrt() / m2 as f64)?;
        Ok(Self::from_probs(row_probs, col_probs))
    }

    fn from_probs(row_probs: Vec<f64>, col_probs: Vec<f64>) -> Self {
        let cdf = |p: &[f64]| {
            let mut acc = 0.0;
            p.iter()
                .map(|&x| {
                    acc += x;
                    acc
                })
                .collect::<Vec<f64>>()
        };
        let row_cdf = cdf(&row_probs);
        let col_cdf = cdf(&col_probs);
        Self { row_probs, col_probs, row_cdf, col_cdf }
    }

    pub fn rows(&self) -> usize {
        self.row_probs.len()
    }

    pub fn cols(&self) -> usize {
        self.col_probs.len()
    }

    /// `m1 * m2 * min_{ij} pi_{ij}`; at least [`MU_FLOOR`] by
    /// construction.
    pub fn mu(&self) -> f64 {
        let min_r = self.row_probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_c = self.col_probs.iter().cloned().fold(f64::INFINITY, f64::min);
        (self.rows() * self.cols()) as f64 * min_r * min_c
    }

    /// `min(m1, m2) * max` over row and column marginals.
    pub fn nu(&self) -> f64 {
        let max_r = self.row_probs.iter().cloned().fold(0.0f64, f64::max);
        let max_c = self.col_probs.iter().cloned().fold(0.0f64, f64::max);
        self.rows().min(self.cols()) as f64 * max_r.max(max_c)
    }

    /// Probability of drawing entry `(i, j)`.
    pub fn entry_prob(&self, i: usize, j: usize) -> f64 {
        self.row_probs[i] * self.col_probs[j]
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (u32, u32) {
        let i = sample_cdf(&self.row_cdf, rng.gen::<f64>());
        let j = sample_cdf(&self.col_cdf, rng.gen::<f64>());
        (i as u32, j as u32)
    }
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Scales raw positive weights to a probability vector whose minimum is
/// at least `floor`, by waterfilling: find `t` with
/// `sum_i max(floor, t * raw_i) = 1`.
fn floor_and_normalize(raw: &[f64], floor: f64) -> Result<Vec<f64>> {
    if raw.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::domain("weights must be positive and finite"));
    }
    if floor * raw.len() as f64 >= 1.0 {
        return Err(Error::domain("floor is infeasible for this dimension"));
    }
    let total: f64 = raw.iter().sum();
    let mass_at = |t: f64| raw.iter().map(|&r| (t * r).max(floor)).sum::<f64>();
    // mass_at is increasing in t, below 1 at t=0 and at or above 1 at
    // t = 1/total.
    let mut lo = 0.0;
    let mut hi = 1.0 / total;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass_at(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let mut p: Vec<f64> = raw.iter().map(|&r| (t * r).max(floor)).collect();
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    Ok(p)
}

/// Samples `n` observations: entries from the sampling distribution,
/// labels from the conditional logit chain at the truth's parameters.
pub fn sample_observations(
    truth: &ParameterTensor,
    dist: &SamplingDistribution,
    n: usize,
    seed: u64,
) -> Result<ObservationSet> {
    if truth.rows() != dist.rows() || truth.cols() != dist.cols() {
        return Err(Error::structural("truth and sampling distribution shapes differ"));
    }
    let q = truth.slice_count();
    sample_core(
        truth.rows(),
        truth.cols(),
        q,
        |i, j, x| {
            for (l, o) in x.iter_mut().enumerate() {
                *o = truth.slice(l)[(i, j)];
            }
        },
        dist,
        n,
        seed,
    )
}

/// Same as [`sample_observations`] but reads the truth in factored form,
/// which is the only workable path for very large grids.
pub fn sample_observations_factored(
    truth: &LowRankTruth,
    dist: &SamplingDistribution,
    n: usize,
    seed: u64,
) -> Result<ObservationSet> {
    if truth.rows() != dist.rows() || truth.cols() != dist.cols() {
        return Err(Error::structural("truth and sampling distribution shapes differ"));
    }
    sample_core(
        truth.rows(),
        truth.cols(),
        truth.classes() - 1,
        |i, j, x| truth.entry_vector(i, j, x),
        dist,
        n,
        seed,
    )
}

fn sample_core(
    m1: usize,
    m2: usize,
    q: usize,
    mut fill: impl FnMut(usize, usize, &mut [f64]),
    dist: &SamplingDistribution,
    n: usize,
    seed: u64,
) -> Result<ObservationSet> {
    if n == 0 {
        return Err(Error::domain("sample size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; q];
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, j) = dist.sample(&mut rng);
        fill(i as usize, j as usize, &mut x);
        let label = conditional_draw(&x, &mut rng);
        records.push(Observation { row: i, col: j, label });
    }
    ObservationSet::new(m1, m2, q + 1, records)
}

/// One draw from the conditional chain: class `l + 1` fires with
/// probability `sigma(x_l)` given no earlier class fired; the last class
/// collects the remainder.
fn conditional_draw(x: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    for (l, &xl) in x.iter().enumerate() {
        if rng.gen::<f64>() < sigmoid(xl) {
            return l as u32 + 1;
        }
    }
    x.len() as u32 + 1
}

/// Record-level split into train, validation, and test parts.
///
/// `test_frac` of the records (rounded) become the test set; `val_frac`
/// of the remainder becomes validation. Records keep their original
/// relative order inside each part. Duplicated entries may land in
/// different parts, which is the correct behavior for multinomial draws.
pub fn split(
    set: &ObservationSet,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet, ObservationSet)> {
    check_frac("test_frac", test_frac)?;
    check_frac("val_frac", val_frac)?;
    let n = set.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = (n as f64 * test_frac).round() as usize;
    let n_val = ((n - n_test) as f64 * val_frac).round() as usize;
    let n_train = n.saturating_sub(n_test + n_val);
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::domain(format!(
            "split of {n} records into {n_train}/{n_val}/{n_test} leaves an empty part"
        )));
    }
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut val: Vec<usize> = idx[n_test..n_test + n_val].to_vec();
    let mut train: Vec<usize> = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok((set.select(&train)?, set.select(&val)?, set.select(&test)?))
}

/// Record-level split into a main part and a held-out part of the given
/// fraction.
pub fn holdout_split(
    set: &ObservationSet,
    held_frac: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet)> {
    check_frac("held_frac", held_frac)?;
    let n = set.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_held = (n as f64 * held_frac).round() as usize;
    if n_held == 0 || n_held == n {
        return Err(Error::domain(format!(
            "holdout of {n} records at fraction {held_frac} leaves an empty part"
        )));
    }
    let mut held: Vec<usize> = idx[..n_held].to_vec();
    let mut main: Vec<usize> = idx[n_held..].to_vec();
    held.sort_unstable();
    main.sort_unstable();
    Ok((set.select(&main)?, set.select(&held)?))
}

fn check_frac(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::domain(format!("{name} must lie strictly between 0 and 1")));
    }
    Ok(())
}

/// Collapses labels to two classes: `target` becomes class 1, everything
/// else class 2.
pub fn binarize_one_vs_rest(set: &ObservationSet, target: u32) -> Result<ObservationSet> {
    if target == 0 || target as usize > set.classes() {
        return Err(Error::domain(format!(
            "target class {target} outside 1..={}",
            set.classes()
        )));
    }
    let records = set
        .records()
        .iter()
        .map(|o| Observation {
            row: o.row,
            col: o.col,
            label: if o.label == target { 1 } else { 2 },
        })
        .collect();
    ObservationSet::new(set.rows(), set.cols(), 2, records)
}

/// Reads the MovieLens tab-separated rating format: one
/// `user<TAB>item<TAB>rating<TAB>timestamp` record per line, 1-based ids,
/// ratings 1 through 5. Dimensions come from the largest ids seen.
pub fn load_movielens(path: &Path) -> Result<ObservationSet> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut max_user = 0u32;
    let mut max_item = 0u32;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(Error::io(path))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let mut next_u32 = |what: &str| -> Result<u32> {
            let field = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("missing {what} field"),
            })?;
            field.trim().parse::<u32>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad {what} field {field:?}: {e}"),
            })
        };
        let user = next_u32("user")?;
        let item = next_u32("item")?;
        let rating = next_u32("rating")?;
        // The timestamp field is required by the format but unused.
        next_u32("timestamp")?;
        if user == 0 || item == 0 {
            return Err(Error::data(format!("line {line_no}: ids are 1-based, got 0")));
        }
        if !(1..=5).contains(&rating) {
            return Err(Error::data(format!(
                "line {line_no}: rating {rating} outside 1..=5"
            )));
        }
        max_user = max_user.max(user);
        max_item = max_item.max(item);
        records.push(Observation { row: user - 1, col: item - 1, label: rating });
    }
    if records.is_empty() {
        return Err(Error::data(format!("{}: no rating records found", path.display())));
    }
    ObservationSet::new(max_user as usize, max_item as usize, 5, records)
}

const DATASET_MAGIC: &[u8; 4] = b"MCDS";
const TRUTH_MAGIC: &[u8; 4] = b"MCTR";
const CONTAINER_VERSION: u32 = 1;

/// Metadata stored in the dataset container header. Shape fields are
/// filled from the observation set on write.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub m1: usize,
    pub m2: usize,
    pub classes: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
}

/// Writes an observation set with its metadata: a fixed magic and
/// version, a JSON header, then one little-endian `(row, col, label)`
/// `u32` triple per record in insertion order.
pub fn write_observations(path: &Path, set: &ObservationSet, meta: &DatasetHeader) -> Result<()> {
    let header = DatasetHeader {
        m1: set.rows(),
        m2: set.cols(),
        classes: set.classes(),
        n: set.len(),
        seed: meta.seed,
        generator: meta.generator.clone(),
        gamma_scale: meta.gamma_scale,
        distribution: meta.distribution.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io = Error::io(path);
    let result = (|| {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for r in set.records() {
            w.write_all(&r.row.to_le_bytes())?;
            w.write_all(&r.col.to_le_bytes())?;
            w.write_all(&r.label.to_le_bytes())?;
        }
        w.flush()
    })();
    result.map_err(io)
}

/// Reads a dataset container written by [`write_observations`].
pub fn read_observations(path: &Path) -> Result<(ObservationSet, DatasetHeader)> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    let header: DatasetHeader = read_container_header(&mut r, path, DATASET_MAGIC)?;
    let mut buf = [0u8; 12];
    let mut records = Vec::with_capacity(header.n);
    for i in 0..header.n {
        r.read_exact(&mut buf).map_err(|_| {
            Error::data(format!(
                "{}: truncated record section at record {i} of {}",
                path.display(),
                header.n
            ))
        })?;
        records.push(Observation {
            row: u32::from_le_bytes(buf[0..4].try_into().unwrap()),
            col: u32::from_le_bytes(buf[4..8].try_into().unwrap()),
            label: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
        });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(Error::io(path))? != 0 {
        return Err(Error::data(format!("{}: trailing bytes after records", path.display())));
    }
    let set = ObservationSet::new(header.m1, header.m2, header.classes, records)?;
    Ok((set, header))
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthHeader {
    m1: usize,
    m2: usize,
    slices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

/// Writes a dense parameter tensor: magic, version, JSON header, then
/// each slice as row-major little-endian `f64`.
pub fn write_truth(path: &Path, tensor: &ParameterTensor) -> Result<()> {
    let header = TruthHeader {
        m1: tensor.rows(),
        m2: tensor.cols(),
        slices: tensor.slice_count(),
        gamma: tensor.gamma(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let io = Error::io(path);
    let result = (|| {
        w.write_all(TRUTH_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for l in 0..tensor.slice_count() {
            for &v in tensor.slice(l).iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    result.map_err(io)
}

/// Reads a truth container written by [`write_truth`].
pub fn read_truth(path: &Path) -> Result<ParameterTensor> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    let header: TruthHeader = read_container_header(&mut r, path, TRUTH_MAGIC)?;
    let cells = header.m1 * header.m2;
    let mut slices = Vec::with_capacity(header.slices);
    let mut bytes = vec![0u8; cells * 8];
    for l in 0..header.slices {
        r.read_exact(&mut bytes).map_err(|_| {
            Error::data(format!("{}: truncated slice {l} of {}", path.display(), header.slices))
        })?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = Array2::from_shape_vec((header.m1, header.m2), values)
            .map_err(|e| Error::data(format!("{}: bad slice shape: {e}", path.display())))?;
        slices.push(arr);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(Error::io(path))? != 0 {
        return Err(Error::data(format!("{}: trailing bytes after slices", path.display())));
    }
    ParameterTensor::new(slices, header.gamma)
}

fn read_container_header<T: serde::de::DeserializeOwned>(
    r: &mut impl Read,
    path: &Path,
    magic: &[u8; 4],
) -> Result<T> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::data(format!("{}: file too short for a container", path.display())))?;
    if &head[0..4] != magic {
        return Err(Error::data(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            &head[0..4],
            magic
        )));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if header_len > 1 << 20 {
        return Err(Error::data(format!("{}: header length {header_len} is implausible", path.display())));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::data(format!("{}: truncated header", path.display())))?;
    Ok(serde_json::from_slice(&header_bytes)?)
}
