//! Penalty selection: geometric lambda grids anchored at the null
//! threshold, the rate-derived theoretical value, K-fold
//! cross-validation, and single-holdout selection with warm-started
//! paths.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::holdout_split;
use crate::error::{Error, Result};
use crate::gaussian::{fit_gaussian_grouped, GaussianFit};
use crate::link::LinkModel;
use crate::loss::{gradient_operator_norm, SliceProblem};
use crate::solver::{solve_grouped, FitReport, SolverConfig};
use crate::tensor::{AtomicDecomposition, GroupedObservations, ObservationSet};

/// Which observation model to tune.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Conditional logit over the label classes, one penalized slice per
    /// class boundary.
    Logistic,
    /// Squared loss on the raw labels with Gaussian binning.
    Gaussian,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Logistic => write!(f, "logistic"),
            ModelKind::Gaussian => write!(f, "gaussian"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "multinomial" => Ok(ModelKind::Logistic),
            "gaussian" | "squared" => Ok(ModelKind::Gaussian),
            other => Err(Error::domain(format!(
                "unknown model {other:?}, expected \"logistic\" or \"gaussian\""
            ))),
        }
    }
}

/// One fitted model, whichever kind was requested.
#[derive(Debug, Clone)]
pub enum ModelFit {
    Logistic(Vec<FitReport>),
    Gaussian(GaussianFit),
}

impl ModelFit {
    /// The lambda the fit was produced at.
    pub fn lambda(&self) -> f64 {
        match self {
            ModelFit::Logistic(reports) => reports[0].lambda,
            ModelFit::Gaussian(fit) => fit.report.lambda,
        }
    }

    /// Whether every slice solve reported convergence.
    pub fn converged(&self) -> bool {
        match self {
            ModelFit::Logistic(reports) => reports.iter().all(|r| r.converged),
            ModelFit::Gaussian(fit) => fit.report.converged,
        }
    }
}

/// Descending geometric grid of penalty values.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

/// The grid spans three decades below its ceiling.
const GRID_SPAN: f64 = 1e-3;

impl LambdaGrid {
    /// Grid sized for a sample of `n` draws: `ceil(0.6 ln n)` points (at
    /// least one), descending geometrically from `ceiling` to
    /// `ceiling / 1000`.
    ///
    /// `ceiling` should be the null threshold of the problem (the
    /// operator norm of the risk gradient at zero), so the first point
    /// reproduces the empty model and the rest sweep the useful range.
    pub fn geometric(ceiling: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("sample size must be positive"));
        }
        let points = (0.6 * (n as f64).ln()).ceil() as usize;
        Self::with_size(ceiling, points.max(1))
    }

    /// Same layout with an explicit point count.
    pub fn with_size(ceiling: f64, points: usize) -> Result<Self> {
        if !(ceiling > 0.0) || !ceiling.is_finite() {
            return Err(Error::domain("grid ceiling must be positive and finite"));
        }
        if points == 0 {
            return Err(Error::domain("grid needs at least one point"));
        }
        if points == 1 {
            return Ok(Self { values: vec![ceiling] });
        }
        let ratio = GRID_SPAN.powf(1.0 / (points - 1) as f64);
        let values = (0..points).map(|i| ceiling * ratio.powi(i as i32)).collect();
        Ok(Self { values })
    }

    /// Penalty values, largest first.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Penalty value suggested by the recovery guarantee:
/// `6 L sqrt(2 nu ln(m1 + m2) / (min(m1, m2) n))`, where `L` is the
/// Lipschitz constant of the per-class log-likelihood and `nu` bounds the
/// scaled row and column sampling marginals.
///
/// The constant targets the asymptotic regime; at moderate sample sizes
/// it tends to sit above the useful range, so data-driven selection is
/// the default everywhere and this value serves as a reference point.
pub fn theoretical_lambda(lipschitz: f64, nu: f64, n: usize, m1: usize, m2: usize) -> Result<f64> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::domain("lipschitz constant must be positive and finite"));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::domain("nu must be positive and finite"));
    }
    if n == 0 || m1 == 0 || m2 == 0 {
        return Err(Error::domain("sample size and dimensions must be positive"));
    }
    let m = m1.min(m2) as f64;
    let d = (m1 + m2) as f64;
    Ok(6.0 * lipschitz * (2.0 * nu * d.ln() / (m * n as f64)).sqrt())
}

/// Null threshold of the penalized problem on this data: the largest
/// gradient operator norm at the zero parameter across slices. Any
/// penalty at or above it admits the empty model as a solution.
pub fn gradient_ceiling(set: &ObservationSet, model: ModelKind) -> Result<f64> {
    grouped_ceiling(&set.grouped(), model)
}

fn grouped_ceiling(grouped: &GroupedObservations, model: ModelKind) -> Result<f64> {
    let slice_norm = |problem: &SliceProblem| -> Result<f64> {
        if problem.active_len() == 0 {
            return Ok(0.0);
        }
        let zeros = vec![0.0; problem.active_len()];
        Ok(gradient_operator_norm(&problem.gradient(&zeros)?))
    };
    match model {
        ModelKind::Logistic => {
            let q = grouped.classes() - 1;
            let mut ceiling = 0.0f64;
            for l in 0..q {
                ceiling = ceiling.max(slice_norm(&SliceProblem::multinomial(grouped, l)?)?);
            }
            Ok(ceiling)
        }
        ModelKind::Gaussian => slice_norm(&SliceProblem::squared(grouped)?),
    }
}

pub(crate) fn fit_grouped(
    grouped: &GroupedObservations,
    model: ModelKind,
    classes: usize,
    config: &SolverConfig,
    warm: Option<&ModelFit>,
) -> Result<ModelFit> {
    match model {
        ModelKind::Logistic => {
            let link = LinkModel::conditional_logit(classes)?;
            let warm_slices: Option<Vec<AtomicDecomposition>> = match warm {
                Some(ModelFit::Logistic(reports)) => {
                    Some(reports.iter().map(|r| r.decomposition.clone()).collect())
                }
                Some(ModelFit::Gaussian(_)) => {
                    return Err(Error::structural("warm start model kind mismatch"))
                }
                None => None,
            };
            Ok(ModelFit::Logistic(solve_grouped(grouped, &link, config, warm_slices.as_deref())?))
        }
        ModelKind::Gaussian => {
            let warm_dec = match warm {
                Some(ModelFit::Gaussian(fit)) => Some(&fit.report.decomposition),
                Some(ModelFit::Logistic(_)) => {
                    return Err(Error::structural("warm start model kind mismatch"))
                }
                None => None,
            };
            Ok(ModelFit::Gaussian(fit_gaussian_grouped(grouped, config, warm_dec)?))
        }
    }
}

/// Out-of-sample score of a fit on held-out records: mean negative
/// log-likelihood for the logistic model, mean squared label error for
/// the Gaussian baseline. Lower is better for both.
pub fn validation_score(fit: &ModelFit, held_out: &ObservationSet) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::domain("held-out set is empty"));
    }
    let coords: Vec<(u32, u32)> = held_out.records().iter().map(|o| (o.row, o.col)).collect();
    match fit {
        ModelFit::Logistic(reports) => {
            let q = held_out.classes() - 1;
            if reports.len() != q {
                return Err(Error::structural(format!(
                    "fit has {} slices but data has {} classes",
                    reports.len(),
                    held_out.classes()
                )));
            }
            let link = LinkModel::conditional_logit(held_out.classes())?;
            let per_slice: Vec<Vec<f64>> = reports
                .iter()
                .map(|r| r.decomposition.entry_values(&coords))
                .collect::<Result<_>>()?;
            let mut x = vec![0.0; q];
            let mut log_p = vec![0.0; held_out.classes()];
            let mut total = 0.0;
            for (r, o) in held_out.records().iter().enumerate() {
                for (l, xs) in x.iter_mut().enumerate() {
                    *xs = per_slice[l][r];
                }
                link.log_probs_into(&x, &mut log_p);
                total -= log_p[o.label as usize - 1];
            }
            Ok(total / held_out.len() as f64)
        }
        ModelFit::Gaussian(fit) => {
            let predicted = fit.report.decomposition.entry_values(&coords)?;
            let total: f64 = held_out
                .records()
                .iter()
                .zip(&predicted)
                .map(|(o, &p)| {
                    let d = o.label as f64 - p;
                    d * d
                })
                .sum();
            Ok(total / held_out.len() as f64)
        }
    }
}

/// Outcome of a K-fold cross-validation sweep.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// The shared penalty grid, largest value first.
    pub grid: Vec<f64>,
    /// `fold_scores[fold][grid_index]`, validation score per fit.
    pub fold_scores: Vec<Vec<f64>>,
    /// Scores averaged over folds.
    pub mean_scores: Vec<f64>,
    /// Index of the best mean score; ties go to the larger penalty.
    pub best_index: usize,
    pub best_lambda: f64,
}

/// Deterministic shuffled assignment of `n` records to `folds` parts of
/// near-equal size.
pub(crate) fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut members = vec![Vec::with_capacity(n / folds + 1); folds];
    for (p, &i) in idx.iter().enumerate() {
        members[p % folds].push(i);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    members
}

/// K-fold cross-validation over a geometric penalty grid.
///
/// The grid ceiling is the largest null threshold across the full set
/// and every fold's training part, so the first grid point is the empty
/// model everywhere. Within a fold the path is fit in descending order
/// with warm starts. Fold scores come from [`validation_score`].
pub fn cross_validate(
    set: &ObservationSet,
    model: ModelKind,
    base: &SolverConfig,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(Error::domain("cross-validation needs at least two folds"));
    }
    if set.len() < folds {
        return Err(Error::domain(format!(
            "cannot split {} records into {folds} folds",
            set.len()
        )));
    }
    let members = fold_partition(set.len(), folds, seed);
    let mut train_sets = Vec::with_capacity(folds);
    let mut val_sets = Vec::with_capacity(folds);
    let mut ceiling = grouped_ceiling(&set.grouped(), model)?;
    for fold in &members {
        let mut in_fold = vec![false; set.len()];
        for &i in fold {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..set.len()).filter(|&i| !in_fold[i]).collect();
        let train = set.select(&train_idx)?;
        ceiling = ceiling.max(gradient_ceiling(&train, model)?);
        train_sets.push(train);
        val_sets.push(set.select(fold)?);
    }
    if ceiling == 0.0 {
        return Err(Error::domain("data yields a zero gradient, nothing to tune"));
    }
    let grid = LambdaGrid::geometric(ceiling, set.len())?;

    let mut fold_scores = Vec::with_capacity(folds);
    for f in 0..folds {
        let grouped = train_sets[f].grouped();
        let mut warm: Option<ModelFit> = None;
        let mut scores = Vec::with_capacity(grid.len());
        for &lambda in grid.values() {
            let config = base.clone().with_lambda(lambda);
            let fit = fit_grouped(&grouped, model, set.classes(), &config, warm.as_ref())?;
            scores.push(validation_score(&fit, &val_sets[f])?);
            warm = Some(fit);
        }
        fold_scores.push(scores);
    }

    let mean_scores: Vec<f64> = (0..grid.len())
        .map(|g| fold_scores.iter().map(|s| s[g]).sum::<f64>() / folds as f64)
        .collect();
    let best_index = argmin(&mean_scores)?;
    Ok(CvResult {
        grid: grid.values().to_vec(),
        fold_scores,
        mean_scores,
        best_index,
        best_lambda: grid.values()[best_index],
    })
}

/// Settings for holdout-based penalty selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutOptions {
    /// Share of records held out for scoring.
    pub val_frac: f64,
    /// Seed of the holdout split.
    pub seed: u64,
    /// Grid points tolerated without improvement before the coarse
    /// sweep stops; `None` sweeps the whole grid.
    pub patience: Option<usize>,
    /// Interior candidates inserted into each grid gap adjacent to the
    /// coarse winner for a second, finer pass; zero disables it. The
    /// decade-spaced grid is coarse near its ceiling, where the best
    /// penalty often sits at small sample sizes, and the refinement pass
    /// recovers models the coarse sweep would round to null.
    pub refine: usize,
}

impl Default for HoldoutOptions {
    fn default() -> Self {
        Self { val_frac: 0.2, seed: 0, patience: Some(3), refine: 2 }
    }
}

/// Outcome of holdout-based penalty selection.
#[derive(Debug, Clone)]
pub struct HoldoutSelection {
    /// Full penalty grid, largest value first.
    pub grid: Vec<f64>,
    /// Validation scores for the evaluated prefix of the grid (early
    /// stopping may leave it shorter than the grid).
    pub scores: Vec<f64>,
    /// `(lambda, score)` pairs from the refinement pass, descending in
    /// lambda.
    pub refined: Vec<(f64, f64)>,
    /// Winning index of the coarse sweep.
    pub best_index: usize,
    /// Overall winning penalty across both passes.
    pub best_lambda: f64,
    /// The winning fit, trained on the non-held-out part. Useful as a
    /// warm start for a final refit on more data.
    pub best_fit: ModelFit,
}

/// Selects the penalty on a single held-out validation split.
///
/// The non-held-out part trains a descending warm-started path over the
/// geometric grid; each fit is scored on the held-out part. A second
/// pass then subdivides the grid gaps around the winner (see
/// [`HoldoutOptions::refine`]) and keeps whichever candidate scores
/// best overall.
pub fn select_holdout(
    set: &ObservationSet,
    model: ModelKind,
    base: &SolverConfig,
    opts: &HoldoutOptions,
) -> Result<HoldoutSelection> {
    if opts.patience == Some(0) {
        return Err(Error::domain("patience must be positive when set"));
    }
    let (train, val) = holdout_split(set, opts.val_frac, opts.seed)?;
    let ceiling =
        grouped_ceiling(&set.grouped(), model)?.max(gradient_ceiling(&train, model)?);
    if ceiling == 0.0 {
        return Err(Error::domain("data yields a zero gradient, nothing to tune"));
    }
    let grid = LambdaGrid::geometric(ceiling, set.len())?;
    let grouped = train.grouped();
    let classes = set.classes();

    let mut scores = Vec::new();
    let mut warm: Option<ModelFit> = None;
    let mut best_index = 0;
    let mut best_score = f64::INFINITY;
    let mut best_fit: Option<ModelFit> = None;
    for (gi, &lambda) in grid.values().iter().enumerate() {
        let config = base.clone().with_lambda(lambda);
        let fit = fit_grouped(&grouped, model, classes, &config, warm.as_ref())?;
        let score = validation_score(&fit, &val)?;
        scores.push(score);
        if score < best_score {
            best_score = score;
            best_index = gi;
            best_fit = Some(fit.clone());
        }
        warm = Some(fit);
        if let Some(p) = opts.patience {
            if gi - best_index >= p {
                break;
            }
        }
    }
    let mut best_fit = best_fit.expect("grid is non-empty");
    let mut best_lambda = grid.values()[best_index];

    let mut refined = Vec::new();
    if opts.refine > 0 && grid.len() > 1 {
        let g = grid.values();
        let mut candidates = Vec::new();
        let push_gap = |hi: f64, lo: f64, out: &mut Vec<f64>| {
            let step = (lo / hi).powf(1.0 / (opts.refine + 1) as f64);
            for k in 1..=opts.refine {
                out.push(hi * step.powi(k as i32));
            }
        };
        if best_index > 0 {
            push_gap(g[best_index - 1], g[best_index], &mut candidates);
        }
        if best_index + 1 < g.len() {
            push_gap(g[best_index], g[best_index + 1], &mut candidates);
        }
        candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());

        let mut warm = Some(best_fit.clone());
        for lambda in candidates {
            let config = base.clone().with_lambda(lambda);
            let fit = fit_grouped(&grouped, model, classes, &config, warm.as_ref())?;
            let score = validation_score(&fit, &val)?;
            refined.push((lambda, score));
            if score < best_score {
                best_score = score;
                best_lambda = lambda;
                best_fit = fit.clone();
            }
            warm = Some(fit);
        }
    }

    Ok(HoldoutSelection {
        grid: grid.values().to_vec(),
        scores,
        refined,
        best_index,
        best_lambda,
        best_fit,
    })
}

fn argmin(scores: &[f64]) -> Result<usize> {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::numerical(format!("non-finite validation score at index {i}")));
        }
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_truth, sample_observations, SamplingDistribution, SyntheticSpec};
    use crate::link::sigmoid;

    #[test]
    fn grid_size_follows_log_rule() {
        assert_eq!(LambdaGrid::geometric(1.0, 1000).unwrap().len(), 5);
        assert_eq!(LambdaGrid::geometric(1.0, 1).unwrap().len(), 1);
        assert_eq!(LambdaGrid::geometric(1.0, 10_000).unwrap().len(), 6);
        assert_eq!(LambdaGrid::geometric(1.0, 500_000).unwrap().len(), 8);
    }

    #[test]
    fn grid_is_geometric_and_spans_three_decades() {
        let g = LambdaGrid::with_size(2.0, 7).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g.values()[0], 2.0);
        assert!((g.values()[6] - 2.0e-3).abs() < 1e-15);
        let ratio = g.values()[1] / g.values()[0];
        for i in 1..7 {
            assert!((g.values()[i] / g.values()[i - 1] - ratio).abs() < 1e-12);
            assert!(g.values()[i] < g.values()[i - 1]);
        }
        assert_eq!(LambdaGrid::with_size(5.0, 1).unwrap().values(), &[5.0]);
        assert!(LambdaGrid::with_size(0.0, 3).is_err());
        assert!(LambdaGrid::with_size(1.0, 0).is_err());
        assert!(LambdaGrid::geometric(1.0, 0).is_err());
    }

    #[test]
    fn theoretical_lambda_reference_values() {
        let cases: [(f64, f64, usize, usize, usize, f64); 5] = [
            (0.5, 1.0, 10_000, 100, 100, 0.00976574178431237553),
            (sigmoid(1.0), 1.0, 10_000, 100, 100, 0.0142786586162141059),
            (sigmoid(2.0), 1.5, 500_000, 1000, 600, 0.00143545421599400493),
            (sigmoid(0.8), 3.0, 100_000, 500, 300, 0.00478671279112019037),
            (0.75, 2.25, 12_345, 321, 123, 0.0191265613384386839),
        ];
        for (l, nu, n, m1, m2, want) in cases {
            let got = theoretical_lambda(l, nu, n, m1, m2).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * want,
                "L={l} nu={nu} n={n} {m1}x{m2}: got {got:.20}, want {want:.20}"
            );
        }
    }

    #[test]
    fn theoretical_lambda_rejects_bad_inputs() {
        assert!(theoretical_lambda(0.0, 1.0, 10, 5, 5).is_err());
        assert!(theoretical_lambda(0.5, 0.0, 10, 5, 5).is_err());
        assert!(theoretical_lambda(0.5, f64::NAN, 10, 5, 5).is_err());
        assert!(theoretical_lambda(0.5, 1.0, 0, 5, 5).is_err());
        assert!(theoretical_lambda(0.5, 1.0, 10, 0, 5).is_err());
    }

    #[test]
    fn fold_partition_covers_everything() {
        let parts = fold_partition(23, 5, 9);
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert_eq!(*sizes.iter().max().unwrap(), 5);
        assert_eq!(*sizes.iter().min().unwrap(), 4);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(parts, fold_partition(23, 5, 9));
        assert_ne!(parts, fold_partition(23, 5, 10));
    }

    fn small_set(classes: usize, n: usize, seed: u64) -> ObservationSet {
        let spec = SyntheticSpec::new(10, 8, classes, seed);
        let truth = generate_truth(&spec).unwrap();
        let dist = SamplingDistribution::uniform(10, 8).unwrap();
        sample_observations(&truth, &dist, n, seed + 1).unwrap()
    }

    #[test]
    fn ceiling_matches_manual_gradient_norm() {
        let set = small_set(3, 400, 5);
        let grouped = set.grouped();
        let mut manual = 0.0f64;
        for l in 0..2 {
            let p = SliceProblem::multinomial(&grouped, l).unwrap();
            let zeros = vec![0.0; p.active_len()];
            manual = manual.max(gradient_operator_norm(&p.gradient(&zeros).unwrap()));
        }
        let got = gradient_ceiling(&set, ModelKind::Logistic).unwrap();
        assert!((got - manual).abs() <= 1e-12 * manual.max(1.0));
        assert!(gradient_ceiling(&set, ModelKind::Gaussian).unwrap() > 0.0);
    }

    #[test]
    fn cross_validation_runs_and_selects() {
        let set = small_set(2, 600, 11);
        let base = SolverConfig::new(0.0).with_seed(3);
        let cv = cross_validate(&set, ModelKind::Logistic, &base, 3, 7).unwrap();
        assert_eq!(cv.fold_scores.len(), 3);
        for f in &cv.fold_scores {
            assert_eq!(f.len(), cv.grid.len());
            for &s in f {
                assert!(s.is_finite() && s > 0.0);
            }
        }
        assert_eq!(cv.mean_scores.len(), cv.grid.len());
        let manual_best = cv
            .mean_scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(cv.best_index, manual_best);
        assert_eq!(cv.best_lambda, cv.grid[cv.best_index]);
        // The top of the grid is the null model; it scores close to the
        // zero-parameter log loss, ln 2 for two classes.
        let null_score = cv.mean_scores[0];
        assert!((null_score - std::f64::consts::LN_2).abs() < 1e-9);
        // Fitting helps: some grid point beats the null model.
        assert!(cv.mean_scores[cv.best_index] < null_score);

        let again = cross_validate(&set, ModelKind::Logistic, &base, 3, 7).unwrap();
        assert_eq!(cv.mean_scores, again.mean_scores);
    }

    #[test]
    fn cross_validation_rejects_degenerate_setups() {
        let set = small_set(2, 30, 1);
        let base = SolverConfig::new(0.0);
        assert!(cross_validate(&set, ModelKind::Logistic, &base, 1, 0).is_err());
        let tiny = small_set(2, 3, 1);
        assert!(cross_validate(&tiny, ModelKind::Logistic, &base, 5, 0).is_err());
    }

    #[test]
    fn holdout_selection_tracks_best_score() {
        let set = small_set(3, 800, 2);
        let base = SolverConfig::new(0.0).with_seed(1);
        let opts = HoldoutOptions { val_frac: 0.25, seed: 5, patience: None, refine: 0 };
        let sel = select_holdout(&set, ModelKind::Logistic, &base, &opts).unwrap();
        assert_eq!(sel.scores.len(), sel.grid.len());
        assert!(sel.refined.is_empty());
        let manual_best = sel
            .scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(sel.best_index, manual_best);
        assert_eq!(sel.best_lambda, sel.grid[sel.best_index]);
        assert_eq!(sel.best_fit.lambda(), sel.best_lambda);

        // Early stopping evaluates a prefix and preserves the argmin of
        // what it saw.
        let stopped = select_holdout(
            &set,
            ModelKind::Logistic,
            &base,
            &HoldoutOptions { patience: Some(2), ..opts },
        )
        .unwrap();
        assert!(stopped.scores.len() <= sel.scores.len());
        assert_eq!(stopped.scores, sel.scores[..stopped.scores.len()]);
        assert!(stopped.scores.len() >= stopped.best_index + 1);
        let bad = HoldoutOptions { patience: Some(0), ..opts };
        assert!(select_holdout(&set, ModelKind::Logistic, &base, &bad).is_err());
    }

    #[test]
    fn holdout_refinement_probes_adjacent_gaps() {
        let set = small_set(2, 900, 14);
        let base = SolverConfig::new(0.0).with_seed(1);
        let coarse = HoldoutOptions { val_frac: 0.25, seed: 2, patience: None, refine: 0 };
        let sel0 = select_holdout(&set, ModelKind::Logistic, &base, &coarse).unwrap();
        let refined_opts = HoldoutOptions { refine: 2, ..coarse };
        let sel = select_holdout(&set, ModelKind::Logistic, &base, &refined_opts).unwrap();

        // The coarse stage is unchanged.
        assert_eq!(sel.scores, sel0.scores);
        assert_eq!(sel.best_index, sel0.best_index);
        assert!(!sel.refined.is_empty());

        // Candidates sit strictly inside the gaps next to the winner,
        // in descending order.
        let b = sel.best_index;
        let hi = if b > 0 { sel.grid[b - 1] } else { sel.grid[b] };
        let lo = sel.grid[(b + 1).min(sel.grid.len() - 1)];
        for window in sel.refined.windows(2) {
            assert!(window[0].0 > window[1].0);
        }
        for &(lambda, score) in &sel.refined {
            assert!(lambda < hi && lambda > lo, "lambda {lambda} outside ({lo}, {hi})");
            assert!(score.is_finite());
        }

        // The overall winner has the smallest score seen anywhere.
        let coarse_min =
            sel.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let refined_min =
            sel.refined.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
        let overall = coarse_min.min(refined_min);
        let winner_score = if sel.best_lambda == sel.grid[b] {
            sel.scores[b]
        } else {
            sel.refined.iter().find(|&&(l, _)| l == sel.best_lambda).unwrap().1
        };
        assert_eq!(winner_score, overall);
        assert_eq!(sel.best_fit.lambda(), sel.best_lambda);
    }

    #[test]
    fn holdout_works_for_the_gaussian_model() {
        let set = small_set(5, 700, 8);
        let base = SolverConfig::new(0.0).with_seed(2);
        let opts = HoldoutOptions { val_frac: 0.2, seed: 3, patience: Some(3), refine: 2 };
        let sel = select_holdout(&set, ModelKind::Gaussian, &base, &opts).unwrap();
        assert!(sel.best_lambda > 0.0);
        match &sel.best_fit {
            ModelFit::Gaussian(fit) => assert!(fit.sigma_hat > 0.0),
            other => panic!("expected gaussian fit, got {other:?}"),
        }
        for &s in &sel.scores {
            assert!(s.is_finite() && s > 0.0);
        }
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("logistic".parse::<ModelKind>().unwrap(), ModelKind::Logistic);
        assert_eq!("Gaussian".parse::<ModelKind>().unwrap(), ModelKind::Gaussian);
        assert!("linear".parse::<ModelKind>().is_err());
    }
}
