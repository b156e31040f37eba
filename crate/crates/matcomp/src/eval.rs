//! Evaluation of fitted models on held-out records: prediction error
//! with a full confusion matrix, and, when the generating truth is
//! available, KL divergence, squared Hellinger distance, and Frobenius
//! error of the recovered parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_class_probs, GaussianFit};
use crate::link::{hellinger_sq_probs, LinkModel};
use crate::solver::FitReport;
use crate::tensor::{ObservationSet, ParameterTensor};
use crate::tuning::ModelKind;

/// Probabilities below this floor are clamped before taking logs in
/// cross-model KL computations, where binned tails can underflow to
/// exact zero.
const LOG_FLOOR: f64 = 1e-300;

/// Identifying information attached to every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub model: ModelKind,
    pub m1: usize,
    pub m2: usize,
    pub classes: usize,
    /// Number of records the evaluated model was trained on.
    pub n_train: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Total solver wall time behind this model, in seconds.
    pub wall_time_secs: f64,
    pub test_size: usize,
    /// Order-sensitive digest of the test records; reports are only
    /// comparable when their digests match.
    pub test_digest: u64,
}

/// Metrics of one fitted model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: EvalMetadata,
    /// Share of test records whose most probable class differs from the
    /// observed label.
    pub prediction_error: f64,
    /// `classes x classes` counts in row-major order, true label by
    /// predicted label.
    pub confusion: Vec<u64>,
    /// Mean KL divergence from the true to the estimated per-entry class
    /// distribution, averaged over all matrix cells. Needs the truth.
    pub kl: Option<f64>,
    /// [`EvalReport::kl`] further divided by the number of classes.
    pub kl_per_class: Option<f64>,
    /// Mean squared Hellinger distance (`sum (sqrt p - sqrt q)^2`)
    /// between true and estimated distributions over all cells.
    pub hellinger_sq: Option<f64>,
    /// `sum_l ||X_l - Xhat_l||_F^2 / (m1 m2)` over parameter slices;
    /// only defined when the fit shares the truth's parametrization.
    pub frobenius: Option<f64>,
}

/// Order-sensitive FNV-1a digest of a record set, including its shape.
pub fn observation_digest(set: &ObservationSet) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(set.rows() as u64);
    eat(set.cols() as u64);
    eat(set.classes() as u64);
    eat(set.len() as u64);
    for o in set.records() {
        eat(o.row as u64);
        eat(o.col as u64);
        eat(o.label as u64);
    }
    h
}

/// Index of the largest probability; ties go to the smaller class.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Errors unless both reports were computed on the same test records.
pub fn check_comparable(a: &EvalReport, b: &EvalReport) -> Result<()> {
    if a.metadata.test_size != b.metadata.test_size
        || a.metadata.test_digest != b.metadata.test_digest
    {
        return Err(Error::data(
            "evaluation reports come from different test sets and are not comparable",
        ));
    }
    Ok(())
}

/// Scores a fitted conditional logit model on held-out records.
///
/// With `truth` supplied, also compares the recovered parameter tensor
/// to the truth through KL, Hellinger, and Frobenius metrics.
pub fn evaluate_logistic(
    reports: &[FitReport],
    test: &ObservationSet,
    truth: Option<&ParameterTensor>,
    n_train: usize,
    seed: u64,
) -> Result<EvalReport> {
    let classes = test.classes();
    let q = classes - 1;
    if reports.len() != q {
        return Err(Error::structural(format!(
            "{} slice fits cannot serve {classes}-class data",
            reports.len()
        )));
    }
    for r in reports {
        if r.decomposition.rows() != test.rows() || r.decomposition.cols() != test.cols() {
            return Err(Error::structural("fit and test set shapes differ"));
        }
    }
    if test.is_empty() {
        return Err(Error::domain("test set is empty"));
    }
    let link = LinkModel::conditional_logit(classes)?;

    let coords: Vec<(u32, u32)> = test.records().iter().map(|o| (o.row, o.col)).collect();
    let per_slice: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| r.decomposition.entry_values(&coords))
        .collect::<Result<_>>()?;
    let mut confusion = vec![0u64; classes * classes];
    let mut x = vec![0.0; q];
    let mut log_p = vec![0.0; classes];
    for (r, o) in test.records().iter().enumerate() {
        for (l, xs) in x.iter_mut().enumerate() {
            *xs = per_slice[l][r];
        }
        link.log_probs_into(&x, &mut log_p);
        let pred = argmax(&log_p);
        confusion[(o.label as usize - 1) * classes + pred] += 1;
    }

    let mut kl = None;
    let mut hellinger_sq = None;
    let mut frobenius = None;
    if let Some(truth) = truth {
        let estimated = ParameterTensor::new(
            reports.iter().map(|r| r.decomposition.reconstruct()).collect(),
            None,
        )?;
        kl = Some(link.kl_divergence(truth, &estimated)?);
        hellinger_sq = Some(link.hellinger_sq(truth, &estimated)?);
        let cells = (truth.rows() * truth.cols()) as f64;
        let fro: f64 = (0..q)
            .map(|l| {
                truth
                    .slice(l)
                    .iter()
                    .zip(estimated.slice(l).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        frobenius = Some(fro / cells);
    }

    Ok(EvalReport {
        metadata: EvalMetadata {
            model: ModelKind::Logistic,
            m1: test.rows(),
            m2: test.cols(),
            classes,
            n_train,
            lambda: reports[0].lambda,
            seed,
            wall_time_secs: reports.iter().map(|r| r.wall_time_secs).sum(),
            test_size: test.len(),
            test_digest: observation_digest(test),
        },
        prediction_error: prediction_error_from(&confusion, test.len()),
        confusion,
        kl_per_class: kl.map(|v| v / classes as f64),
        kl,
        hellinger_sq,
        frobenius,
    })
}

/// Scores a fitted Gaussian baseline on held-out records.
///
/// The truth comparison bins the fitted real matrix into class
/// probabilities and measures KL and Hellinger against the truth's
/// conditional logit distribution; Frobenius error is undefined across
/// the two parametrizations and stays empty.
pub fn evaluate_gaussian(
    fit: &GaussianFit,
    test: &ObservationSet,
    truth: Option<&ParameterTensor>,
    n_train: usize,
    seed: u64,
) -> Result<EvalReport> {
    let classes = test.classes();
    if fit.classes != classes {
        return Err(Error::structural(format!(
            "fit with {} classes cannot serve {classes}-class data",
            fit.classes
        )));
    }
    let dec = &fit.report.decomposition;
    if dec.rows() != test.rows() || dec.cols() != test.cols() {
        return Err(Error::structural("fit and test set shapes differ"));
    }
    if test.is_empty() {
        return Err(Error::domain("test set is empty"));
    }

    let coords: Vec<(u32, u32)> = test.records().iter().map(|o| (o.row, o.col)).collect();
    let predicted = dec.entry_values(&coords)?;
    let mut confusion = vec![0u64; classes * classes];
    for (o, &xhat) in test.records().iter().zip(&predicted) {
        let probs = gaussian_class_probs(xhat, fit.sigma_hat, classes)?;
        confusion[(o.label as usize - 1) * classes + argmax(&probs)] += 1;
    }

    let mut kl = None;
    let mut hellinger_sq = None;
    if let Some(truth) = truth {
        if truth.slice_count() != classes - 1 {
            return Err(Error::structural("truth slice count does not match the class count"));
        }
        if truth.rows() != test.rows() || truth.cols() != test.cols() {
            return Err(Error::structural("truth and test set shapes differ"));
        }
        let link = LinkModel::conditional_logit(classes)?;
        let xhat = dec.reconstruct();
        let q = classes - 1;
        let mut xt = vec![0.0; q];
        let mut log_t = vec![0.0; classes];
        let mut p_t = vec![0.0; classes];
        let mut kl_acc = 0.0;
        let mut hel_acc = 0.0;
        for i in 0..truth.rows() {
            for j in 0..truth.cols() {
                for (l, xs) in xt.iter_mut().enumerate() {
                    *xs = truth.slice(l)[(i, j)];
                }
                link.log_probs_into(&xt, &mut log_t);
                for (pk, &lk) in p_t.iter_mut().zip(&log_t) {
                    *pk = lk.exp();
                }
                let p_e = gaussian_class_probs(xhat[(i, j)], fit.sigma_hat, classes)?;
                for k in 0..classes {
                    if p_t[k] > 0.0 {
                        kl_acc += p_t[k] * (log_t[k] - p_e[k].max(LOG_FLOOR).ln());
                    }
                }
                hel_acc += hellinger_sq_probs(&p_t, &p_e);
            }
        }
        let cells = (truth.rows() * truth.cols()) as f64;
        kl = Some(kl_acc / cells);
        hellinger_sq = Some(hel_acc / cells);
    }

    Ok(EvalReport {
        metadata: EvalMetadata {
            model: ModelKind::Gaussian,
            m1: test.rows(),
            m2: test.cols(),
            classes,
            n_train,
            lambda: fit.report.lambda,
            seed,
            wall_time_secs: fit.report.wall_time_secs,
            test_size: test.len(),
            test_digest: observation_digest(test),
        },
        prediction_error: prediction_error_from(&confusion, test.len()),
        confusion,
        kl_per_class: kl.map(|v| v / classes as f64),
        kl,
        hellinger_sq,
        frobenius: None,
    })
}

fn prediction_error_from(confusion: &[u64], total: usize) -> f64 {
    let classes = (confusion.len() as f64).sqrt() as usize;
    let correct: u64 = (0..classes).map(|k| confusion[k * classes + k]).sum();
    1.0 - correct as f64 / total as f64
}

/// Flat row used for the CSV rendering of [`EvalReport`].
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    model: String,
    m1: usize,
    m2: usize,
    classes: usize,
    n_train: usize,
    lambda: f64,
    seed: u64,
    wall_time_secs: f64,
    test_size: usize,
    test_digest: u64,
    prediction_error: f64,
    kl: Option<f64>,
    kl_per_class: Option<f64>,
    hellinger_sq: Option<f64>,
    frobenius: Option<f64>,
    /// Row-major confusion counts joined by semicolons.
    confusion: String,
}

impl CsvRow {
    fn from_report(r: &EvalReport) -> Self {
        CsvRow {
            model: r.metadata.model.to_string(),
            m1: r.metadata.m1,
            m2: r.metadata.m2,
            classes: r.metadata.classes,
            n_train: r.metadata.n_train,
            lambda: r.metadata.lambda,
            seed: r.metadata.seed,
            wall_time_secs: r.metadata.wall_time_secs,
            test_size: r.metadata.test_size,
            test_digest: r.metadata.test_digest,
            prediction_error: r.prediction_error,
            kl: r.kl,
            kl_per_class: r.kl_per_class,
            hellinger_sq: r.hellinger_sq,
            frobenius: r.frobenius,
            confusion: r.confusion.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        }
    }

    fn into_report(self) -> Result<EvalReport> {
        let confusion: Vec<u64> = if self.confusion.is_empty() {
            Vec::new()
        } else {
            self.confusion
                .split(';')
                .map(|t| {
                    t.parse::<u64>()
                        .map_err(|e| Error::data(format!("bad confusion entry {t:?}: {e}")))
                })
                .collect::<Result<_>>()?
        };
        if confusion.len() != self.classes * self.classes {
            return Err(Error::data(format!(
                "confusion has {} entries, expected {}",
                confusion.len(),
                self.classes * self.classes
            )));
        }
        Ok(EvalReport {
            metadata: EvalMetadata {
                model: self.model.parse()?,
                m1: self.m1,
                m2: self.m2,
                classes: self.classes,
                n_train: self.n_train,
                lambda: self.lambda,
                seed: self.seed,
                wall_time_secs: self.wall_time_secs,
                test_size: self.test_size,
                test_digest: self.test_digest,
            },
            prediction_error: self.prediction_error,
            confusion,
            kl: self.kl,
            kl_per_class: self.kl_per_class,
            hellinger_sq: self.hellinger_sq,
            frobenius: self.frobenius,
        })
    }
}

/// Writes reports as CSV, one row per report; empty cells for metrics
/// that were not computed.
pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in reports {
        w.serialize(CsvRow::from_report(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Reads back a CSV written by [`write_eval_csv`].
pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<CsvRow>() {
        out.push(row.map_err(|e| csv_error(path, e))?.into_report()?);
    }
    Ok(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io { path: path.to_path_buf(), source: io },
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

/// Writes reports as pretty-printed JSON.
pub fn write_eval_json(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), reports)?;
    Ok(())
}

/// Reads back a JSON file written by [`write_eval_json`].
pub fn read_eval_json(path: &Path) -> Result<Vec<EvalReport>> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_truth, sample_observations, SamplingDistribution, SyntheticSpec};
    use crate::solver::Certificate;
    use crate::tensor::{Atom, AtomicDecomposition, Observation};

    fn fake_report(dec: AtomicDecomposition, slice: usize) -> FitReport {
        FitReport {
            decomposition: dec,
            slice,
            lambda: 0.05,
            epsilon: 1e-4,
            objective_trace: vec![0.7],
            certificate: Certificate { atom_gap: 0.0, support_violation: 0.0 },
            iterations: 1,
            wall_time_secs: 0.25,
            converged: true,
            max_abs_entry: 1.0,
        }
    }

    fn truth_and_test(classes: usize, n: usize, seed: u64) -> (ParameterTensor, ObservationSet) {
        let spec = SyntheticSpec::new(8, 6, classes, seed);
        let truth = generate_truth(&spec).unwrap();
        let dist = SamplingDistribution::uniform(8, 6).unwrap();
        let test = sample_observations(&truth, &dist, n, seed + 1).unwrap();
        (truth, test)
    }

    #[test]
    fn digest_is_deterministic_and_content_sensitive() {
        let (_, a) = truth_and_test(3, 50, 1);
        let (_, b) = truth_and_test(3, 50, 1);
        assert_eq!(observation_digest(&a), observation_digest(&b));
        let (_, c) = truth_and_test(3, 50, 2);
        assert_ne!(observation_digest(&a), observation_digest(&c));
        // Order matters: reversing the records changes the digest.
        let mut rev = a.records().to_vec();
        rev.reverse();
        let reversed = ObservationSet::new(a.rows(), a.cols(), a.classes(), rev).unwrap();
        assert_ne!(observation_digest(&a), observation_digest(&reversed));
    }

    #[test]
    fn null_model_predicts_the_first_class_on_ties() {
        // An empty decomposition yields x = 0 everywhere, so for two
        // classes both probabilities are exactly one half and the tie
        // breaks toward class one.
        let records = vec![
            Observation { row: 0, col: 0, label: 1 },
            Observation { row: 0, col: 1, label: 2 },
            Observation { row: 1, col: 0, label: 2 },
        ];
        let test = ObservationSet::new(2, 2, 2, records).unwrap();
        let report = fake_report(AtomicDecomposition::empty(2, 2), 0);
        let eval = evaluate_logistic(&[report], &test, None, 10, 0).unwrap();
        assert!((eval.prediction_error - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval.confusion, vec![1, 0, 2, 0]);
        assert_eq!(eval.kl, None);
        assert_eq!(eval.frobenius, None);
        assert_eq!(eval.metadata.test_size, 3);
    }

    #[test]
    fn perfect_logistic_fit_zeroes_truth_metrics() {
        let (truth, test) = truth_and_test(3, 200, 4);
        // Build slice fits whose reconstruction equals the truth by
        // decomposing each slice into its rank-one pieces cell by cell.
        let reports: Vec<FitReport> = (0..2)
            .map(|l| {
                let mut dec = AtomicDecomposition::empty(8, 6);
                // One atom per column reproduces the slice exactly.
                for j in 0..6 {
                    let col: Vec<f64> = (0..8).map(|i| truth.slice(l)[(i, j)]).collect();
                    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let mut e = vec![0.0; 6];
                    e[j] = 1.0;
                    dec.push(Atom::new(col, e).unwrap(), norm).unwrap();
                }
                fake_report(dec, l)
            })
            .collect();
        let eval = evaluate_logistic(&reports, &test, Some(&truth), 100, 7).unwrap();
        assert!(eval.kl.unwrap().abs() < 1e-12, "kl {:?}", eval.kl);
        assert!(eval.hellinger_sq.unwrap().abs() < 1e-12);
        assert!(eval.frobenius.unwrap() < 1e-20);
        assert!((eval.kl_per_class.unwrap() - eval.kl.unwrap() / 3.0).abs() < 1e-18);
        let total: u64 = eval.confusion.iter().sum();
        assert_eq!(total as usize, test.len());
    }

    #[test]
    fn gaussian_evaluation_produces_finite_metrics() {
        let (truth, test) = truth_and_test(5, 300, 9);
        let fit = GaussianFit {
            report: fake_report(AtomicDecomposition::empty(8, 6), 0),
            sigma_hat: 1.0,
            classes: 5,
        };
        let eval = evaluate_gaussian(&fit, &test, Some(&truth), 200, 3).unwrap();
        assert!(eval.prediction_error >= 0.0 && eval.prediction_error <= 1.0);
        let kl = eval.kl.unwrap();
        assert!(kl.is_finite() && kl > 0.0);
        let hel = eval.hellinger_sq.unwrap();
        assert!(hel > 0.0 && hel < 2.0);
        assert_eq!(eval.frobenius, None);
        assert_eq!(eval.metadata.model, ModelKind::Gaussian);
    }

    #[test]
    fn evaluation_validates_shapes() {
        let (truth, test) = truth_and_test(3, 50, 5);
        // Wrong slice count for the class count.
        let one = vec![fake_report(AtomicDecomposition::empty(8, 6), 0)];
        assert!(evaluate_logistic(&one, &test, None, 10, 0).is_err());
        // Wrong matrix shape.
        let wrong = vec![
            fake_report(AtomicDecomposition::empty(9, 6), 0),
            fake_report(AtomicDecomposition::empty(9, 6), 1),
        ];
        assert!(evaluate_logistic(&wrong, &test, None, 10, 0).is_err());
        // Gaussian with mismatched class count.
        let fit = GaussianFit {
            report: fake_report(AtomicDecomposition::empty(8, 6), 0),
            sigma_hat: 1.0,
            classes: 4,
        };
        assert!(evaluate_gaussian(&fit, &test, Some(&truth), 10, 0).is_err());
    }

    #[test]
    fn comparability_requires_matching_test_sets() {
        let (_, test_a) = truth_and_test(2, 60, 1);
        let (_, test_b) = truth_and_test(2, 60, 2);
        let dec = AtomicDecomposition::empty(8, 6);
        let ra = evaluate_logistic(&[fake_report(dec.clone(), 0)], &test_a, None, 5, 0).unwrap();
        let rb = evaluate_logistic(&[fake_report(dec.clone(), 0)], &test_b, None, 5, 0).unwrap();
        let ra2 = evaluate_logistic(&[fake_report(dec, 0)], &test_a, None, 9, 1).unwrap();
        assert!(check_comparable(&ra, &rb).is_err());
        assert!(check_comparable(&ra, &ra2).is_ok());
    }

    #[test]
    fn csv_and_json_round_trips() {
        let (truth, test) = truth_and_test(3, 80, 6);
        let reports = vec![
            fake_report(AtomicDecomposition::empty(8, 6), 0),
            fake_report(AtomicDecomposition::empty(8, 6), 1),
        ];
        let with_truth = evaluate_logistic(&reports, &test, Some(&truth), 64, 3).unwrap();
        let without = evaluate_logistic(&reports, &test, None, 64, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let csv_path = dir.path().join("reports.csv");
        write_eval_csv(&csv_path, &[with_truth.clone(), without.clone()]).unwrap();
        let back = read_eval_csv(&csv_path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], with_truth);
        assert_eq!(back[1], without);

        let json_path = dir.path().join("reports.json");
        write_eval_json(&json_path, &[with_truth.clone()]).unwrap();
        let back = read_eval_json(&json_path).unwrap();
        assert_eq!(back, vec![with_truth]);
    }
}
