//! Command orchestration behind the `matcomp` binary.
//!
//! Everything here is plain library code so the binary stays a thin
//! argument-parsing wrapper: a merged option set ([`RunConfig`]), a model
//! container that round-trips fitted models through JSON
//! ([`ModelFile`]), and one function per command. Commands print a
//! short human-readable account to stdout and write their machine
//! outputs to the requested paths.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_truth, read_observations, read_truth, sample_observations, write_observations,
    write_truth, DatasetHeader, SamplingDistribution, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    csv_error, evaluate_gaussian, evaluate_logistic, write_eval_csv, write_eval_json, EvalReport,
};
use crate::experiments::{
    pipeline_config, run_benchmark_case, run_data_trial, run_synthetic_trial, BenchCase, DistKind,
    TrialSpec,
};
use crate::gaussian::{fit_gaussian, GaussianFit};
use crate::link::LinkModel;
use crate::solver::{mix_seed, solve_tensor, FitReport, SolverConfig};
use crate::tensor::ObservationSet;
use crate::tuning::{cross_validate, ModelFit, ModelKind};

/// Exit code for runs that finish but fail to certify convergence.
pub const EXIT_NOT_CONVERGED: i32 = 5;

/// The action a [`RunConfig`] requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth to disk.
    Simulate,
    /// Fit one model at a fixed penalty and save it.
    Fit,
    /// Select the penalty by K-fold cross-validation, then refit.
    Crossval,
    /// Score a saved model on a dataset, optionally against a truth.
    Evaluate,
    /// Time the solver on growing problem sizes.
    Bench,
    /// Run the full experiment suite and write its tables.
    Reproduce,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simulate" => Ok(Self::Simulate),
            "fit" => Ok(Self::Fit),
            "crossval" | "cross-validate" => Ok(Self::Crossval),
            "evaluate" | "eval" => Ok(Self::Evaluate),
            "bench" | "benchmark" => Ok(Self::Bench),
            "reproduce" => Ok(Self::Reproduce),
            other => Err(Error::domain(format!(
                "unknown command {other:?}; expected simulate, fit, crossval, evaluate, bench, \
                 or reproduce"
            ))),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Simulate => "simulate",
            Self::Fit => "fit",
            Self::Crossval => "crossval",
            Self::Evaluate => "evaluate",
            Self::Bench => "bench",
            Self::Reproduce => "reproduce",
        };
        f.write_str(name)
    }
}

/// One merged set of run options.
///
/// Every field is optional so the struct can be read from a JSON config
/// file, filled from command-line flags, or both; [`RunConfig::or`]
/// merges the two with the flags taking precedence. Each command then
/// demands the fields it actually needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub model: Option<ModelKind>,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub classes: Option<usize>,
    pub n: Option<usize>,
    pub gamma_scale: Option<f64>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_outer_iters: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub folds: Option<usize>,
    pub truth: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub test_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub distribution: Option<DistKind>,
    pub tables: Option<String>,
    pub seeds: Option<usize>,
    pub n_list: Option<String>,
}

impl RunConfig {
    /// Reads a config from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Merges two configs field by field; `self` wins where both are
    /// set. Used to let command-line flags override a config file.
    pub fn or(self, fallback: Self) -> Self {
        Self {
            command: self.command.or(fallback.command),
            model: self.model.or(fallback.model),
            m1: self.m1.or(fallback.m1),
            m2: self.m2.or(fallback.m2),
            classes: self.classes.or(fallback.classes),
            n: self.n.or(fallback.n),
            gamma_scale: self.gamma_scale.or(fallback.gamma_scale),
            lambda: self.lambda.or(fallback.lambda),
            epsilon: self.epsilon.or(fallback.epsilon),
            max_outer_iters: self.max_outer_iters.or(fallback.max_outer_iters),
            seed: self.seed.or(fallback.seed),
            threads: self.threads.or(fallback.threads),
            data: self.data.or(fallback.data),
            out: self.out.or(fallback.out),
            folds: self.folds.or(fallback.folds),
            truth: self.truth.or(fallback.truth),
            model_file: self.model_file.or(fallback.model_file),
            test_frac: self.test_frac.or(fallback.test_frac),
            val_frac: self.val_frac.or(fallback.val_frac),
            distribution: self.distribution.or(fallback.distribution),
            tables: self.tables.or(fallback.tables),
            seeds: self.seeds.or(fallback.seeds),
            n_list: self.n_list.or(fallback.n_list),
        }
    }

    fn require<T: Copy>(field: Option<T>, name: &str) -> Result<T> {
        field.ok_or_else(|| Error::domain(format!("missing required option --{name}")))
    }

    fn require_path<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::domain(format!("missing required option --{name}")))
    }
}

/// Dispatches a merged config to its command, returning the process
/// exit code. Installs the global thread pool first when `--threads`
/// is set; results do not depend on the thread count because parallel
/// jobs are independent and reduced in a fixed order.
pub fn run(config: &RunConfig) -> Result<i32> {
    if let Some(threads) = config.threads {
        if threads == 0 {
            return Err(Error::domain("--threads must be positive"));
        }
        // Ignore the error: a pool may already be installed when run()
        // is called twice in one process, and results do not depend on
        // its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match RunConfig::require(config.command, "command")? {
        Command::Simulate => cmd_simulate(config).map(|()| 0),
        Command::Fit => cmd_fit(config),
        Command::Crossval => cmd_crossval(config),
        Command::Evaluate => cmd_evaluate(config).map(|()| 0),
        Command::Bench => cmd_bench(config).map(|()| 0),
        Command::Reproduce => cmd_reproduce(config).map(|()| 0),
    }
}

/// A fitted model with enough context to score new data, as stored on
/// disk in JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: ModelKind,
    pub m1: usize,
    pub m2: usize,
    pub classes: usize,
    pub n_train: usize,
    pub lambda: f64,
    pub seed: u64,
    pub converged: bool,
    /// One report per slice for the logistic model; exactly one for the
    /// Gaussian baseline.
    pub reports: Vec<FitReport>,
    /// Residual scale of the Gaussian baseline; absent for logistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<f64>,
}

impl ModelFile {
    /// Wraps a fit for storage.
    pub fn from_fit(fit: &ModelFit, m1: usize, m2: usize, n_train: usize, seed: u64) -> Self {
        match fit {
            ModelFit::Logistic(reports) => Self {
                model: ModelKind::Logistic,
                m1,
                m2,
                classes: reports.len() + 1,
                n_train,
                lambda: fit.lambda(),
                seed,
                converged: fit.converged(),
                reports: reports.clone(),
                sigma_hat: None,
            },
            ModelFit::Gaussian(g) => Self {
                model: ModelKind::Gaussian,
                m1,
                m2,
                classes: g.classes,
                n_train,
                lambda: fit.lambda(),
                seed,
                converged: fit.converged(),
                reports: vec![g.report.clone()],
                sigma_hat: Some(g.sigma_hat),
            },
        }
    }

    /// Reconstructs the in-memory fit, checking internal consistency.
    pub fn to_fit(&self) -> Result<ModelFit> {
        match self.model {
            ModelKind::Logistic => {
                if self.reports.len() + 1 != self.classes {
                    return Err(Error::structural(format!(
                        "logistic model with {} classes needs {} slice reports, found {}",
                        self.classes,
                        self.classes - 1,
                        self.reports.len()
                    )));
                }
                Ok(ModelFit::Logistic(self.reports.clone()))
            }
            ModelKind::Gaussian => {
                if self.reports.len() != 1 {
                    return Err(Error::structural(format!(
                        "gaussian model stores one report, found {}",
                        self.reports.len()
                    )));
                }
                let sigma_hat = self.sigma_hat.ok_or_else(|| {
                    Error::structural("gaussian model is missing its sigma_hat field")
                })?;
                Ok(ModelFit::Gaussian(GaussianFit {
                    report: self.reports[0].clone(),
                    sigma_hat,
                    classes: self.classes,
                }))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(Error::io(path))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Derives the ground-truth output path from the dataset path when
/// `--truth` is not given.
fn default_truth_path(out: &Path) -> PathBuf {
    out.with_extension("mctr")
}

/// `simulate`: writes a sampled dataset and its generating tensor.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let m1 = RunConfig::require(cfg.m1, "m1")?;
    let m2 = RunConfig::require(cfg.m2, "m2")?;
    let classes = RunConfig::require(cfg.classes, "classes")?;
    let n = RunConfig::require(cfg.n, "n")?;
    let out = RunConfig::require_path(&cfg.out, "out")?;
    if n == 0 {
        return Err(Error::domain("--n must be positive"));
    }
    let seed = cfg.seed.unwrap_or(0);
    let distribution = cfg.distribution.unwrap_or(DistKind::Uniform);

    let mut spec = SyntheticSpec::new(m1, m2, classes, seed);
    if let Some(g) = cfg.gamma_scale {
        spec = spec.with_gamma_scale(g);
    }
    let truth = generate_truth(&spec)?;
    let dist = match distribution {
        DistKind::Uniform => SamplingDistribution::uniform(m1, m2)?,
        DistKind::Product => SamplingDistribution::row_column_product(m1, m2, mix_seed(seed, 101))?,
    };
    let set = sample_observations(&truth, &dist, n, mix_seed(seed, 1))?;

    let meta = DatasetHeader {
        seed: Some(seed),
        generator: Some("synthetic-low-rank".to_string()),
        gamma_scale: Some(spec.gamma_scale),
        distribution: Some(distribution.to_string()),
        ..DatasetHeader::default()
    };
    write_observations(out, &set, &meta)?;
    let truth_path = cfg.truth.clone().unwrap_or_else(|| default_truth_path(out));
    write_truth(&truth_path, &truth)?;

    println!(
        "simulate: {m1}x{m2}, {classes} classes, {n} draws, seed {seed}, {distribution} sampling"
    );
    println!("  dataset -> {}", out.display());
    println!("  truth   -> {}", truth_path.display());
    Ok(())
}

fn print_fit_summary(file: &ModelFile) {
    println!(
        "fit: {} model, {}x{}, {} classes, lambda {:.6e}, {} records",
        file.model, file.m1, file.m2, file.classes, file.lambda, file.n_train
    );
    for (l, r) in file.reports.iter().enumerate() {
        println!(
            "  slice {l}: {} atoms, {} iters, objective {:.6e}, atom gap {:.3e}, \
             support violation {:.3e}, {:.2}s{}",
            r.decomposition.len(),
            r.iterations,
            r.objective_trace.last().copied().unwrap_or(f64::NAN),
            r.certificate.atom_gap,
            r.certificate.support_violation,
            r.wall_time_secs,
            if r.converged { "" } else { " [not converged]" }
        );
    }
    if let Some(s) = file.sigma_hat {
        println!("  sigma_hat {s:.6}");
    }
}

/// `fit`: one model at a fixed penalty, saved as a [`ModelFile`].
pub fn cmd_fit(cfg: &RunConfig) -> Result<i32> {
    let data = RunConfig::require_path(&cfg.data, "data")?;
    let model = RunConfig::require(cfg.model, "model")?;
    let lambda = RunConfig::require(cfg.lambda, "lambda")?;
    let out = RunConfig::require_path(&cfg.out, "out")?;
    let seed = cfg.seed.unwrap_or(0);

    let (set, _) = read_observations(data)?;
    let mut config = SolverConfig::new(lambda).with_seed(seed);
    if let Some(e) = cfg.epsilon {
        config.epsilon = Some(e);
    }
    if let Some(m) = cfg.max_outer_iters {
        config.max_outer_iters = m;
    }

    let fit = match model {
        ModelKind::Logistic => {
            let link = LinkModel::conditional_logit(set.classes())?;
            ModelFit::Logistic(solve_tensor(&set, &link, &config)?)
        }
        ModelKind::Gaussian => ModelFit::Gaussian(fit_gaussian(&set, &config)?),
    };
    let file = ModelFile::from_fit(&fit, set.rows(), set.cols(), set.len(), seed);
    file.save(out)?;
    print_fit_summary(&file);
    println!("  model -> {}", out.display());
    if file.converged {
        Ok(0)
    } else {
        eprintln!("fit did not certify convergence within the iteration budget");
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// On-disk record of a cross-validation run: the scored grid plus the
/// model refit on the full dataset at the winning penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalFile {
    pub model: ModelKind,
    pub folds: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// `fold_scores[f][i]` scores grid point `i` on fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub best_lambda: f64,
    pub fit: ModelFile,
}

/// `crossval`: K-fold selection of the penalty, then a refit on the
/// full dataset.
pub fn cmd_crossval(cfg: &RunConfig) -> Result<i32> {
    let data = RunConfig::require_path(&cfg.data, "data")?;
    let model = RunConfig::require(cfg.model, "model")?;
    let out = RunConfig::require_path(&cfg.out, "out")?;
    let folds = cfg.folds.unwrap_or(5);
    let seed = cfg.seed.unwrap_or(0);

    let (set, _) = read_observations(data)?;
    let mut base = pipeline_config(seed);
    if let Some(e) = cfg.epsilon {
        base.epsilon = Some(e);
    }
    if let Some(m) = cfg.max_outer_iters {
        base.max_outer_iters = m;
    }

    let cv = cross_validate(&set, model, &base, folds, mix_seed(seed, 4))?;
    let config = base.with_lambda(cv.best_lambda);
    let fit = match model {
        ModelKind::Logistic => {
            let link = LinkModel::conditional_logit(set.classes())?;
            ModelFit::Logistic(solve_tensor(&set, &link, &config)?)
        }
        ModelKind::Gaussian => ModelFit::Gaussian(fit_gaussian(&set, &config)?),
    };
    let file = ModelFile::from_fit(&fit, set.rows(), set.cols(), set.len(), seed);
    let record = CrossvalFile {
        model,
        folds,
        seed,
        grid: cv.grid.clone(),
        fold_scores: cv.fold_scores.clone(),
        mean_scores: cv.mean_scores.clone(),
        best_lambda: cv.best_lambda,
        fit: file,
    };
    let out_file = std::fs::File::create(out).map_err(Error::io(out))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(out_file), &record)?;

    println!("crossval: {model} model, {folds} folds, {} records", set.len());
    for (i, (lam, score)) in record.grid.iter().zip(&record.mean_scores).enumerate() {
        let marker = if *lam == record.best_lambda { "  <- best" } else { "" };
        println!("  lambda[{i}] {lam:.6e}: mean score {score:.6}{marker}");
    }
    print_fit_summary(&record.fit);
    println!("  report -> {}", out.display());
    if record.fit.converged {
        Ok(0)
    } else {
        eprintln!("refit did not certify convergence within the iteration budget");
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// `evaluate`: scores a saved model on a dataset, with truth-referenced
/// divergences when a truth tensor is supplied.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let model_path = RunConfig::require_path(&cfg.model_file, "model-file")?;
    let data = RunConfig::require_path(&cfg.data, "data")?;

    let file = ModelFile::load(model_path)?;
    let (test, _) = read_observations(data)?;
    if test.rows() != file.m1 || test.cols() != file.m2 {
        return Err(Error::structural(format!(
            "model is {}x{} but dataset is {}x{}",
            file.m1,
            file.m2,
            test.rows(),
            test.cols()
        )));
    }
    let truth = cfg.truth.as_deref().map(read_truth).transpose()?;
    let report = match file.to_fit()? {
        ModelFit::Logistic(reports) => {
            evaluate_logistic(&reports, &test, truth.as_ref(), file.n_train, file.seed)?
        }
        ModelFit::Gaussian(g) => {
            evaluate_gaussian(&g, &test, truth.as_ref(), file.n_train, file.seed)?
        }
    };

    println!(
        "evaluate: {} model on {} test records ({}x{}, {} classes)",
        file.model,
        test.len(),
        test.rows(),
        test.cols(),
        test.classes()
    );
    println!("  prediction error {:.6}", report.prediction_error);
    if let Some(kl) = report.kl {
        println!("  kl {kl:.6} (per class {:.6})", report.kl_per_class.unwrap_or(f64::NAN));
    }
    if let Some(h) = report.hellinger_sq {
        println!("  squared hellinger {h:.6}");
    }
    if let Some(fr) = report.frobenius {
        println!("  frobenius mse {fr:.6}");
    }

    if let Some(out) = cfg.out.as_deref() {
        let reports = vec![report];
        if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            write_eval_csv(out, &reports)?;
        } else {
            write_eval_json(out, &reports)?;
        }
        println!("  report -> {}", out.display());
    }
    Ok(())
}

/// Reads the kernel's estimate of available memory, when the platform
/// exposes one.
fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemAvailable:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// Rough peak-memory estimate for one benchmark case: the observation
/// records, a sorting copy, the grouped per-entry counts, and the
/// sparse gradient, with generous headroom for the solver state.
fn bench_case_bytes(case: &BenchCase) -> u64 {
    let n = case.n as u64;
    let dims = (case.m1 + case.m2) as u64;
    60 * n + 2000 * dims
}

/// `bench`: times sampling, grouping, and solving on a suite of sizes,
/// appending one CSV row per case as soon as it finishes so partial
/// results survive an abort.
pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let explicit = cfg.m1.is_some() || cfg.m2.is_some() || cfg.n.is_some();
    let mut cases = if explicit {
        let m1 = RunConfig::require(cfg.m1, "m1")?;
        let m2 = RunConfig::require(cfg.m2, "m2")?;
        let n = RunConfig::require(cfg.n, "n")?;
        vec![BenchCase::new(m1, m2, n)]
    } else {
        vec![
            BenchCase::new(1000, 1000, 100_000),
            BenchCase::new(3000, 3000, 1_000_000),
            BenchCase::new(10_000, 10_000, 10_000_000),
        ]
    };
    for case in &mut cases {
        case.lambda = cfg.lambda;
        if let Some(seed) = cfg.seed {
            case.seed = seed;
        }
    }
    let mut base = pipeline_config(cases[0].seed);
    if let Some(e) = cfg.epsilon {
        base.epsilon = Some(e);
    }
    if let Some(m) = cfg.max_outer_iters {
        base.max_outer_iters = m;
    }

    let mut writer = match cfg.out.as_deref() {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(Error::io(path))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            w.write_record([
                "m1",
                "m2",
                "n",
                "lambda",
                "sample_secs",
                "group_secs",
                "solve_secs",
                "total_secs",
                "iterations",
                "atoms",
                "converged",
            ])
            .map_err(|e| csv_error(path, e))?;
            Some((w, path))
        }
        None => None,
    };

    println!(
        "{:>6} {:>6} {:>9} | {:>10} {:>8} {:>8} {:>8} {:>8} | {:>5} {:>5}",
        "m1", "m2", "n", "lambda", "sample", "group", "solve", "total", "iters", "atoms"
    );
    for case in &cases {
        if let Some(avail) = available_memory_bytes() {
            let need = bench_case_bytes(case);
            if need > avail {
                eprintln!(
                    "stopping before {}x{} with {} draws: needs about {} MiB, {} MiB available",
                    case.m1,
                    case.m2,
                    case.n,
                    need >> 20,
                    avail >> 20
                );
                break;
            }
        }
        let r = run_benchmark_case(case, &base)?;
        println!(
            "{:>6} {:>6} {:>9} | {:>10.3e} {:>7.2}s {:>7.2}s {:>7.2}s {:>7.2}s | {:>5} {:>5}",
            r.case.m1,
            r.case.m2,
            r.case.n,
            r.lambda,
            r.sample_secs,
            r.group_secs,
            r.solve_secs,
            r.total_secs,
            r.iterations,
            r.atoms
        );
        if !r.converged {
            eprintln!("  note: solver hit its iteration cap on this case");
        }
        if let Some((w, path)) = writer.as_mut() {
            w.write_record([
                r.case.m1.to_string(),
                r.case.m2.to_string(),
                r.case.n.to_string(),
                format!("{:.12e}", r.lambda),
                format!("{:.6}", r.sample_secs),
                format!("{:.6}", r.group_secs),
                format!("{:.6}", r.solve_secs),
                format!("{:.6}", r.total_secs),
                r.iterations.to_string(),
                r.atoms.to_string(),
                r.converged.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
            w.flush().map_err(Error::io(*path))?;
        }
    }
    if let Some((w, path)) = writer {
        w.into_inner().map_err(|e| Error::data(format!("flushing {}: {e}", path.display())))?;
        println!("timings -> {}", path.display());
    }
    Ok(())
}

/// The experiment groups `reproduce` knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TableKind {
    /// Binary synthetic grid over growing sample counts.
    Binary,
    /// Five-class synthetic grid.
    Multiclass,
    /// Divergence-versus-sampling-fraction curves on two grid shapes.
    Figure,
    /// MovieLens 100k ratings, one-vs-rest and multinomial.
    Movielens,
}

impl FromStr for TableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Self::Binary),
            "multiclass" => Ok(Self::Multiclass),
            "figure" => Ok(Self::Figure),
            "movielens" => Ok(Self::Movielens),
            other => Err(Error::domain(format!(
                "unknown table {other:?}; expected binary, multiclass, figure, or movielens"
            ))),
        }
    }
}

/// One synthetic trial outcome flattened for the long-format CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SyntheticRow {
    m1: usize,
    m2: usize,
    classes: usize,
    n: usize,
    seed: u64,
    model: ModelKind,
    prediction_error: f64,
    kl_per_class: f64,
    hellinger_sq: f64,
    lambda: f64,
    wall_time_secs: f64,
}

impl SyntheticRow {
    fn new(spec: &TrialSpec, seed: u64, report: &EvalReport) -> Self {
        Self {
            m1: spec.m1,
            m2: spec.m2,
            classes: spec.classes,
            n: spec.n,
            seed,
            model: report.metadata.model,
            prediction_error: report.prediction_error,
            kl_per_class: report.kl_per_class.unwrap_or(f64::NAN),
            hellinger_sq: report.hellinger_sq.unwrap_or(f64::NAN),
            lambda: report.metadata.lambda,
            wall_time_secs: report.metadata.wall_time_secs,
        }
    }
}

fn write_rows(path: &Path, rows: &[SyntheticRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Writes a wide summary with one row per model and one column per
/// sample count, holding the seed-averaged value of `metric`.
fn write_wide_summary(
    path: &Path,
    rows: &[SyntheticRow],
    ns: &[usize],
    metric: fn(&SyntheticRow) -> f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["model".to_string()];
    header.extend(ns.iter().map(|n| format!("n_{n}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for model in [ModelKind::Logistic, ModelKind::Gaussian] {
        let mut record = vec![model.to_string()];
        for &n in ns {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == model && r.n == n)
                .map(metric)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            record.push(format!("{mean:.6}"));
        }
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

fn parse_n_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::domain(format!("bad --n-list entry {s:?}: {e}")))
        })
        .collect()
}

/// Runs one synthetic table: every (n, seed) pair for a fixed shape.
fn reproduce_synthetic(
    name: &str,
    m1: usize,
    m2: usize,
    classes: usize,
    ns: &[usize],
    seeds: &[u64],
    base: &SolverConfig,
    out_dir: &Path,
) -> Result<()> {
    let mut rows = Vec::new();
    for &n in ns {
        for &seed in seeds {
            let spec = TrialSpec::new(m1, m2, classes, n, seed);
            let started = std::time::Instant::now();
            let trial = run_synthetic_trial(&spec, base)?;
            rows.push(SyntheticRow::new(&spec, seed, &trial.logistic));
            rows.push(SyntheticRow::new(&spec, seed, &trial.gaussian));
            println!(
                "  {name} n={n} seed={seed}: logistic err {:.4}, gaussian err {:.4} ({:.1}s)",
                trial.logistic.prediction_error,
                trial.gaussian.prediction_error,
                started.elapsed().as_secs_f64()
            );
        }
    }
    let runs_path = out_dir.join(format!("{name}_runs.csv"));
    write_rows(&runs_path, &rows)?;
    let summary_path = out_dir.join(format!("{name}_summary.csv"));
    write_wide_summary(&summary_path, &rows, ns, |r| r.prediction_error)?;
    println!("  {name} -> {} and {}", runs_path.display(), summary_path.display());
    Ok(())
}

/// Runs the divergence-versus-fraction curves on two grid shapes.
fn reproduce_figure(seeds: &[u64], base: &SolverConfig, out_dir: &Path) -> Result<()> {
    const FRACTIONS: [f64; 3] = [0.05, 0.15, 0.4];
    let shapes = [(500usize, 300usize), (1000, 600)];
    let mut rows = Vec::new();
    for &(m1, m2) in &shapes {
        for &frac in &FRACTIONS {
            let n = (frac * m1 as f64 * m2 as f64).round() as usize;
            for &seed in seeds {
                let spec = TrialSpec::new(m1, m2, 2, n, seed);
                let started = std::time::Instant::now();
                let trial = run_synthetic_trial(&spec, base)?;
                rows.push(SyntheticRow::new(&spec, seed, &trial.logistic));
                rows.push(SyntheticRow::new(&spec, seed, &trial.gaussian));
                println!(
                    "  figure {m1}x{m2} fraction={frac} seed={seed}: logistic kl/class {:.4}, \
                     gaussian kl/class {:.4} ({:.1}s)",
                    trial.logistic.kl_per_class.unwrap_or(f64::NAN),
                    trial.gaussian.kl_per_class.unwrap_or(f64::NAN),
                    started.elapsed().as_secs_f64()
                );
            }
        }
    }
    let runs_path = out_dir.join("figure_runs.csv");
    write_rows(&runs_path, &rows)?;
    let summary_path = out_dir.join("figure_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| csv_error(&summary_path, e))?;
    w.write_record(["m1", "m2", "fraction", "n", "model", "mean_kl_per_class"])
        .map_err(|e| csv_error(&summary_path, e))?;
    for &(m1, m2) in &shapes {
        for &frac in &FRACTIONS {
            let n = (frac * m1 as f64 * m2 as f64).round() as usize;
            for model in [ModelKind::Logistic, ModelKind::Gaussian] {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.m1 == m1 && r.n == n && r.model == model)
                    .map(|r| r.kl_per_class)
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
                w.write_record([
                    m1.to_string(),
                    m2.to_string(),
                    frac.to_string(),
                    n.to_string(),
                    model.to_string(),
                    format!("{mean:.6}"),
                ])
                .map_err(|e| csv_error(&summary_path, e))?;
            }
        }
    }
    w.flush().map_err(Error::io(&summary_path))?;
    println!("  figure -> {} and {}", runs_path.display(), summary_path.display());
    Ok(())
}

/// Locates the MovieLens ratings file from the config, the
/// `MOVIELENS_DATA` environment variable, or the conventional local
/// path, in that order.
fn movielens_path(cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cfg.data.clone() {
        return p;
    }
    if let Ok(p) = std::env::var("MOVIELENS_DATA") {
        return PathBuf::from(p);
    }
    PathBuf::from("data/ml-100k/u.data")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MovielensRow {
    /// Either a rating value for a one-vs-rest run or "multinomial".
    target: String,
    seed: u64,
    model: ModelKind,
    prediction_error: f64,
    lambda: f64,
    n_test: usize,
}

/// Runs the MovieLens table: per-rating one-vs-rest runs plus the full
/// five-class problem, for both models.
fn reproduce_movielens(
    cfg: &RunConfig,
    seeds: &[u64],
    base: &SolverConfig,
    out_dir: &Path,
) -> Result<()> {
    let path = movielens_path(cfg);
    if !path.exists() {
        return Err(Error::data(format!(
            "MovieLens ratings not found at {}; download the ml-100k archive from \
             https://files.grouplens.org/datasets/movielens/ml-100k.zip, unpack it, and point \
             --data (or the MOVIELENS_DATA environment variable) at its u.data file",
            path.display()
        )));
    }
    let set = crate::data::load_movielens(&path)?;
    println!(
        "  movielens: {} ratings on a {}x{} grid",
        set.len(),
        set.rows(),
        set.cols()
    );
    let test_frac = cfg.test_frac.unwrap_or(0.2);
    let val_frac = cfg.val_frac.unwrap_or(0.2);

    let mut rows = Vec::new();
    let mut run_one =
        |target: String, data: &ObservationSet, model: ModelKind, seed: u64| -> Result<()> {
            let started = std::time::Instant::now();
            let (report, _) =
                run_data_trial(data, model, base, test_frac, val_frac, seed, Some(3))?;
            println!(
                "  movielens {target} {model} seed={seed}: err {:.4} ({:.1}s)",
                report.prediction_error,
                started.elapsed().as_secs_f64()
            );
            rows.push(MovielensRow {
                target,
                seed,
                model,
                prediction_error: report.prediction_error,
                lambda: report.metadata.lambda,
                n_test: report.metadata.test_size,
            });
            Ok(())
        };

    for &seed in seeds {
        for model in [ModelKind::Logistic, ModelKind::Gaussian] {
            run_one("multinomial".to_string(), &set, model, seed)?;
        }
        for rating in 1..=set.classes() as u32 {
            let binary = crate::data::binarize_one_vs_rest(&set, rating)?;
            for model in [ModelKind::Logistic, ModelKind::Gaussian] {
                run_one(rating.to_string(), &binary, model, seed)?;
            }
        }
    }

    let runs_path = out_dir.join("movielens_runs.csv");
    let mut w = csv::Writer::from_path(&runs_path).map_err(|e| csv_error(&runs_path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(&runs_path, e))?;
    }
    w.flush().map_err(Error::io(&runs_path))?;

    let summary_path = out_dir.join("movielens_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| csv_error(&summary_path, e))?;
    w.write_record(["target", "model", "mean_prediction_error"])
        .map_err(|e| csv_error(&summary_path, e))?;
    let mut targets: Vec<String> = rows.iter().map(|r| r.target.clone()).collect();
    targets.sort();
    targets.dedup();
    for target in &targets {
        for model in [ModelKind::Logistic, ModelKind::Gaussian] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| &r.target == target && r.model == model)
                .map(|r| r.prediction_error)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            w.write_record([target.clone(), model.to_string(), format!("{mean:.6}")])
                .map_err(|e| csv_error(&summary_path, e))?;
        }
    }
    w.flush().map_err(Error::io(&summary_path))?;
    println!("  movielens -> {} and {}", runs_path.display(), summary_path.display());
    Ok(())
}

/// `reproduce`: runs the requested experiment groups and writes one
/// long-format and one summary CSV per group into the output directory.
pub fn cmd_reproduce(cfg: &RunConfig) -> Result<()> {
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("reproduction"));
    std::fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let tables: Vec<TableKind> = cfg
        .tables
        .as_deref()
        .unwrap_or("binary,multiclass,figure")
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(TableKind::from_str)
        .collect::<Result<_>>()?;
    if tables.is_empty() {
        return Err(Error::domain("--tables selects nothing"));
    }
    let seed0 = cfg.seed.unwrap_or(1);
    let count = cfg.seeds.unwrap_or(5);
    if count == 0 {
        return Err(Error::domain("--seeds must be positive"));
    }
    let seeds: Vec<u64> = (0..count as u64).map(|i| seed0 + i).collect();
    let mut base = pipeline_config(seed0);
    if let Some(e) = cfg.epsilon {
        base.epsilon = Some(e);
    }
    if let Some(m) = cfg.max_outer_iters {
        base.max_outer_iters = m;
    }
    let n_override = cfg.n_list.as_deref().map(parse_n_list).transpose()?;

    println!(
        "reproduce: tables {:?}, seeds {:?}, output {}",
        tables,
        seeds,
        out_dir.display()
    );
    std::io::stdout().flush().ok();
    for table in &tables {
        match table {
            TableKind::Binary => {
                let ns = n_override
                    .clone()
                    .unwrap_or_else(|| vec![10_000, 50_000, 250_000, 500_000]);
                reproduce_synthetic("binary", 1000, 600, 2, &ns, &seeds, &base, &out_dir)?;
            }
            TableKind::Multiclass => {
                let ns = n_override.clone().unwrap_or_else(|| vec![250_000, 500_000]);
                reproduce_synthetic("multiclass", 1000, 600, 5, &ns, &seeds, &base, &out_dir)?;
            }
            TableKind::Figure => reproduce_figure(&seeds, &base, &out_dir)?,
            TableKind::Movielens => reproduce_movielens(cfg, &seeds, &base, &out_dir)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Certificate;
    use crate::tensor::AtomicDecomposition;

    fn dummy_report() -> FitReport {
        FitReport {
            decomposition: AtomicDecomposition::empty(2, 3),
            slice: 0,
            lambda: 0.5,
            epsilon: 1e-3,
            objective_trace: vec![0.7],
            certificate: Certificate { atom_gap: 0.0, support_violation: 0.0 },
            iterations: 1,
            wall_time_secs: 0.0,
            converged: true,
            max_abs_entry: 0.0,
        }
    }

    #[test]
    fn command_parses_all_names_case_insensitively() {
        for (text, want) in [
            ("simulate", Command::Simulate),
            ("FIT", Command::Fit),
            ("crossval", Command::Crossval),
            ("cross-validate", Command::Crossval),
            ("eval", Command::Evaluate),
            ("benchmark", Command::Bench),
            ("Reproduce", Command::Reproduce),
        ] {
            assert_eq!(text.parse::<Command>().unwrap(), want);
        }
        assert!("train".parse::<Command>().is_err());
    }

    #[test]
    fn flags_override_config_file_fields() {
        let file = RunConfig {
            m1: Some(10),
            m2: Some(20),
            lambda: Some(0.5),
            ..RunConfig::default()
        };
        let flags = RunConfig { m1: Some(99), ..RunConfig::default() };
        let merged = flags.or(file);
        assert_eq!(merged.m1, Some(99));
        assert_eq!(merged.m2, Some(20));
        assert_eq!(merged.lambda, Some(0.5));
    }

    #[test]
    fn run_config_round_trips_through_json() {
        let cfg = RunConfig {
            command: Some(Command::Fit),
            model: Some(ModelKind::Gaussian),
            m1: Some(5),
            lambda: Some(0.25),
            data: Some(PathBuf::from("x.mcds")),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn run_config_rejects_unknown_fields() {
        let err = serde_json::from_str::<RunConfig>("{\"not_a_field\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn model_file_round_trips_both_kinds() {
        let logistic = ModelFile::from_fit(
            &ModelFit::Logistic(vec![dummy_report(), dummy_report()]),
            2,
            3,
            40,
            9,
        );
        assert_eq!(logistic.classes, 3);
        assert!(matches!(logistic.to_fit().unwrap(), ModelFit::Logistic(v) if v.len() == 2));

        let gaussian = ModelFile::from_fit(
            &ModelFit::Gaussian(GaussianFit {
                report: dummy_report(),
                sigma_hat: 0.7,
                classes: 4,
            }),
            2,
            3,
            40,
            9,
        );
        assert_eq!(gaussian.sigma_hat, Some(0.7));
        assert!(matches!(gaussian.to_fit().unwrap(), ModelFit::Gaussian(g) if g.classes == 4));
    }

    #[test]
    fn model_file_rejects_inconsistent_contents() {
        let mut file = ModelFile::from_fit(
            &ModelFit::Logistic(vec![dummy_report(), dummy_report()]),
            2,
            3,
            40,
            9,
        );
        file.reports.pop();
        assert!(file.to_fit().is_err());

        let mut gaussian = ModelFile::from_fit(
            &ModelFit::Gaussian(GaussianFit {
                report: dummy_report(),
                sigma_hat: 0.7,
                classes: 4,
            }),
            2,
            3,
            40,
            9,
        );
        gaussian.sigma_hat = None;
        assert!(gaussian.to_fit().is_err());
    }

    #[test]
    fn n_list_parses_and_rejects_garbage() {
        assert_eq!(parse_n_list("10, 20,30").unwrap(), vec![10, 20, 30]);
        assert!(parse_n_list("10,x").is_err());
    }

    #[test]
    fn truth_path_derives_from_dataset_path() {
        assert_eq!(
            default_truth_path(Path::new("runs/data.mcds")),
            PathBuf::from("runs/data.mctr")
        );
    }

    #[test]
    fn missing_required_option_names_the_flag() {
        let cfg = RunConfig { command: Some(Command::Fit), ..RunConfig::default() };
        let err = cmd_fit(&cfg).unwrap_err();
        assert!(err.to_string().contains("--data"), "{err}");
    }
}
