//! Thin command-line front end: parses flags, merges them over an
//! optional JSON config file, and hands the result to the library's
//! command dispatcher.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use matcomp::{cli, Command, DistKind, ModelKind, RunConfig};

/// Low-rank completion of matrices with discrete entries: synthetic
/// data, penalized maximum-likelihood fitting, penalty tuning,
/// evaluation, timing benchmarks, and the full experiment suite.
#[derive(Debug, Parser)]
#[command(name = "matcomp", version, disable_help_subcommand = true)]
struct Args {
    /// Action to run: simulate, fit, crossval, evaluate, bench, or
    /// reproduce.
    #[arg(long)]
    command: Option<Command>,

    /// Optional JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Observation model: logistic (multinomial) or gaussian.
    #[arg(long)]
    model: Option<ModelKind>,

    /// Number of matrix rows.
    #[arg(long)]
    m1: Option<usize>,

    /// Number of matrix columns.
    #[arg(long)]
    m2: Option<usize>,

    /// Alphabet size K.
    #[arg(long)]
    classes: Option<usize>,

    /// Number of observation draws.
    #[arg(long)]
    n: Option<usize>,

    /// Signal amplitude of the generated low-rank truth.
    #[arg(long)]
    gamma_scale: Option<f64>,

    /// Nuclear-norm penalty weight (required by fit).
    #[arg(long)]
    lambda: Option<f64>,

    /// Absolute solver stopping precision, overriding the relative
    /// default.
    #[arg(long)]
    epsilon: Option<f64>,

    /// Cap on outer solver iterations.
    #[arg(long)]
    max_outer_iters: Option<usize>,

    /// Seed for all randomized steps.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,

    /// Input dataset path (or MovieLens u.data for reproduce).
    #[arg(long)]
    data: Option<PathBuf>,

    /// Output path; reproduce treats it as a directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Cross-validation fold count (default 5).
    #[arg(long)]
    folds: Option<usize>,

    /// Ground-truth tensor path (written by simulate, read by
    /// evaluate).
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Saved model to evaluate.
    #[arg(long)]
    model_file: Option<PathBuf>,

    /// Share of records held out as the test set in dataset-backed
    /// runs (default 0.2).
    #[arg(long)]
    test_frac: Option<f64>,

    /// Share of non-test records held out for penalty selection
    /// (default 0.2).
    #[arg(long)]
    val_frac: Option<f64>,

    /// Sampling distribution for simulate: uniform or product.
    #[arg(long)]
    distribution: Option<DistKind>,

    /// Comma-separated experiment groups for reproduce: binary,
    /// multiclass, figure, movielens (default: the synthetic three).
    #[arg(long)]
    tables: Option<String>,

    /// How many consecutive seeds reproduce averages over (default 5).
    #[arg(long)]
    seeds: Option<usize>,

    /// Comma-separated override of the sample counts used by the
    /// reproduce tables.
    #[arg(long)]
    n_list: Option<String>,
}

impl Args {
    fn into_config(self) -> matcomp::Result<RunConfig> {
        let flags = RunConfig {
            command: self.command,
            model: self.model,
            m1: self.m1,
            m2: self.m2,
            classes: self.classes,
            n: self.n,
            gamma_scale: self.gamma_scale,
            lambda: self.lambda,
            epsilon: self.epsilon,
            max_outer_iters: self.max_outer_iters,
            seed: self.seed,
            threads: self.threads,
            data: self.data,
            out: self.out,
            folds: self.folds,
            truth: self.truth,
            model_file: self.model_file,
            test_frac: self.test_frac,
            val_frac: self.val_frac,
            distribution: self.distribution,
            tables: self.tables,
            seeds: self.seeds,
            n_list: self.n_list,
        };
        Ok(match self.config {
            Some(path) => flags.or(RunConfig::load(&path)?),
            None => flags,
        })
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = args.into_config().and_then(|cfg| cli::run(&cfg));
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
