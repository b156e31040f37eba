//! Low-rank matrix completion over finite alphabets.
//!
//! Observed entries of a partially known matrix take one of `K` discrete
//! values. The distribution of an entry is driven by `K - 1` latent
//! low-rank parameter matrices through a conditional logit link, and the
//! parameters are recovered by nuclear-norm penalized maximum
//! likelihood. Each penalized slice problem is solved with a lifted
//! coordinate gradient method that grows a rank-one atomic decomposition
//! one atom per iteration and periodically reoptimizes the atom weights.
//!
//! The crate also ships a squared-loss single-matrix baseline with a
//! Gaussian observation model, synthetic data generation, record-level
//! data splitting, penalty tuning by cross-validation or holdout
//! selection, and evaluation metrics (prediction error, KL divergence,
//! squared Hellinger distance, Frobenius error).
//!
//! Start with [`SyntheticSpec`] and [`sample_observations`] to build a
//! dataset, [`solve_tensor`] or [`fit_gaussian`] to fit, and the
//! [`eval`] module to score the result. The `examples/` directory walks
//! through every major workflow.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gaussian;
pub mod link;
pub mod loss;
pub mod solver;
pub mod tensor;
pub mod tuning;

pub use cli::{Command, CrossvalFile, ModelFile, RunConfig, EXIT_NOT_CONVERGED};
pub use data::{
    binarize_one_vs_rest, generate_truth, generate_truth_factors, holdout_split, load_movielens,
    read_observations, read_truth, sample_observations, sample_observations_factored, slice_offset,
    split, write_observations, write_truth, DatasetHeader, LowRankTruth, SamplingDistribution,
    SyntheticSpec, DEFAULT_ALPHAS, DEFAULT_GAMMA_SCALE,
};
pub use error::{Error, Result};
pub use eval::{
    check_comparable, evaluate_gaussian, evaluate_logistic, observation_digest, read_eval_csv,
    read_eval_json, write_eval_csv, write_eval_json, EvalMetadata, EvalReport,
};
pub use experiments::{
    pipeline_config, run_benchmark_case, run_data_trial, run_synthetic_trial, BenchCase,
    BenchResult, DistKind, SelectionSummary, TrialResult, TrialSpec,
};
pub use gaussian::{fit_gaussian, gaussian_class_probs, GaussianFit};
pub use link::{LinkConstants, LinkModel};
pub use loss::{gradient_operator_norm, LossKind, SliceProblem, SparseMatrix};
pub use solver::{
    solve_slice, solve_slice_from, solve_tensor, top_singular_pair, Certificate, FitReport,
    SolverConfig,
};
pub use tensor::{
    Atom, AtomicDecomposition, GroupedObservations, Observation, ObservationSet, ParameterTensor,
};
pub use tuning::{
    cross_validate, gradient_ceiling, select_holdout, theoretical_lambda, validation_score,
    CvResult, HoldoutOptions, HoldoutSelection, LambdaGrid, ModelFit, ModelKind,
};
