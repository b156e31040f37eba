//! Rating prediction on the MovieLens 100k dataset.
//!
//! Ratings are held out at random, the penalty is tuned on a
//! validation share, and both models are scored on the test share:
//! once on the full five-class problem and once per rating in a
//! one-vs-rest binarization. The dataset is not bundled; the example
//! prints a download note and exits cleanly when it is missing.
//!
//! ```text
//! cargo run --release --example movielens -- [path/to/u.data]
//! ```
//!
//! Without an argument the path comes from the MOVIELENS_DATA
//! environment variable or falls back to `data/ml-100k/u.data`.

use std::path::PathBuf;

use matcomp::{
    binarize_one_vs_rest, load_movielens, pipeline_config, run_data_trial, ModelKind, Result,
};

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .or_else(|| std::env::var("MOVIELENS_DATA").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/ml-100k/u.data"));
    if !path.exists() {
        println!("MovieLens ratings not found at {}.", path.display());
        println!("Download https://files.grouplens.org/datasets/movielens/ml-100k.zip,");
        println!("unpack it, and pass the u.data path as the first argument or through");
        println!("the MOVIELENS_DATA environment variable. Skipping.");
        return Ok(());
    }

    let set = load_movielens(&path)?;
    println!(
        "{} ratings from {} users on {} movies\n",
        set.len(),
        set.rows(),
        set.cols()
    );

    let base = pipeline_config(1);
    let seed = 1;

    println!("full five-class problem:");
    for model in [ModelKind::Logistic, ModelKind::Gaussian] {
        let (report, selection) =
            run_data_trial(&set, model, &base, 0.2, 0.2, seed, Some(3))?;
        println!(
            "  {model}: test error {:.4} at lambda {:.4e}",
            report.prediction_error, selection.best_lambda
        );
    }

    println!("\none-vs-rest by rating:");
    println!("  rating   logistic   gaussian");
    for rating in 1..=5u32 {
        let binary = binarize_one_vs_rest(&set, rating)?;
        let mut errs = Vec::new();
        for model in [ModelKind::Logistic, ModelKind::Gaussian] {
            let (report, _) = run_data_trial(&binary, model, &base, 0.2, 0.2, seed, Some(3))?;
            errs.push(report.prediction_error);
        }
        println!("  {rating:>6}   {:>8.4}   {:>8.4}", errs[0], errs[1]);
    }
    Ok(())
}
