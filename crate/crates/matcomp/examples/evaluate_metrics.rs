//! Runs the full synthetic protocol once and walks through every
//! metric the evaluator produces.
//!
//! One call to `run_synthetic_trial` samples an estimation set and a
//! fresh test sample, selects the penalty for each model on a
//! validation share of the estimation records, refits on all of them,
//! and scores both fits on the shared test sample. Because the
//! generating tensor is known, the divergence metrics (KL, squared
//! Hellinger, Frobenius) are computed against the true distribution,
//! next to the test prediction error and its confusion matrix.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use matcomp::{pipeline_config, run_synthetic_trial, EvalReport, Result, TrialSpec};

fn print_report(name: &str, r: &EvalReport) {
    println!("{name}:");
    println!("  selected lambda    {:.4e}", r.metadata.lambda);
    println!("  prediction error   {:.4}", r.prediction_error);
    println!("  kl per class       {:.4}", r.kl_per_class.unwrap_or(f64::NAN));
    println!("  squared hellinger  {:.4}", r.hellinger_sq.unwrap_or(f64::NAN));
    if let Some(fro) = r.frobenius {
        println!("  frobenius mse      {:.4}", fro);
    } else {
        println!("  frobenius mse      n/a (single-matrix model)");
    }
    let k = r.metadata.classes;
    println!("  confusion (rows = true label, columns = predicted):");
    for i in 0..k {
        let row: Vec<String> =
            (0..k).map(|j| format!("{:>6}", r.confusion[i * k + j])).collect();
        println!("    {}", row.join(" "));
    }
}

fn main() -> Result<()> {
    let spec = TrialSpec::new(300, 200, 3, 60_000, 1);
    println!(
        "trial: {}x{} grid, {} classes, {} draws, seed {}\n",
        spec.m1, spec.m2, spec.classes, spec.n, spec.seed
    );
    let base = pipeline_config(spec.seed);
    let trial = run_synthetic_trial(&spec, &base)?;

    print_report("multinomial logit", &trial.logistic);
    println!();
    print_report("gaussian baseline", &trial.gaussian);

    println!("\npenalty search (logistic): grid {:?}", round4(&trial.logistic_selection.grid));
    println!("  validation scores {:?}", round4(&trial.logistic_selection.scores));
    if !trial.logistic_selection.refined.is_empty() {
        let refined: Vec<(f64, f64)> = trial
            .logistic_selection
            .refined
            .iter()
            .map(|&(l, s)| (round1(l), round1(s)))
            .collect();
        println!("  refinement pass   {refined:?}");
    }
    Ok(())
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| round1(x)).collect()
}

fn round1(x: f64) -> f64 {
    format!("{x:.4e}").parse().unwrap_or(x)
}
