//! Fits the Gaussian baseline and compares it with the multinomial
//! logit model on one shared test split.
//!
//! The baseline treats labels as real numbers, recovers a single
//! penalized matrix under squared loss, estimates a residual scale,
//! and turns both into class probabilities by integrating the normal
//! density between half-integer thresholds. On data generated by the
//! logit model it stays behind the matched likelihood, which is the
//! point of carrying it as a baseline.
//!
//! ```text
//! cargo run --release --example fit_gaussian
//! ```

use matcomp::{
    evaluate_gaussian, evaluate_logistic, fit_gaussian, generate_truth, gradient_ceiling,
    holdout_split, sample_observations, solve_tensor, LinkModel, ModelKind, Result,
    SamplingDistribution, SolverConfig, SyntheticSpec,
};

fn main() -> Result<()> {
    let spec = SyntheticSpec::new(150, 100, 5, 21);
    let truth = generate_truth(&spec)?;
    let dist = SamplingDistribution::uniform(spec.m1, spec.m2)?;
    let all = sample_observations(&truth, &dist, 30_000, 2)?;
    let (train, test) = holdout_split(&all, 0.2, 3)?;
    println!("{} train records, {} test records, {} classes", train.len(), test.len(), 5);

    // Anchor each model's penalty at its own null threshold; the two
    // losses live on different gradient scales.
    let g_ceiling = gradient_ceiling(&train, ModelKind::Gaussian)?;
    let config = SolverConfig::new(g_ceiling / 8.0).with_seed(1);
    let gaussian = fit_gaussian(&train, &config)?;
    println!(
        "gaussian baseline: {} atoms at lambda {:.4e}, sigma_hat {:.4}, objective {:.6}",
        gaussian.decomposition().len(),
        config.lambda,
        gaussian.sigma_hat,
        gaussian.report.objective()
    );

    let l_ceiling = gradient_ceiling(&train, ModelKind::Logistic)?;
    let config = SolverConfig::new(l_ceiling / 8.0).with_seed(1);
    let link = LinkModel::conditional_logit(spec.classes)?;
    let logistic = solve_tensor(&train, &link, &config)?;
    let atoms: Vec<String> =
        logistic.iter().map(|r| r.decomposition.len().to_string()).collect();
    println!(
        "logistic model: [{}] atoms across the slices at lambda {:.4e}",
        atoms.join(", "),
        config.lambda
    );

    let g = evaluate_gaussian(&gaussian, &test, Some(&truth), train.len(), 1)?;
    let l = evaluate_logistic(&logistic, &test, Some(&truth), train.len(), 1)?;
    println!("\n                 logistic   gaussian");
    println!(
        "prediction error  {:.4}     {:.4}",
        l.prediction_error, g.prediction_error
    );
    println!(
        "kl per class      {:.4}     {:.4}",
        l.kl_per_class.unwrap_or(f64::NAN),
        g.kl_per_class.unwrap_or(f64::NAN)
    );
    println!(
        "sq. hellinger     {:.4}     {:.4}",
        l.hellinger_sq.unwrap_or(f64::NAN),
        g.hellinger_sq.unwrap_or(f64::NAN)
    );
    Ok(())
}
