//! Cross-checks against independent references: constants evaluated
//! with 50-digit arithmetic and frozen here as literals, dense linear
//! algebra from nalgebra, a from-scratch proximal-gradient solver,
//! finite differences, and numerical quadrature. None of the reference
//! paths share code with the implementations they check.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use matcomp::{
    gaussian_class_probs, gradient_ceiling, sample_observations, solve_tensor, theoretical_lambda,
    top_singular_pair, generate_truth, GroupedObservations, LinkModel, ModelKind, Observation,
    ObservationSet, SamplingDistribution, SliceProblem, SolverConfig, SparseMatrix, SyntheticSpec,
};

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let scale = expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= tol * scale,
        "{what}: got {actual:.17e}, reference {expected:.17e}"
    );
}

// ---------------------------------------------------------------------
// Frozen high-precision constants.
// ---------------------------------------------------------------------

#[test]
fn link_values_match_high_precision_references() {
    // Two classes at x = 1: the first class probability is the
    // standard logistic function.
    let binary = LinkModel::conditional_logit(2).unwrap();
    let p = binary.class_probabilities(&[1.0]).unwrap();
    assert_close(p[0], 0.73105857863000487925, 1e-15, "sigma(1)");
    assert_close(p[1], 1.0 - 0.73105857863000487925, 1e-15, "1 - sigma(1)");

    // Three classes at x = (1, -1).
    let ternary = LinkModel::conditional_logit(3).unwrap();
    let p = ternary.class_probabilities(&[1.0, -1.0]).unwrap();
    assert_close(p[0], 0.73105857863000487925, 1e-15, "p1 at (1,-1)");
    assert_close(p[1], 0.072329488128513268211, 1e-15, "p2 at (1,-1)");
    assert_close(p[2], 0.19661193324148185254, 1e-15, "p3 at (1,-1)");
    assert_close(p.iter().sum::<f64>(), 1.0, 1e-15, "probability mass");

    // The per-observation loss factor for a first-class label is
    // softplus(-x); at x = -0.7 that is softplus(0.7).
    let factor = binary.neg_log_lik_factor(0, 1, -0.7);
    assert_close(factor, 1.1031860488854578932, 1e-15, "softplus(0.7)");

    // Worst-case per-observation loss over |x| <= 1.5 is 2 softplus(1.5).
    let constants = binary.constants(1.5).unwrap();
    assert_close(constants.sup_neg_log, 3.402826555965504819, 1e-15, "2 softplus(1.5)");

    // Binary curvature constant at gamma = 2 has the closed form
    // sigma(2) (1 - sigma(2)) / 8.
    let constants = binary.constants(2.0).unwrap();
    assert!(!constants.curvature_is_estimate, "binary curvature is exact");
    assert_close(
        constants.hellinger_curvature,
        0.013124198175438314669,
        1e-14,
        "binary curvature at 2",
    );
}

#[test]
fn theoretical_lambda_matches_independent_arithmetic() {
    // 6 L sqrt(2 nu ln(m1 + m2) / (min(m1, m2) n)), evaluated with
    // 50-digit arithmetic for five parameter sets.
    let sigma = sigmoid(1.0);
    let sigma2 = sigmoid(2.0);
    let sigma08 = sigmoid(0.8);
    let cases: [(f64, f64, usize, usize, usize, f64); 5] = [
        (0.5, 1.0, 10_000, 100, 100, 0.00976574178431237553),
        (sigma, 1.0, 10_000, 100, 100, 0.0142786586162141059),
        (sigma2, 1.5, 500_000, 1000, 600, 0.00143545421599400493),
        (sigma08, 3.0, 100_000, 500, 300, 0.00478671279112019037),
        (0.75, 2.25, 12_345, 321, 123, 0.0191265613384386839),
    ];
    for (lipschitz, nu, n, m1, m2, expected) in cases {
        let got = theoretical_lambda(lipschitz, nu, n, m1, m2).unwrap();
        assert_close(got, expected, 1e-13, "theoretical lambda");
    }
}

// ---------------------------------------------------------------------
// Gaussian class probabilities against quadrature.
// ---------------------------------------------------------------------

/// Simpson's rule for the N(mu, sigma^2) density over [a, b].
fn normal_mass_simpson(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let steps = 20_000usize;
    let h = (b - a) / steps as f64;
    let density = |x: f64| {
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut acc = density(a) + density(b);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * density(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn gaussian_bins_match_quadrature_and_reference() {
    let (mu, sigma, classes) = (2.3, 0.8, 5);
    let probs = gaussian_class_probs(mu, sigma, classes).unwrap();

    let reference = [
        0.15865525393145705,
        0.44005107175146667,
        0.33448647304821821,
        0.063827438033803509,
        0.0029797632350545568,
    ];
    // The library's normal CDF is accurate to roughly 1e-11 relative;
    // the frozen references themselves carry 20 digits.
    for (k, (&got, &want)) in probs.iter().zip(&reference).enumerate() {
        assert_close(got, want, 5e-10, &format!("frozen bin {k}"));
    }

    // Independent integration of the density between the half-integer
    // thresholds; the open tails run 12 standard deviations out.
    let far_left = mu - 12.0 * sigma;
    let far_right = mu + 12.0 * sigma;
    for k in 1..=classes {
        let a = if k == 1 { far_left } else { k as f64 - 0.5 };
        let b = if k == classes { far_right } else { k as f64 + 0.5 };
        let mass = normal_mass_simpson(mu, sigma, a, b);
        assert_close(probs[k - 1], mass, 1e-10, &format!("quadrature bin {k}"));
    }
    assert_close(probs.iter().sum::<f64>(), 1.0, 1e-12, "bin mass");
}

// ---------------------------------------------------------------------
// Power iteration against dense SVD.
// ---------------------------------------------------------------------

#[test]
fn power_iteration_matches_dense_svd() {
    let mut rng = StdRng::seed_from_u64(31);
    for instance in 0..20 {
        let (m1, m2) = (15usize, 12usize);
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut dense = DMatrix::<f64>::zeros(m1, m2);
        for i in 0..m1 {
            for j in 0..m2 {
                if rng.gen_bool(0.4) {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    rows.push(i as u32);
                    cols.push(j as u32);
                    vals.push(v);
                    dense[(i, j)] = v;
                }
            }
        }
        if vals.is_empty() {
            continue;
        }
        let sparse = SparseMatrix::new(m1, m2, rows, cols, vals).unwrap();
        let (u, v, sigma) = top_singular_pair(&sparse, 1e-12, 10_000, instance).unwrap();
        let svd = dense.clone().svd(true, true);
        let sigma_dense = svd.singular_values[0];
        assert_close(sigma, sigma_dense, 1e-8, "top singular value");

        // The returned pair must realize the singular value on the
        // matrix itself: u^T A v = sigma.
        let ud = DMatrix::from_column_slice(m1, 1, &u);
        let vd = DMatrix::from_column_slice(m2, 1, &v);
        let realized = (ud.transpose() * &dense * vd)[(0, 0)];
        assert_close(realized.abs(), sigma_dense, 1e-8, "realized singular value");
    }
}

// ---------------------------------------------------------------------
// Analytic slice gradients against central finite differences.
// ---------------------------------------------------------------------

fn random_set(m1: usize, m2: usize, classes: usize, n: usize, seed: u64) -> ObservationSet {
    let spec = SyntheticSpec::new(m1, m2, classes, seed);
    let truth = generate_truth(&spec).unwrap();
    let dist = SamplingDistribution::uniform(m1, m2).unwrap();
    sample_observations(&truth, &dist, n, seed ^ 0x5555).unwrap()
}

#[test]
fn slice_gradients_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(7);
    for (case, &classes) in [2usize, 5, 3, 5].iter().enumerate() {
        let set = random_set(10, 8, classes, 1_500, case as u64 + 1);
        let grouped: GroupedObservations = set.grouped();
        for slice in 0..classes - 1 {
            let problem = SliceProblem::multinomial(&grouped, slice).unwrap();
            let len = problem.active_len();
            let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let grad = problem.gradient(&w).unwrap();
            let (_, _, grad_vals) = grad.coordinates();
            let h = 1e-5;
            for e in 0..len {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[e] += h;
                wm[e] -= h;
                let fd = (problem.objective(&wp).unwrap() - problem.objective(&wm).unwrap())
                    / (2.0 * h);
                assert_close(grad_vals[e], fd, 1e-5, &format!("slice {slice} entry {e}"));
            }
        }
    }
}

// ---------------------------------------------------------------------
// Full solver against a dense proximal-gradient reference.
// ---------------------------------------------------------------------

/// Builds a fully observed binary dataset on an m1 x m2 grid with
/// `per_cell` draws per cell from a random bounded logit matrix.
fn full_binary_set(m1: usize, m2: usize, per_cell: usize, seed: u64) -> ObservationSet {
    let mut rng = StdRng::seed_from_u64(seed);
    let star: Vec<f64> = (0..m1 * m2).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut records = Vec::with_capacity(m1 * m2 * per_cell);
    for i in 0..m1 {
        for j in 0..m2 {
            let p = sigmoid(star[i * m2 + j]);
            for _ in 0..per_cell {
                let label = if rng.gen_bool(p) { 1 } else { 2 };
                records.push(Observation { row: i as u32, col: j as u32, label });
            }
        }
    }
    ObservationSet::new(m1, m2, 2, records).unwrap()
}

/// Mean negative log-likelihood of a dense logit matrix, written
/// directly from the record list.
fn dense_nll(set: &ObservationSet, w: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for o in set.records() {
        let x = w[(o.row as usize, o.col as usize)];
        acc += if o.label == 1 { stable_softplus(-x) } else { stable_softplus(x) };
    }
    acc / set.len() as f64
}

/// Gradient of [`dense_nll`], accumulated per cell.
fn dense_grad(set: &ObservationSet, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for o in set.records() {
        let cell = (o.row as usize, o.col as usize);
        let s = sigmoid(w[cell]);
        g[cell] += if o.label == 1 { s - 1.0 } else { s };
    }
    g / set.len() as f64
}

fn nuclear_norm(w: &DMatrix<f64>) -> f64 {
    w.clone().svd(false, false).singular_values.iter().sum()
}

/// Singular value soft-thresholding.
fn svt(w: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = w.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut s = svd.singular_values.clone();
    for v in s.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
    u * DMatrix::from_diagonal(&s) * vt
}

/// Dense proximal gradient descent on nll + lambda * nuclear norm,
/// run to a 1e-10 gradient-map norm.
fn prox_oracle(set: &ObservationSet, lambda: f64) -> (DMatrix<f64>, f64) {
    let (m1, m2) = (set.rows(), set.cols());
    // Per-cell draw counts bound the Hessian diagonal by c / (4 n).
    let mut counts = vec![0.0f64; m1 * m2];
    for o in set.records() {
        counts[o.row as usize * m2 + o.col as usize] += 1.0;
    }
    let lipschitz = counts.iter().cloned().fold(0.0, f64::max) / (4.0 * set.len() as f64);
    let step = 1.0 / lipschitz;

    let mut w = DMatrix::<f64>::zeros(m1, m2);
    for _ in 0..200_000 {
        let g = dense_grad(set, &w);
        let next = svt(&(&w - step * g), step * lambda);
        let map_norm = (&next - &w).norm() / step;
        w = next;
        if map_norm < 1e-10 {
            break;
        }
    }
    let objective = dense_nll(set, &w) + lambda * nuclear_norm(&w);
    (w, objective)
}

#[test]
fn solver_objective_matches_dense_proximal_oracle() {
    let link = LinkModel::conditional_logit(2).unwrap();
    for instance in 0..10u64 {
        let set = full_binary_set(6, 5, 40, 1000 + instance);
        let ceiling = gradient_ceiling(&set, ModelKind::Logistic).unwrap();
        let lambda = ceiling * if instance % 2 == 0 { 0.3 } else { 0.08 };

        let mut config = SolverConfig::new(lambda).with_seed(instance);
        config.epsilon = Some(1e-7);
        config.support_reopt_tol = 1e-10;
        config.support_reopt_max_iters = 2_000;
        config.max_outer_iters = 20_000;
        let report = solve_tensor(&set, &link, &config).unwrap().remove(0);
        assert!(report.converged, "instance {instance} did not converge");

        let fit = report.decomposition.reconstruct();
        let fit_dense = DMatrix::from_fn(set.rows(), set.cols(), |i, j| fit[(i, j)]);
        let solver_obj = dense_nll(&set, &fit_dense) + lambda * nuclear_norm(&fit_dense);

        let (_, oracle_obj) = prox_oracle(&set, lambda);
        let gap = solver_obj - oracle_obj;
        assert!(
            gap.abs() <= 1e-4,
            "instance {instance}: solver {solver_obj:.10}, oracle {oracle_obj:.10}"
        );
        assert!(
            gap >= -1e-6,
            "instance {instance}: solver beat the tight oracle by {gap:.3e}"
        );
    }
}

// ---------------------------------------------------------------------
// Solver certificate against dense SVD of the gradient.
// ---------------------------------------------------------------------

#[test]
fn certificate_matches_dense_svd_of_gradient() {
    let link = LinkModel::conditional_logit(2).unwrap();
    let set = full_binary_set(20, 15, 12, 77);
    let ceiling = gradient_ceiling(&set, ModelKind::Logistic).unwrap();
    let lambda = ceiling / 6.0;
    let mut config = SolverConfig::new(lambda).with_seed(5);
    config.epsilon = Some(1e-6);
    let report = solve_tensor(&set, &link, &config).unwrap().remove(0);
    assert!(report.converged);

    let fit = report.decomposition.reconstruct();
    let fit_dense = DMatrix::from_fn(set.rows(), set.cols(), |i, j| fit[(i, j)]);
    let grad = dense_grad(&set, &fit_dense);
    let sigma_top = grad.clone().svd(false, false).singular_values[0];

    // First-order optimality: the gradient's operator norm must not
    // exceed the penalty by more than the certified slack.
    assert!(
        sigma_top <= lambda + report.epsilon / 2.0 + 1e-8,
        "sigma_top {sigma_top:.6e} vs lambda {lambda:.6e} + eps/2 {:.6e}",
        report.epsilon / 2.0
    );

    // The reported atom gap is lambda minus the same operator norm, up
    // to power-iteration tolerance.
    let implied = lambda - report.certificate.atom_gap;
    assert_close(implied, sigma_top, 1e-6, "certificate operator norm");
}
