//! Lifted coordinate gradient descent for nuclear-norm penalized risk
//! minimization, one slice at a time.
//!
//! The penalized problem `min_W Psi(W) + lambda * ||W||_*` is lifted to
//! non-negative combinations of unit rank-one atoms. Each outer iteration
//! computes the top singular pair of the negated risk gradient. If that
//! direction improves the lifted objective by more than the stopping
//! threshold, a new atom enters with an exactly line-searched weight;
//! otherwise the weights of the current support are reoptimized under
//! non-negativity, and the run stops once neither step helps more than
//! `epsilon`. On exit `||grad Psi||_op <= lambda + epsilon/2` holds, the
//! usual approximate optimality certificate for the convex problem.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkModel;
use crate::loss::{power_top_pair, refine_top_pair, SliceProblem, SparseMatrix, CERTIFY_MAX_ITERS};
use crate::tensor::{Atom, AtomicDecomposition, GroupedObservations, ObservationSet};

/// Weights below this are dropped from the support after reoptimization.
const PRUNE_TOL: f64 = 1e-12;

/// Atoms colinear with an existing support atom within this tolerance are
/// merged instead of appended.
const MERGE_TOL: f64 = 1e-9;

/// Knobs for one penalized solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Nuclear-norm penalty weight.
    pub lambda: f64,
    /// Absolute stopping precision. When `None`, it is resolved per
    /// problem as `epsilon_scale * Psi(0)`.
    pub epsilon: Option<f64>,
    /// Relative stopping precision used when `epsilon` is `None`.
    pub epsilon_scale: f64,
    pub max_outer_iters: usize,
    /// Relative tolerance on successive top singular value estimates.
    pub power_iter_tol: f64,
    pub power_iter_max: usize,
    /// First-order condition tolerance for the support reoptimization.
    pub support_reopt_tol: f64,
    pub support_reopt_max_iters: usize,
    /// Seed for the power iteration starts.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            epsilon: None,
            epsilon_scale: 1e-4,
            max_outer_iters: 2000,
            power_iter_tol: 1e-9,
            power_iter_max: 500,
            support_reopt_tol: 1e-8,
            support_reopt_max_iters: 200,
            seed: 0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::domain("lambda must be finite and non-negative"));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::domain("epsilon must be positive"));
            }
        }
        for (name, v) in [
            ("epsilon_scale", self.epsilon_scale),
            ("power_iter_tol", self.power_iter_tol),
            ("support_reopt_tol", self.support_reopt_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be positive and finite")));
            }
        }
        if self.max_outer_iters == 0 || self.power_iter_max == 0 {
            return Err(Error::domain("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Approximate optimality certificate at the final iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `lambda - sigma_top(-grad Psi)`. Values above `-epsilon/2` mean no
    /// new atom can improve the lifted objective meaningfully.
    pub atom_gap: f64,
    /// `max_j |lambda + <grad Psi, M_j>|` over support atoms; zero for an
    /// empty support.
    pub support_violation: f64,
}

/// Everything a single penalized solve produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub decomposition: AtomicDecomposition,
    /// Which parameter slice this fit belongs to.
    pub slice: usize,
    pub lambda: f64,
    /// Resolved absolute stopping precision.
    pub epsilon: f64,
    /// Lifted objective after the initial point and after every outer
    /// step. Non-increasing up to floating-point noise.
    pub objective_trace: Vec<f64>,
    pub certificate: Certificate,
    pub iterations: usize,
    pub wall_time_secs: f64,
    pub converged: bool,
    /// Largest `|W|` over the observed entries of the final iterate, a
    /// cheap check against the sup-norm scale the theory assumes.
    pub max_abs_entry: f64,
}

impl FitReport {
    /// Final lifted objective value.
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Top singular pair of a sparse matrix via seeded power iteration.
///
/// Returns `(u, v, sigma)` with `u^T A v = sigma >= 0`. A zero matrix has
/// no singular pair and reports [`Error::ZeroGradient`].
pub fn top_singular_pair(
    matrix: &SparseMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::domain("power iteration needs a positive tolerance and cap"));
    }
    power_top_pair(matrix, tol, max_iter, seed).ok_or(Error::ZeroGradient)
}

/// Penalized fit of one slice problem starting from the empty
/// decomposition.
pub fn solve_slice(problem: &SliceProblem, config: &SolverConfig) -> Result<FitReport> {
    let start = AtomicDecomposition::empty(problem.rows_dim(), problem.cols_dim());
    solve_slice_from(problem, config, &start)
}

/// Penalized fit warm-started from an existing decomposition, typically
/// the solution at the previous (larger) lambda on a grid.
pub fn solve_slice_from(
    problem: &SliceProblem,
    config: &SolverConfig,
    start: &AtomicDecomposition,
) -> Result<FitReport> {
    config.validate()?;
    if start.rows() != problem.rows_dim() || start.cols() != problem.cols_dim() {
        return Err(Error::structural(format!(
            "warm start shape {} x {} does not match problem {} x {}",
            start.rows(),
            start.cols(),
            problem.rows_dim(),
            problem.cols_dim()
        )));
    }
    let clock = Instant::now();
    let lambda = config.lambda;
    let rows = problem.entry_rows();
    let cols = problem.entry_cols();
    let e_count = problem.active_len();

    // A slice no observation informs: the risk is identically zero and the
    // penalty alone makes the empty decomposition optimal.
    if e_count == 0 {
        return Ok(FitReport {
            decomposition: AtomicDecomposition::empty(problem.rows_dim(), problem.cols_dim()),
            slice: problem.slice(),
            lambda,
            epsilon: config.epsilon.unwrap_or(0.0),
            objective_trace: vec![0.0],
            certificate: Certificate { atom_gap: lambda, support_violation: 0.0 },
            iterations: 0,
            wall_time_secs: clock.elapsed().as_secs_f64(),
            converged: true,
            max_abs_entry: 0.0,
        });
    }

    let epsilon = config.epsilon.unwrap_or(config.epsilon_scale * problem.objective_at_zero());
    // Absolute accuracy demanded of the operator norm estimate before a
    // stopping decision is trusted; well inside the epsilon/2 slack the
    // certificate promises.
    let certify_delta = (epsilon / 8.0).min(1e-8);

    let mut atoms: Vec<Atom> = start.atoms().to_vec();
    let mut weights: Vec<f64> = start.weights().to_vec();
    let mut w = vec![0.0; e_count];
    start.accumulate_entries_split(rows, cols, &mut w);

    let mut grad = vec![0.0; e_count];
    let mut neg_grad =
        SparseMatrix::new(problem.rows_dim(), problem.cols_dim(), rows.to_vec(), cols.to_vec(), vec![0.0; e_count])?;
    let mut scratch = vec![0.0; e_count];

    let lifted = |problem: &SliceProblem, w: &[f64], weights: &[f64]| -> Result<f64> {
        Ok(lambda * weights.iter().sum::<f64>() + problem.objective(w)?)
    };

    let mut trace = vec![lifted(problem, &w, &weights)?];
    let mut converged = false;
    let mut iterations = 0;
    let mut atom_gap = lambda;
    let mut support_violation = 0.0;

    for k in 0..config.max_outer_iters {
        iterations = k + 1;
        problem.gradient_values_into(&w, &mut grad)?;
        for (dst, &g) in neg_grad.values_mut().iter_mut().zip(&grad) {
            *dst = -g;
        }
        let pair = power_top_pair(
            &neg_grad,
            config.power_iter_tol,
            config.power_iter_max,
            mix_seed(config.seed, k as u64),
        );

        if pair.is_none() && atoms.is_empty() {
            // Zero gradient at the starting point: the empty decomposition
            // is already stationary.
            atom_gap = lambda;
            support_violation = 0.0;
            converged = true;
            break;
        }

        let mut pair = pair;
        let mut sigma_top = pair.as_ref().map_or(0.0, |p| p.2);
        atom_gap = lambda - sigma_top;

        if atom_gap > -epsilon / 2.0 {
            support_violation = support_gap(&grad, rows, cols, &atoms, lambda);
            if support_violation <= epsilon {
                // About to declare convergence: certify the operator
                // norm first. Near stationarity the gradient's top
                // singular values cluster at lambda, which stalls the
                // plain power iteration and understates the norm,
                // hiding directions that still improve the objective.
                if let Some((_, v, _)) = pair.as_ref() {
                    let refined =
                        refine_top_pair(&neg_grad, v, certify_delta, CERTIFY_MAX_ITERS);
                    if let Some(p) = refined {
                        if p.2 > sigma_top {
                            sigma_top = p.2;
                            atom_gap = lambda - sigma_top;
                            pair = Some(p);
                        }
                    }
                }
                if atom_gap > -epsilon / 2.0 {
                    converged = true;
                    break;
                }
            }
        }

        if atom_gap <= -epsilon / 2.0 {
            let (u, v, _) = pair.expect("atom step requires a singular pair");
            for (s, (&r, &c)) in scratch.iter_mut().zip(rows.iter().zip(cols)) {
                *s = u[r as usize] * v[c as usize];
            }
            let beta = line_search(problem, &w, &scratch, lambda, atom_gap)?;
            for (wi, &ai) in w.iter_mut().zip(&scratch) {
                *wi += beta * ai;
            }
            merge_or_push(&mut atoms, &mut weights, u, v, beta)?;
            trace.push(lifted(problem, &w, &weights)?);
            continue;
        }

        let (new_weights, _) = reoptimize_support(
            problem,
            &atoms,
            &weights,
            lambda,
            config.support_reopt_tol,
            config.support_reopt_max_iters,
        )?;
        weights = new_weights;
        prune_support(&mut atoms, &mut weights);
        recompute_entries(&atoms, &weights, rows, cols, &mut w);
        trace.push(lifted(problem, &w, &weights)?);
    }

    if !converged {
        // Ran out of outer iterations: report an honest certificate for
        // the final iterate.
        problem.gradient_values_into(&w, &mut grad)?;
        for (dst, &g) in neg_grad.values_mut().iter_mut().zip(&grad) {
            *dst = -g;
        }
        let sigma_top = power_top_pair(
            &neg_grad,
            config.power_iter_tol,
            config.power_iter_max,
            mix_seed(config.seed, config.max_outer_iters as u64),
        )
        .and_then(|(_, v, sigma)| {
            refine_top_pair(&neg_grad, &v, certify_delta, CERTIFY_MAX_ITERS)
                .map(|p| p.2.max(sigma))
                .or(Some(sigma))
        })
        .unwrap_or(0.0);
        atom_gap = lambda - sigma_top;
        support_violation = support_gap(&grad, rows, cols, &atoms, lambda);
    }

    let max_abs_entry = w.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let mut decomposition =
        AtomicDecomposition::from_parts(problem.rows_dim(), problem.cols_dim(), atoms, weights)?;
    decomposition.compact();

    Ok(FitReport {
        decomposition,
        slice: problem.slice(),
        lambda,
        epsilon,
        objective_trace: trace,
        certificate: Certificate { atom_gap, support_violation },
        iterations,
        wall_time_secs: clock.elapsed().as_secs_f64(),
        converged,
        max_abs_entry,
    })
}

/// Fits every slice of the multinomial model independently and returns
/// the reports in slice order.
pub fn solve_tensor(
    observations: &ObservationSet,
    link: &LinkModel,
    config: &SolverConfig,
) -> Result<Vec<FitReport>> {
    if observations.classes() != link.classes() {
        return Err(Error::structural(format!(
            "observations have {} classes, link expects {}",
            observations.classes(),
            link.classes()
        )));
    }
    if observations.is_empty() {
        return Err(Error::domain("observation set is empty"));
    }
    let grouped = observations.grouped();
    solve_grouped(&grouped, link, config, None)
}

/// Slice-parallel fit over pre-grouped observations, optionally warm
/// starting each slice from a previous solution.
pub(crate) fn solve_grouped(
    grouped: &GroupedObservations,
    link: &LinkModel,
    config: &SolverConfig,
    warm: Option<&[AtomicDecomposition]>,
) -> Result<Vec<FitReport>> {
    use rayon::prelude::*;
    let q = link.slice_count();
    if let Some(w) = warm {
        if w.len() != q {
            return Err(Error::structural("warm start slice count mismatch"));
        }
    }
    (0..q)
        .into_par_iter()
        .map(|l| {
            let problem = SliceProblem::multinomial(grouped, l)?;
            match warm {
                Some(w) => solve_slice_from(&problem, config, &w[l]),
                None => solve_slice(&problem, config),
            }
        })
        .collect()
}

pub(crate) fn mix_seed(seed: u64, k: u64) -> u64 {
    // splitmix64 step keeps per-iteration power starts decorrelated while
    // staying a pure function of the config seed.
    let mut z = seed ^ (k.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Exact minimization of `phi(b) = lambda*b + Psi(w + b*a)` over `b >= 0`
/// by safeguarded Newton on the derivative inside a doubling bracket.
fn line_search(
    problem: &SliceProblem,
    w: &[f64],
    a: &[f64],
    lambda: f64,
    derivative_at_zero: f64,
) -> Result<f64> {
    const DERIV_TOL: f64 = 1e-10;
    let mut trial = vec![0.0; w.len()];
    let mut grad = Vec::with_capacity(w.len());
    let mut eval = |beta: f64, grad: &mut Vec<f64>| -> Result<(f64, f64)> {
        for ((t, &wi), &ai) in trial.iter_mut().zip(w).zip(a) {
            *t = wi + beta * ai;
        }
        problem.gradient_values_into(&trial, grad)?;
        let d: f64 = lambda + grad.iter().zip(a).map(|(&g, &ai)| g * ai).sum::<f64>();
        // The curvature of phi is available from the same pass for the
        // multinomial case; a secant fallback handles the rest.
        Ok((d, beta))
    };

    debug_assert!(derivative_at_zero < 0.0);
    let mut lo = 0.0;
    let mut d_lo = derivative_at_zero;
    let mut hi = 1.0;
    let (mut d_hi, _) = eval(hi, &mut grad)?;
    let mut doublings = 0;
    while d_hi < 0.0 {
        lo = hi;
        d_lo = d_hi;
        hi *= 2.0;
        let r = eval(hi, &mut grad)?;
        d_hi = r.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::numerical("line search failed to bracket a minimizer"));
        }
    }
    if d_hi.abs() <= DERIV_TOL {
        return Ok(hi);
    }

    // Bisection tightened by secant steps; the derivative is increasing,
    // so the bracket [lo, hi] always contains the root.
    let mut beta = 0.5 * (lo + hi);
    for _ in 0..200 {
        // Prefer the secant estimate when it lands inside the bracket.
        let secant = lo - d_lo * (hi - lo) / (d_hi - d_lo);
        beta = if secant.is_finite() && secant > lo && secant < hi {
            secant
        } else {
            0.5 * (lo + hi)
        };
        let (d, _) = eval(beta, &mut grad)?;
        if d.abs() <= DERIV_TOL || (hi - lo) <= 1e-14 * hi.max(1.0) {
            return Ok(beta);
        }
        if d < 0.0 {
            lo = beta;
            d_lo = d;
        } else {
            hi = beta;
            d_hi = d;
        }
    }
    Ok(beta)
}

/// Adds `(u, v)` with weight `beta`, folding into an existing colinear
/// atom when possible so the support does not accumulate duplicates.
fn merge_or_push(
    atoms: &mut Vec<Atom>,
    weights: &mut Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    beta: f64,
) -> Result<()> {
    for (atom, weight) in atoms.iter().zip(weights.iter_mut()) {
        let du: f64 = atom.left().iter().zip(&u).map(|(a, b)| a * b).sum();
        let dv: f64 = atom.right().iter().zip(&v).map(|(a, b)| a * b).sum();
        if du >= 1.0 - MERGE_TOL && dv >= 1.0 - MERGE_TOL {
            *weight += beta;
            return Ok(());
        }
    }
    atoms.push(Atom::new(u, v)?);
    weights.push(beta);
    Ok(())
}

/// Largest first-order violation over the support:
/// `max_j |lambda + <grad Psi, u_j v_j^T>|`.
fn support_gap(grad: &[f64], rows: &[u32], cols: &[u32], atoms: &[Atom], lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for atom in atoms {
        let inner: f64 = grad
            .iter()
            .zip(rows.iter().zip(cols))
            .map(|(&g, (&r, &c))| g * atom.left()[r as usize] * atom.right()[c as usize])
            .sum();
        worst = worst.max((lambda + inner).abs());
    }
    worst
}

fn prune_support(atoms: &mut Vec<Atom>, weights: &mut Vec<f64>) {
    let keep: Vec<bool> = weights.iter().map(|&w| w >= PRUNE_TOL).collect();
    let mut i = 0;
    atoms.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    let mut j = 0;
    weights.retain(|_| {
        j += 1;
        keep[j - 1]
    });
}

fn recompute_entries(atoms: &[Atom], weights: &[f64], rows: &[u32], cols: &[u32], w: &mut [f64]) {
    w.fill(0.0);
    for (atom, &weight) in atoms.iter().zip(weights) {
        for ((&r, &c), wi) in rows.iter().zip(cols).zip(w.iter_mut()) {
            *wi += weight * atom.left()[r as usize] * atom.right()[c as usize];
        }
    }
}

/// Minimizes the lifted objective over the weights of a fixed support
/// under non-negativity, by projected gradient with a feasible-direction
/// backtracking line search and spectral step initialization.
///
/// Returns the best weights found and whether the first-order conditions
/// were met within `tol` inside the iteration budget.
pub fn reoptimize_support(
    problem: &SliceProblem,
    atoms: &[Atom],
    start_weights: &[f64],
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, bool)> {
    if atoms.len() != start_weights.len() {
        return Err(Error::structural("atom and weight counts differ"));
    }
    if start_weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::domain("start weights must be finite and non-negative"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let t = atoms.len();
    if t == 0 {
        return Ok((Vec::new(), true));
    }
    let rows = problem.entry_rows();
    let cols = problem.entry_cols();
    let e_count = problem.active_len();

    let mut w = start_weights.to_vec();
    let mut entries = vec![0.0; e_count];
    recompute_entries(atoms, &w, rows, cols, &mut entries);
    let mut objective = lambda * w.iter().sum::<f64>() + problem.objective(&entries)?;

    let mut grad_entries = Vec::with_capacity(e_count);
    let mut partial = vec![0.0; t];
    let mut prev_partial = vec![0.0; t];
    let mut prev_w = w.clone();
    let mut direction_entries = vec![0.0; e_count];
    let mut trial_entries = vec![0.0; e_count];
    let mut step = 1.0;
    let mut have_prev = false;

    for _ in 0..max_iters {
        problem.gradient_values_into(&entries, &mut grad_entries)?;
        for (j, atom) in atoms.iter().enumerate() {
            let inner: f64 = grad_entries
                .iter()
                .zip(rows.iter().zip(cols))
                .map(|(&g, (&r, &c))| g * atom.left()[r as usize] * atom.right()[c as usize])
                .sum();
            partial[j] = lambda + inner;
        }

        let violation = w
            .iter()
            .zip(&partial)
            .map(|(&wj, &pj)| if wj > 0.0 { pj.abs() } else { (-pj).max(0.0) })
            .fold(0.0f64, f64::max);
        if violation <= tol {
            return Ok((w, true));
        }

        if have_prev {
            // Barzilai-Borwein step from the last pair of iterates.
            let mut sy = 0.0;
            let mut ss = 0.0;
            for j in 0..t {
                let s = w[j] - prev_w[j];
                let y = partial[j] - prev_partial[j];
                sy += s * y;
                ss += s * s;
            }
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e12);
            }
        }
        prev_w.copy_from_slice(&w);
        prev_partial.copy_from_slice(&partial);
        have_prev = true;

        // Feasible direction toward the projected gradient point.
        let target: Vec<f64> = w
            .iter()
            .zip(&partial)
            .map(|(&wj, &pj)| (wj - step * pj).max(0.0))
            .collect();
        let direction: Vec<f64> = target.iter().zip(&w).map(|(&tj, &wj)| tj - wj).collect();
        let dir_norm_sq: f64 = direction.iter().map(|d| d * d).sum();
        if dir_norm_sq == 0.0 {
            return Ok((w, true));
        }
        let slope: f64 = direction.iter().zip(&partial).map(|(&d, &p)| d * p).sum();

        direction_entries.fill(0.0);
        for (j, atom) in atoms.iter().enumerate() {
            let dj = direction[j];
            if dj != 0.0 {
                for ((&r, &c), de) in rows.iter().zip(cols).zip(direction_entries.iter_mut()) {
                    *de += dj * atom.left()[r as usize] * atom.right()[c as usize];
                }
            }
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            for ((te, &ee), &de) in trial_entries.iter_mut().zip(&entries).zip(&direction_entries)
            {
                *te = ee + alpha * de;
            }
            let trial_w_sum: f64 =
                w.iter().zip(&direction).map(|(&wj, &dj)| wj + alpha * dj).sum();
            let trial_obj = lambda * trial_w_sum + problem.objective(&trial_entries)?;
            if trial_obj <= objective + 1e-4 * alpha * slope {
                for (wj, &dj) in w.iter_mut().zip(&direction) {
                    *wj = (*wj + alpha * dj).max(0.0);
                }
                entries.copy_from_slice(&trial_entries);
                objective = trial_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No decrease along the projected direction at tiny steps:
            // treat the iterate as numerically stationary.
            return Ok((w, false));
        }
    }
    Ok((w, false))
}
