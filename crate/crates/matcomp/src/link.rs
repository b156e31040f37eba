//! Conditional multinomial logit link and its associated constants and
//! divergences.
//!
//! A `K`-class distribution is parametrized by `q = K - 1` real numbers
//! `x_1..x_q`. Class `j <= q` has probability `sigma(x_j) * prod_{l<j}
//! (1 - sigma(x_l))` and class `K` takes the remaining mass. Each class
//! probability therefore factors across slices, and slice `l` contributes
//! the factor `sigma(x_l)` when `label == l`, `1 - sigma(x_l)` when
//! `label > l`, and `1` otherwise. The negative log-likelihood separates
//! into one convex term per slice, which is what the solver relies on.
//!
//! Labels are 1-based class values; slices are 0-based array indices, so
//! slice `s` carries the parameter for class `s + 1`.

use crate::error::{Error, Result};
use crate::tensor::ParameterTensor;

/// Numerically safe logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Squared Hellinger distance between two probability vectors.
pub(crate) fn hellinger_sq_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| {
        let d = a.sqrt() - b.sqrt();
        d * d
    }).sum()
}

/// Conditional multinomial logit link over a fixed number of classes.
///
/// `K = 2` gives the ordinary binomial logit; the same code path serves
/// both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkModel {
    classes: usize,
}

/// Constants attached to the link on a sup-norm box of radius `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConstants {
    /// Lipschitz constant of every per-slice factor log-likelihood:
    /// `sigma(gamma)`.
    pub lipschitz: f64,
    /// Upper bound on `-log` of any class probability over the box:
    /// `2 * softplus(gamma)`.
    pub sup_neg_log: f64,
    /// Lower curvature constant relating squared Hellinger distance to the
    /// squared parameter gap over the box. Closed form
    /// `sigma(gamma) * (1 - sigma(gamma)) / 8` for two classes; for more
    /// classes it is a numerical box-minimization estimate.
    pub hellinger_curvature: f64,
    /// True when `hellinger_curvature` came from numerical minimization
    /// rather than a closed form.
    pub curvature_is_estimate: bool,
}

impl LinkModel {
    pub fn conditional_logit(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::structural("link needs at least two classes"));
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of parameter slices, `K - 1`.
    pub fn slice_count(&self) -> usize {
        self.classes - 1
    }

    /// Class probabilities for one entry's parameter vector `x` of length
    /// `K - 1`.
    pub fn class_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.classes];
        self.probs_into(x, &mut out);
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.slice_count() {
            return Err(Error::structural(format!(
                "parameter vector has length {}, expected {}",
                x.len(),
                self.slice_count()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameter vector contains a non-finite value"));
        }
        Ok(())
    }

    /// Allocation-free probability kernel. `out` must have length `K`.
    /// Uses the plain product form, which is exact for representable
    /// sigmoid values (all of `x = 0` in particular).
    pub(crate) fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let mut survival = 1.0;
        for (l, &xl) in x.iter().enumerate() {
            let s = sigmoid(xl);
            out[l] = survival * s;
            survival *= 1.0 - s;
        }
        out[self.classes - 1] = survival;
    }

    /// Log class probabilities computed purely from softplus terms, stable
    /// for arbitrarily large inputs. `out` must have length `K`.
    pub(crate) fn log_probs_into(&self, x: &[f64], out: &mut [f64]) {
        let mut log_survival = 0.0;
        for (l, &xl) in x.iter().enumerate() {
            out[l] = log_survival - softplus(-xl);
            log_survival -= softplus(xl);
        }
        out[self.classes - 1] = log_survival;
    }

    /// Negative log of the slice-`slice` factor of class `label`'s
    /// probability at parameter `x`.
    ///
    /// Panics when `slice` or `label` is out of range; those are contract
    /// violations, not data conditions.
    pub fn neg_log_lik_factor(&self, slice: usize, label: u32, x: f64) -> f64 {
        self.check_factor_args(slice, label);
        let l = slice + 1;
        if (label as usize) == l {
            softplus(-x)
        } else if (label as usize) > l {
            softplus(x)
        } else {
            0.0
        }
    }

    /// Derivative of `log` of the slice-`slice` factor of class `label`'s
    /// probability, i.e. `g'/g` for that factor.
    pub fn score(&self, slice: usize, label: u32, x: f64) -> f64 {
        self.check_factor_args(slice, label);
        let l = slice + 1;
        if (label as usize) == l {
            1.0 - sigmoid(x)
        } else if (label as usize) > l {
            -sigmoid(x)
        } else {
            0.0
        }
    }

    fn check_factor_args(&self, slice: usize, label: u32) {
        assert!(slice < self.slice_count(), "slice {slice} out of range");
        assert!(
            label >= 1 && (label as usize) <= self.classes,
            "label {label} outside 1..={}",
            self.classes
        );
    }

    /// Link constants on the box of sup-norm radius `gamma`.
    pub fn constants(&self, gamma: f64) -> Result<LinkConstants> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::domain("gamma must be positive and finite"));
        }
        let (curv, est) = if self.classes == 2 {
            let s = sigmoid(gamma);
            (s * (1.0 - s) / 8.0, false)
        } else {
            (self.estimate_curvature(gamma), true)
        };
        Ok(LinkConstants {
            lipschitz: sigmoid(gamma),
            sup_neg_log: 2.0 * softplus(gamma),
            hellinger_curvature: curv,
            curvature_is_estimate: est,
        })
    }

    /// Squared Hellinger distance between the class distributions at two
    /// parameter vectors, divided by the squared euclidean gap. The
    /// curvature constant is the infimum of this ratio over the box.
    fn curvature_ratio(&self, x: &[f64], y: &[f64], px: &mut [f64], py: &mut [f64]) -> f64 {
        let gap: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if gap < 1e-12 {
            return f64::INFINITY;
        }
        self.probs_into(x, px);
        self.probs_into(y, py);
        hellinger_sq_probs(px, py) / gap
    }

    /// Multistart projected descent estimate of the curvature constant for
    /// three or more classes, where no closed form is available.
    fn estimate_curvature(&self, gamma: f64) -> f64 {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;

        let q = self.slice_count();
        let mut px = vec![0.0; self.classes];
        let mut py = vec![0.0; self.classes];
        let mut rng = ChaCha8Rng::seed_from_u64(0x6b67616d6d61);
        let mut best = f64::INFINITY;

        // Corner pairs catch minima on the box boundary. Enumerate when
        // cheap, sample otherwise.
        let corners = 1usize << q;
        let eval_corner_pair = |a: usize, b: usize, this: &Self, px: &mut [f64], py: &mut [f64]| {
            let x: Vec<f64> = (0..q).map(|i| if a >> i & 1 == 1 { gamma } else { -gamma }).collect();
            let y: Vec<f64> = (0..q).map(|i| if b >> i & 1 == 1 { gamma } else { -gamma }).collect();
            this.curvature_ratio(&x, &y, px, py)
        };
        if corners * corners <= 1 << 10 {
            for a in 0..corners {
                for b in 0..corners {
                    if a != b {
                        best = best.min(eval_corner_pair(a, b, self, &mut px, &mut py));
                    }
                }
            }
        } else {
            for _ in 0..1 << 10 {
                let a = rng.gen_range(0..corners);
                let b = rng.gen_range(0..corners);
                if a != b {
                    best = best.min(eval_corner_pair(a, b, self, &mut px, &mut py));
                }
            }
        }

        // Projected descent with a central-difference gradient from random
        // interior starts, plus near-diagonal starts that probe the local
        // (collapsing-pair) regime where the infimum often lives.
        let starts = 48;
        let h = 1e-6 * gamma.max(1.0);
        for s in 0..starts {
            let mut z: Vec<f64> = if s % 3 == 2 {
                // Near-diagonal: y = x + small perturbation.
                let x: Vec<f64> = (0..q).map(|_| rng.gen_range(-gamma..=gamma)).collect();
                let mut z = x.clone();
                z.extend(x.iter().map(|v| (v + rng.gen_range(-1e-3..=1e-3)).clamp(-gamma, gamma)));
                z
            } else {
                (0..2 * q).map(|_| rng.gen_range(-gamma..=gamma)).collect()
            };
            let eval = |z: &[f64], px: &mut [f64], py: &mut [f64]| {
                self.curvature_ratio(&z[..q], &z[q..], px, py)
            };
            let mut fz = eval(&z, &mut px, &mut py);
            let mut step = 0.1 * gamma;
            for _ in 0..150 {
                let mut grad = vec![0.0; 2 * q];
                for i in 0..2 * q {
                    let orig = z[i];
                    z[i] = (orig + h).clamp(-gamma, gamma);
                    let fp = eval(&z, &mut px, &mut py);
                    z[i] = (orig - h).clamp(-gamma, gamma);
                    let fm = eval(&z, &mut px, &mut py);
                    z[i] = orig;
                    grad[i] = (fp - fm) / (2.0 * h);
                }
                let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gnorm < 1e-14 {
                    break;
                }
                let mut improved = false;
                while step > 1e-12 {
                    let trial: Vec<f64> = z
                        .iter()
                        .zip(&grad)
                        .map(|(&zi, &gi)| (zi - step * gi / gnorm).clamp(-gamma, gamma))
                        .collect();
                    let ft = eval(&trial, &mut px, &mut py);
                    if ft < fz {
                        z = trial;
                        fz = ft;
                        step *= 1.5;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            best = best.min(fz);
        }
        best
    }

    /// Mean squared Hellinger distance between the entrywise class
    /// distributions of two parameter tensors, averaged over all entries.
    pub fn hellinger_sq(&self, a: &ParameterTensor, b: &ParameterTensor) -> Result<f64> {
        self.check_tensor_pair(a, b)?;
        let q = self.slice_count();
        let (m1, m2) = (a.rows(), a.cols());
        let mut xa = vec![0.0; q];
        let mut xb = vec![0.0; q];
        let mut pa = vec![0.0; self.classes];
        let mut pb = vec![0.0; self.classes];
        let mut acc = 0.0;
        for i in 0..m1 {
            for j in 0..m2 {
                for l in 0..q {
                    xa[l] = a.slice(l)[(i, j)];
                    xb[l] = b.slice(l)[(i, j)];
                }
                self.probs_into(&xa, &mut pa);
                self.probs_into(&xb, &mut pb);
                acc += hellinger_sq_probs(&pa, &pb);
            }
        }
        Ok(acc / (m1 * m2) as f64)
    }

    /// Mean Kullback-Leibler divergence `KL(a || b)` between the entrywise
    /// class distributions, averaged over all entries. Computed in log
    /// space so extreme parameters stay finite.
    pub fn kl_divergence(&self, a: &ParameterTensor, b: &ParameterTensor) -> Result<f64> {
        self.check_tensor_pair(a, b)?;
        let q = self.slice_count();
        let (m1, m2) = (a.rows(), a.cols());
        let mut xa = vec![0.0; q];
        let mut xb = vec![0.0; q];
        let mut la = vec![0.0; self.classes];
        let mut lb = vec![0.0; self.classes];
        let mut acc = 0.0;
        for i in 0..m1 {
            for j in 0..m2 {
                for l in 0..q {
                    xa[l] = a.slice(l)[(i, j)];
                    xb[l] = b.slice(l)[(i, j)];
                }
                self.log_probs_into(&xa, &mut la);
                self.log_probs_into(&xb, &mut lb);
                for k in 0..self.classes {
                    let p = la[k].exp();
                    if p > 0.0 {
                        acc += p * (la[k] - lb[k]);
                    }
                }
            }
        }
        Ok(acc / (m1 * m2) as f64)
    }

    fn check_tensor_pair(&self, a: &ParameterTensor, b: &ParameterTensor) -> Result<()> {
        let q = self.slice_count();
        if a.slice_count() != q || b.slice_count() != q {
            return Err(Error::structural(format!(
                "tensors have {} and {} slices, link expects {q}",
                a.slice_count(),
                b.slice_count()
            )));
        }
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::structural("tensor shapes differ"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for classes in 2..=5 {
            let link = LinkModel::conditional_logit(classes).unwrap();
            for _ in 0..2000 {
                let x: Vec<f64> =
                    (0..classes - 1).map(|_| rng.gen_range(-10.0..=10.0)).collect();
                let p = link.class_probabilities(&x).unwrap();
                assert!(p.iter().all(|&v| v > 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn five_class_zero_input_is_exact_dyadic() {
        let link = LinkModel::conditional_logit(5).unwrap();
        let p = link.class_probabilities(&[0.0; 4]).unwrap();
        assert_eq!(p, vec![0.5, 0.25, 0.125, 0.0625, 0.0625]);
    }

    #[test]
    fn three_class_probabilities_match_reference() {
        let link = LinkModel::conditional_logit(3).unwrap();
        let p = link.class_probabilities(&[1.0, -1.0]).unwrap();
        assert!((p[0] - 0.73105857863000487925).abs() < 1e-15);
        assert!((p[1] - 0.072329488128513268211).abs() < 1e-15);
        assert!((p[2] - 0.19661193324148185254).abs() < 1e-15);
    }

    #[test]
    fn two_class_reduces_to_logistic() {
        let link = LinkModel::conditional_logit(2).unwrap();
        for &x in &[-3.0, -0.2, 0.0, 1.7, 20.0] {
            let p = link.class_probabilities(&[x]).unwrap();
            assert!((p[0] - sigmoid(x)).abs() < 1e-15);
            assert!((p[1] - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn log_probs_agree_with_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let link = LinkModel::conditional_logit(4).unwrap();
        let mut lp = vec![0.0; 4];
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-8.0..=8.0)).collect();
            let p = link.class_probabilities(&x).unwrap();
            link.log_probs_into(&x, &mut lp);
            for k in 0..4 {
                assert!((lp[k].exp() - p[k]).abs() <= 1e-12 * p[k].max(1e-12));
            }
        }
    }

    #[test]
    fn factor_values_and_degenerate_cases() {
        let link = LinkModel::conditional_logit(5).unwrap();
        // Binomial special case: label 1, x = 0 gives log 2.
        let l2 = LinkModel::conditional_logit(2).unwrap();
        assert!((l2.neg_log_lik_factor(0, 1, 0.0) - 2.0f64.ln()).abs() < 1e-15);
        // Slice below the label contributes a survival factor.
        assert!((link.neg_log_lik_factor(1, 4, 0.7) - 1.1031860488854578932).abs() < 1e-15);
        // Slice above the label contributes nothing.
        assert_eq!(link.neg_log_lik_factor(2, 2, 3.4), 0.0);
        assert_eq!(link.score(2, 2, 3.4), 0.0);
    }

    #[test]
    fn neg_log_factors_compose_to_class_log_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let link = LinkModel::conditional_logit(5).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..=4.0)).collect();
            let p = link.class_probabilities(&x).unwrap();
            for label in 1..=5u32 {
                let total: f64 =
                    (0..4).map(|s| link.neg_log_lik_factor(s, label, x[s])).sum();
                assert!((total + p[label as usize - 1].ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn score_is_derivative_of_log_factor() {
        let link = LinkModel::conditional_logit(4).unwrap();
        let h = 1e-6;
        for slice in 0..3 {
            for label in 1..=4u32 {
                for &x in &[-2.0, -0.3, 0.0, 1.1, 2.9] {
                    let fd = (link.neg_log_lik_factor(slice, label, x + h)
                        - link.neg_log_lik_factor(slice, label, x - h))
                        / (2.0 * h);
                    // score is d/dx log g, the factor stores -log g.
                    assert!((fd + link.score(slice, label, x)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn constants_closed_forms() {
        let link = LinkModel::conditional_logit(2).unwrap();
        let c = link.constants(2.0).unwrap();
        assert!(!c.curvature_is_estimate);
        assert!((c.hellinger_curvature - 0.013124198175438314669).abs() < 1e-15);
        assert!((c.lipschitz - sigmoid(2.0)).abs() < 1e-15);
        let c15 = link.constants(1.5).unwrap();
        assert!((c15.sup_neg_log - 3.402826555965504819).abs() < 1e-14);
        // Lipschitz constant grows with the box.
        assert!(c15.lipschitz < c.lipschitz);
        assert!(link.constants(0.0).is_err());
        assert!(link.constants(f64::NAN).is_err());
    }

    #[test]
    fn curvature_estimate_dominates_binomial_closed_form() {
        // The closed form is a lower bound on the true infimum, so the
        // numerical minimum must sit above it (about a factor two).
        let link = LinkModel::conditional_logit(2).unwrap();
        let closed = link.constants(1.0).unwrap().hellinger_curvature;
        let est = link.estimate_curvature(1.0);
        assert!(est >= closed * 0.999, "estimate {est} below closed form {closed}");
        assert!(est <= closed * 4.0, "estimate {est} implausibly large vs {closed}");
    }

    #[test]
    fn multiclass_curvature_is_positive_and_flagged() {
        let link = LinkModel::conditional_logit(5).unwrap();
        let c = link.constants(1.0).unwrap();
        assert!(c.curvature_is_estimate);
        assert!(c.hellinger_curvature > 0.0);
        assert!(c.hellinger_curvature < 0.25);
    }

    fn random_tensor(q: usize, m1: usize, m2: usize, seed: u64, scale: f64) -> ParameterTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slices = (0..q)
            .map(|_| Array2::from_shape_fn((m1, m2), |_| rng.gen_range(-scale..=scale)))
            .collect();
        ParameterTensor::new(slices, None).unwrap()
    }

    #[test]
    fn kl_dominates_hellinger_on_random_pairs() {
        let link = LinkModel::conditional_logit(3).unwrap();
        for seed in 0..20 {
            let a = random_tensor(2, 6, 4, seed, 3.0);
            let b = random_tensor(2, 6, 4, seed + 1000, 3.0);
            let kl = link.kl_divergence(&a, &b).unwrap();
            let hel = link.hellinger_sq(&a, &b).unwrap();
            assert!(hel >= 0.0);
            assert!(kl >= hel - 1e-12, "kl {kl} < hellinger {hel}");
        }
    }

    #[test]
    fn divergences_vanish_on_identical_tensors() {
        let link = LinkModel::conditional_logit(4).unwrap();
        let a = random_tensor(3, 5, 5, 42, 2.0);
        assert_eq!(link.kl_divergence(&a, &a).unwrap(), 0.0);
        assert_eq!(link.hellinger_sq(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn divergences_reject_shape_mismatch() {
        let link = LinkModel::conditional_logit(3).unwrap();
        let a = random_tensor(2, 5, 5, 1, 1.0);
        let b = random_tensor(2, 5, 4, 2, 1.0);
        assert!(link.kl_divergence(&a, &b).is_err());
        let c = random_tensor(3, 5, 5, 3, 1.0);
        assert!(link.hellinger_sq(&a, &c).is_err());
    }

    #[test]
    fn input_validation() {
        let link = LinkModel::conditional_logit(3).unwrap();
        assert!(link.class_probabilities(&[1.0]).is_err());
        assert!(link.class_probabilities(&[1.0, f64::NAN]).is_err());
        assert!(LinkModel::conditional_logit(1).is_err());
    }
}
