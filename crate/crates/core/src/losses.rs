//! Training objectives: vanilla GAN terms, the sigmoid-bump satisfaction
//! probability, the range loss on violating samples, the slice-based
//! uniformity loss, and their weighted sum.
//!
//! Every loss returns its gradient with respect to the predicted labels (or
//! discriminator probabilities) alongside the value, so callers can
//! backpropagate through the estimator and generator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{log_sigmoid, sigmoid, Matrix};

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-label `[lb, ub]` bounds in normalized label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeCondition {
    pub bounds: Vec<(f64, f64)>,
}

impl RangeCondition {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::usage("a range condition needs at least one label"));
        }
        for (k, &(lb, ub)) in bounds.iter().enumerate() {
            if !(0.0..=1.0).contains(&lb) || !(0.0..=1.0).contains(&ub) {
                return Err(Error::usage(format!(
                    "condition bounds for label {k} must lie in [0, 1], got [{lb}, {ub}]"
                )));
            }
            if lb > ub {
                return Err(Error::usage(format!(
                    "lower bound {lb} exceeds upper bound {ub} for label {k}"
                )));
            }
        }
        Ok(RangeCondition { bounds })
    }

    pub fn single(lb: f64, ub: f64) -> Result<Self> {
        Self::new(vec![(lb, ub)])
    }

    pub fn n_labels(&self) -> usize {
        self.bounds.len()
    }

    /// Generator conditioning vector `[lb₁, ub₁, lb₂, ub₂, …]`.
    pub fn encode(&self) -> Vec<f64> {
        self.bounds.iter().flat_map(|&(lb, ub)| [lb, ub]).collect()
    }

    /// True when every label satisfies `(y − ub)(y − lb) ≤ 0`.
    pub fn is_satisfied(&self, labels: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(labels)
            .all(|(&(lb, ub), &y)| (y - ub) * (y - lb) <= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Sharpness of the two sigmoids.
    pub phi: f64,
    /// Weight of the range loss.
    pub lambda1: f64,
    /// Weight of the uniformity loss.
    pub lambda2: f64,
    /// Slice points drawn per batch for the uniformity loss.
    pub k: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            phi: 20.0,
            lambda1: 2.0,
            lambda2: 1.0,
            k: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0) || !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) || self.k == 0 {
            return Err(Error::config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// `σ(φ(y − lb)) − σ(φ(y − ub))`: close to 1 inside the window, decaying
/// smoothly outside it.
pub fn satisfaction_probability(y: f64, lb: f64, ub: f64, phi: f64) -> f64 {
    sigmoid(phi * (y - lb)) - sigmoid(phi * (y - ub))
}

/// Indicator of the range loss: the sample is outside or on the boundary.
#[inline]
pub fn violates(y: f64, lb: f64, ub: f64) -> bool {
    (y - ub) * (y - lb) >= 0.0
}

/// `−log p` and its derivative in `y`, evaluated in log space:
/// `σ(a) − σ(b) = σ(a)·σ(−b)·(1 − e^{b−a})` with `a = φ(y−lb)`, `b = φ(y−ub)`.
fn neg_log_satisfaction(y: f64, lb: f64, ub: f64, phi: f64) -> (f64, f64) {
    let a = phi * (y - lb);
    let b = phi * (y - ub);
    let width_term = (-(a - b)).exp();
    if width_term >= 1.0 {
        // Zero-width window: p ≡ 0, fall back to the clamped probability.
        return (-PROB_FLOOR.ln(), 0.0);
    }
    let log_p = log_sigmoid(a) + log_sigmoid(-b) + (-width_term).ln_1p();
    let d_log_p = phi * sigmoid(-a) - phi * sigmoid(b);
    (-log_p, -d_log_p)
}

/// Mean of `−log p` over violating samples; zero when none violate.
pub fn range_loss(y: &[f64], lb: f64, ub: f64, phi: f64) -> f64 {
    range_loss_grad(y, lb, ub, phi).0
}

/// Range loss and its gradient with respect to each `y`. Samples strictly
/// inside the window get exactly zero gradient.
pub fn range_loss_grad(y: &[f64], lb: f64, ub: f64, phi: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; y.len()];
    let violators: Vec<usize> = (0..y.len()).filter(|&i| violates(y[i], lb, ub)).collect();
    if violators.is_empty() {
        return (0.0, grad);
    }
    let m = violators.len() as f64;
    let mut total = 0.0;
    for &i in &violators {
        let (v, d) = neg_log_satisfaction(y[i], lb, ub, phi);
        total += v;
        grad[i] = d / m;
    }
    (total / m, grad)
}

/// `k` slice points drawn uniformly from `[lb, ub]`.
pub fn sample_slices<R: Rng + ?Sized>(rng: &mut R, lb: f64, ub: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| if ub > lb { rng.random_range(lb..=ub) } else { lb })
        .collect()
}

/// Uniformity loss over the samples inside `[lb, ub]`, with `k` random slices.
pub fn uniformity_loss<R: Rng + ?Sized>(y: &[f64], lb: f64, ub: f64, k: usize, rng: &mut R) -> f64 {
    let slices = sample_slices(rng, lb, ub, k);
    uniformity_loss_with_slices(y, None, lb, ub, &slices).0
}

/// Uniformity loss for fixed slice points, with its gradient in `y`.
///
/// Only samples with `mask[i]` set take part; without a mask, membership is
/// `y ∈ [lb, ub]`. For each slice `ε` the loss adds
/// `|mean(y ∈ [ε, ub]) − (ub+ε)/2| + |mean(y ∈ [lb, ε]) − (lb+ε)/2|`;
/// empty segments add nothing. The result is averaged over slices.
pub fn uniformity_loss_with_slices(
    y: &[f64],
    mask: Option<&[bool]>,
    lb: f64,
    ub: f64,
    slices: &[f64],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; y.len()];
    let members: Vec<usize> = match mask {
        Some(m) => (0..y.len()).filter(|&i| m[i]).collect(),
        None => (0..y.len()).filter(|&i| (y[i] - lb) * (y[i] - ub) <= 0.0).collect(),
    };
    if members.is_empty() || slices.is_empty() {
        return (0.0, grad);
    }
    let k = slices.len() as f64;
    let mut total = 0.0;
    for &eps in slices {
        for bound in [ub, lb] {
            let seg: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| (y[i] - bound) * (y[i] - eps) <= 0.0)
                .collect();
            if seg.is_empty() {
                continue;
            }
            let n = seg.len() as f64;
            let mean = seg.iter().map(|&i| y[i]).sum::<f64>() / n;
            let target = (bound + eps) / 2.0;
            let dev = mean - target;
            total += dev.abs();
            let s = if dev > 0.0 {
                1.0
            } else if dev < 0.0 {
                -1.0
            } else {
                0.0
            };
            for &i in &seg {
                grad[i] += s / (n * k);
            }
        }
    }
    (total / k, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanLosses {
    /// `−mean log D(x) − mean log(1 − D(G(z)))`
    pub discriminator: f64,
    /// Non-saturating generator term `−mean log D(G(z))`.
    pub generator_adv: f64,
    /// ∂ discriminator loss / ∂ d_real
    pub d_real_grad: Vec<f64>,
    /// ∂ discriminator loss / ∂ d_fake
    pub d_fake_grad: Vec<f64>,
    /// ∂ generator loss / ∂ d_fake
    pub g_fake_grad: Vec<f64>,
}

pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> GanLosses {
    let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let nr = d_real.len().max(1) as f64;
    let nf = d_fake.len().max(1) as f64;
    let mut disc = 0.0;
    let mut gen = 0.0;
    let mut d_real_grad = Vec::with_capacity(d_real.len());
    let mut d_fake_grad = Vec::with_capacity(d_fake.len());
    let mut g_fake_grad = Vec::with_capacity(d_fake.len());
    for &p in d_real {
        let p = clamp(p);
        disc -= p.ln() / nr;
        d_real_grad.push(-1.0 / (nr * p));
    }
    for &p in d_fake {
        let p = clamp(p);
        disc -= (1.0 - p).ln() / nf;
        gen -= p.ln() / nf;
        d_fake_grad.push(1.0 / (nf * (1.0 - p)));
        g_fake_grad.push(-1.0 / (nf * p));
    }
    GanLosses {
        discriminator: disc,
        generator_adv: gen,
        d_real_grad,
        d_fake_grad,
        g_fake_grad,
    }
}

pub fn generator_total_loss(adv: f64, range_l: f64, unif_l: f64, w: &LossWeights) -> f64 {
    adv + w.lambda1 * range_l + w.lambda2 * unif_l
}

/// Range and uniformity terms summed over the constrained labels of a batch.
#[derive(Debug, Clone)]
pub struct ConditionLosses {
    pub range: f64,
    pub uniformity: f64,
    /// Gradient of `λ1·range + λ2·uniformity` w.r.t. the predictions (N × L).
    pub grad: Matrix,
    /// Samples satisfying every constraint.
    pub n_satisfying: usize,
}

/// Multi-label combination: range losses add across labels; uniformity
/// losses add across labels, each computed over samples satisfying all
/// constraints. `slices[l]` are the frozen slice points for label `l`.
pub fn condition_losses(
    preds: &Matrix,
    cond: &RangeCondition,
    weights: &LossWeights,
    slices: &[Vec<f64>],
) -> Result<ConditionLosses> {
    let l = cond.n_labels();
    if preds.cols() != l || slices.len() != l {
        return Err(Error::config(format!(
            "predictions have {} labels, condition {l}, slices {}",
            preds.cols(),
            slices.len()
        )));
    }
    if preds.rows() == 0 {
        return Err(Error::usage("empty batch"));
    }
    let n = preds.rows();
    let mask: Vec<bool> = preds.iter_rows().map(|r| cond.is_satisfied(r)).collect();
    let mut grad = Matrix::zeros(n, l);
    let mut range = 0.0;
    let mut uniformity = 0.0;
    for (j, &(lb, ub)) in cond.bounds.iter().enumerate() {
        let y = preds.column(j);
        let (r, rg) = range_loss_grad(&y, lb, ub, weights.phi);
        let (u, ug) = uniformity_loss_with_slices(&y, Some(&mask), lb, ub, &slices[j]);
        range += r;
        uniformity += u;
        for i in 0..n {
            grad[(i, j)] = weights.lambda1 * rg[i] + weights.lambda2 * ug[i];
        }
    }
    Ok(ConditionLosses {
        range,
        uniformity,
        grad,
        n_satisfying: mask.iter().filter(|m| **m).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    #[test]
    fn satisfaction_probability_values() {
        // σ(2) − σ(−2)
        let oracle = logistic(2.0) - logistic(-2.0);
        assert!((oracle - 0.761594).abs() < 1e-6);
        assert!((satisfaction_probability(0.5, 0.4, 0.6, 20.0) - 0.761594).abs() < 1e-6);
        assert!((satisfaction_probability(0.4, 0.4, 0.6, 20.0) - 0.482014).abs() < 1e-6);
        assert!(satisfaction_probability(-1e3, 0.4, 0.6, 20.0).abs() < 1e-12);
        assert!(satisfaction_probability(1e3, 0.4, 0.6, 20.0).abs() < 1e-12);
    }

    #[test]
    fn satisfaction_probability_peaks_at_midpoint() {
        let (lb, ub, phi) = (0.3, 0.55, 20.0);
        let mid = 0.5 * (lb + ub);
        let peak = satisfaction_probability(mid, lb, ub, phi);
        let mut prev = peak;
        for k in 1..400 {
            let d = k as f64 * 0.0025;
            let right = satisfaction_probability(mid + d, lb, ub, phi);
            let left = satisfaction_probability(mid - d, lb, ub, phi);
            assert!((right - left).abs() < 1e-12, "symmetry at offset {d}");
            assert!(right < prev, "not strictly decreasing at offset {d}");
            prev = right;
        }
    }

    #[test]
    fn range_loss_values() {
        assert_eq!(range_loss(&[0.45, 0.5, 0.59], 0.4, 0.6, 20.0), 0.0);
        let oracle = -(logistic(6.0) - logistic(2.0)).ln();
        assert!((oracle - 2.1479).abs() < 1e-3);
        assert!((range_loss(&[0.7], 0.4, 0.6, 20.0) - oracle).abs() < 1e-12);
        assert!((range_loss(&[0.5, 0.7], 0.4, 0.6, 20.0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn range_loss_is_finite_far_outside() {
        let (v, g) = range_loss_grad(&[-50.0, 50.0], 0.4, 0.6, 20.0);
        assert!(v.is_finite() && v > 100.0);
        assert!(g[0] < 0.0 && g[1] > 0.0);
        assert!((g[0].abs() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn range_loss_inside_has_zero_gradient() {
        let (_, g) = range_loss_grad(&[0.41, 0.5, 0.7, 0.59], 0.4, 0.6, 20.0);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
        assert!(g[2] != 0.0);
    }

    #[test]
    fn range_loss_gradient_matches_fd() {
        let y = [0.1, 0.35, 0.45, 0.65, 0.9];
        let (_, g) = range_loss_grad(&y, 0.4, 0.6, 20.0);
        let err = grad_check(|p| range_loss(p, 0.4, 0.6, 20.0), &y, &g, 1e-5);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn uniformity_slice_examples() {
        let (v, _) = uniformity_loss_with_slices(&[0.45, 0.55], None, 0.4, 0.6, &[0.5]);
        assert!(v.abs() < 1e-15);
        let (v, _) = uniformity_loss_with_slices(&[0.4; 7], None, 0.4, 0.6, &[0.5]);
        assert!((v - 0.05).abs() < 1e-15);
        // Samples outside the window do not participate.
        let (v, g) = uniformity_loss_with_slices(&[0.45, 0.55, 0.9, 0.1], None, 0.4, 0.6, &[0.5]);
        assert!(v.abs() < 1e-15);
        assert_eq!(&g[2..], &[0.0, 0.0]);
    }

    #[test]
    fn uniformity_inactive_without_satisfying_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(uniformity_loss(&[0.1, 0.9], 0.4, 0.6, 5, &mut rng), 0.0);
    }

    #[test]
    fn uniform_labels_have_small_uniformity_loss() {
        // Monte-Carlo oracle: a segment mean of ~500 uniform draws on a width-0.1
        // interval deviates by ~0.0013, so five slices average well below 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let y: Vec<f64> = (0..1000).map(|_| rng.random_range(0.4..0.6)).collect();
            worst = worst.max(uniformity_loss(&y, 0.4, 0.6, 5, &mut rng));
        }
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn uniformity_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(0.3..0.7)).collect();
        let slices = sample_slices(&mut rng, 0.4, 0.6, 5);
        let (_, g) = uniformity_loss_with_slices(&y, None, 0.4, 0.6, &slices);
        // Membership is piecewise constant; with perturbation 1e-5 no sample
        // crosses a slice point or bound for this draw.
        let err = grad_check(
            |p| uniformity_loss_with_slices(p, None, 0.4, 0.6, &slices).0,
            &y,
            &g,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gan_loss_values() {
        let l = gan_losses(&[0.5], &[0.5]);
        assert!((l.discriminator - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.discriminator - 1.3863).abs() < 1e-4);
        assert!((l.generator_adv - 0.6931).abs() < 1e-4);
        let perfect = gan_losses(&[1.0 - 1e-15], &[1e-15]);
        assert!(perfect.discriminator < 1e-9);
        let clamped = gan_losses(&[0.0], &[1.0]);
        assert!(clamped.discriminator.is_finite());
    }

    #[test]
    fn gan_loss_gradients_match_fd() {
        let real = [0.3, 0.8, 0.55];
        let fake = [0.2, 0.6];
        let l = gan_losses(&real, &fake);
        let err = grad_check(|p| gan_losses(p, &fake).discriminator, &real, &l.d_real_grad, 1e-5);
        assert!(err < 1e-4);
        let err = grad_check(|p| gan_losses(&real, p).discriminator, &fake, &l.d_fake_grad, 1e-5);
        assert!(err < 1e-4);
        let err = grad_check(|p| gan_losses(&real, p).generator_adv, &fake, &l.g_fake_grad, 1e-5);
        assert!(err < 1e-4);
    }

    #[test]
    fn total_loss_combination() {
        let w = LossWeights::default();
        assert_eq!(generator_total_loss(0.69, 0.0, 0.0, &w), 0.69);
        assert!((generator_total_loss(0.69, 2.15, 0.05, &w) - 5.04).abs() < 1e-12);
        let off = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            ..w
        };
        assert_eq!(generator_total_loss(0.7, 3.0, 1.0, &off), 0.7);
    }

    #[test]
    fn condition_encoding_and_validation() {
        let c = RangeCondition::new(vec![(0.1, 0.3), (0.5, 0.9)]).unwrap();
        assert_eq!(c.encode(), vec![0.1, 0.3, 0.5, 0.9]);
        assert!(c.is_satisfied(&[0.3, 0.5]));
        assert!(!c.is_satisfied(&[0.31, 0.5]));
        assert!(RangeCondition::single(0.6, 0.4).is_err());
        assert!(RangeCondition::single(-0.1, 0.4).is_err());
    }

    #[test]
    fn multi_label_losses_add_up() {
        let preds = Matrix::from_rows(&[[0.2, 0.5], [0.25, 0.9], [0.7, 0.55]]).unwrap();
        let cond = RangeCondition::new(vec![(0.1, 0.3), (0.4, 0.6)]).unwrap();
        let w = LossWeights::default();
        let slices = vec![vec![0.2, 0.15], vec![0.5, 0.45]];
        let cl = condition_losses(&preds, &cond, &w, &slices).unwrap();
        let r0 = range_loss(&preds.column(0), 0.1, 0.3, w.phi);
        let r1 = range_loss(&preds.column(1), 0.4, 0.6, w.phi);
        assert!((cl.range - (r0 + r1)).abs() < 1e-12);
        // Only row 0 satisfies both constraints.
        assert_eq!(cl.n_satisfying, 1);
        let mask = [true, false, false];
        let u0 = uniformity_loss_with_slices(&preds.column(0), Some(&mask), 0.1, 0.3, &slices[0]).0;
        let u1 = uniformity_loss_with_slices(&preds.column(1), Some(&mask), 0.4, 0.6, &slices[1]).0;
        assert!((cl.uniformity - (u0 + u1)).abs() < 1e-12);
    }
}
