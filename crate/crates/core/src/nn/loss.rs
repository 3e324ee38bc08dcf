use super::activation::{sigmoid_scalar, softplus};
use super::Real;

/// Smooth L1 of `pred - target`, returning the loss and its derivative in `pred`.
pub fn smooth_l1<F: Real>(pred: F, target: F) -> (F, F) {
    let d = pred - target;
    let half = F::lit(0.5);
    if d.abs() < F::one() {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

/// Component-summed smooth L1 over a 2-vector.
pub fn smooth_l1_vec2<F: Real>(pred: [F; 2], target: [F; 2]) -> (F, [F; 2]) {
    let (a, ga) = smooth_l1(pred[0], target[0]);
    let (b, gb) = smooth_l1(pred[1], target[1]);
    (a + b, [ga, gb])
}

/// `-(beta p log p_hat + (1 - p) log(1 - p_hat))` on a probability.
///
/// Terms with a zero coefficient are dropped, so a saturated but correct
/// prediction yields exactly zero.
pub fn weighted_bce<F: Real>(p_hat: F, p: F, beta: F) -> F {
    let mut loss = F::zero();
    if p != F::zero() {
        loss -= beta * p * p_hat.ln();
    }
    if p != F::one() {
        loss -= (F::one() - p) * (F::one() - p_hat).ln();
    }
    loss
}

/// Weighted BCE evaluated on the logit `z` (p_hat = sigmoid(z)); returns the
/// loss and its derivative in `z`.
pub fn weighted_bce_with_logits<F: Real>(z: F, p: F, beta: F) -> (F, F) {
    // log sigmoid(z) = -softplus(-z), log(1 - sigmoid(z)) = -softplus(z)
    let loss = beta * p * softplus(-z) + (F::one() - p) * softplus(z);
    let s = sigmoid_scalar(z);
    let grad = beta * p * (s - F::one()) + (F::one() - p) * s;
    (loss, grad)
}
