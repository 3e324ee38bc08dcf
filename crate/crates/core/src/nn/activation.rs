use super::{Real, Tensor};

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Subgradient at zero is taken as zero.
pub fn relu_backward<F: Real>(grad_out: &Tensor<F>, input_or_output: &Tensor<F>) -> Tensor<F> {
    let mut g = grad_out.clone();
    relu_backward_inplace(g.data_mut(), input_or_output.data());
    g
}

/// Zeroes `grad` wherever the activation was inactive; accepts either the
/// pre-activation or the ReLU output since both share the same sign pattern.
pub fn relu_backward_inplace<F: Real>(grad: &mut [F], activation: &[F]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward<F: Real>(grad_out: &Tensor<F>, output: &Tensor<F>) -> Tensor<F> {
    let mut g = grad_out.clone();
    for (g, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *g *= y * (F::one() - y);
    }
    g
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::{grad_check, GradCheck};

    #[test]
    fn relu_examples() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(&[3], 1.0);
        assert_eq!(relu_backward(&g, &x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let tiny = sigmoid_scalar(-400.0f64);
        assert!(tiny.is_finite() && tiny > 0.0);
        assert_eq!(sigmoid_scalar(500.0f64), 1.0);
        assert!(sigmoid_scalar(-500.0f32).is_finite());
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn activation_gradients() {
        let x = vec![-2.0, -0.3, 0.4, 1.7, 0.0, 2e-6];
        let cfg = GradCheck::default().with_input_kink(1e-5);
        let r = grad_check(
            &cfg,
            |v| {
                let t = Tensor::from_vec(&[v.len()], v.to_vec()).unwrap();
                let y = relu(&t);
                let w: Vec<f64> = (0..v.len()).map(|i| 1.0 + i as f64).collect();
                let wt = Tensor::from_vec(&[v.len()], w).unwrap();
                (y.dot(&wt), relu_backward(&wt, &t).into_data())
            },
            &x,
        );
        assert_eq!(r.excluded, vec![4, 5]);
        assert!(r.max_rel_error < 1e-8);

        let r = grad_check(
            &GradCheck::default(),
            |v| {
                let t = Tensor::from_vec(&[v.len()], v.to_vec()).unwrap();
                let y = sigmoid(&t);
                let ones = Tensor::full(&[v.len()], 1.0);
                (
                    y.data().iter().sum(),
                    sigmoid_backward(&ones, &y).into_data(),
                )
            },
            &x,
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
