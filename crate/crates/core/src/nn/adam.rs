use rand::Rng;

use super::{Real, Tensor};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub m: Tensor<F>,
    pub v: Tensor<F>,
    pub step: u64,
}

impl<F: Real> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            step: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::lit(rng.random_range(-limit..limit)))
            .collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.002,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step<F: Real>(param: &mut Parameter<F>, cfg: &AdamConfig) {
    param.step += 1;
    let t = param.step as i32;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let c1 = F::lit(1.0 - cfg.beta1.powi(t));
    let c2 = F::lit(1.0 - cfg.beta2.powi(t));
    let lr = F::lit(cfg.lr);
    let eps = F::lit(cfg.eps);
    let decay = F::lit(cfg.lr * cfg.weight_decay);
    let one = F::one();
    let value = param.value.data_mut();
    let grad = param.grad.data();
    let m = param.m.data_mut();
    let v = param.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let old = value[i];
        value[i] = old - lr * m_hat / (v_hat.sqrt() + eps) - decay * old;
    }
}

/// Step-wise learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.every == 0 {
            return self.base;
        }
        self.base * self.factor.powi((step / self.every) as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 3e-4,
            factor: 0.1,
            every: 7000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new("w", Tensor::<f64>::full(&[3], 1.5));
        adam_step(
            &mut p,
            &AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        assert_eq!(p.value.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = Parameter::new("w", Tensor::<f64>::full(&[4], 0.2));
        p.grad.fill(1.0);
        adam_step(&mut p, &cfg);
        for &v in p.value.data() {
            // m_hat = 1, v_hat = 1 => step lr / (1 + eps)
            assert!((0.2 - v - cfg.lr).abs() < 1e-10);
        }
        let cfg = AdamConfig::default();
        let mut p = Parameter::new("w", Tensor::<f64>::full(&[1], 1.0));
        p.grad.fill(1.0);
        adam_step(&mut p, &cfg);
        let expected = 1.0 - cfg.lr / (1.0 + cfg.eps) - cfg.lr * cfg.weight_decay;
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_gradients_identical_updates() {
        let mut a = Parameter::new("a", Tensor::<f32>::full(&[5], 0.3));
        let mut b = Parameter::new("b", Tensor::<f32>::full(&[5], 0.3));
        for step in 0..10 {
            let g = (step as f32 * 0.7).sin();
            a.grad.fill(g);
            b.grad.fill(g);
            adam_step(&mut a, &AdamConfig::default());
            adam_step(&mut b, &AdamConfig::default());
        }
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn schedule_drops() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0), 3e-4);
        assert_eq!(s.at(6999), 3e-4);
        assert!((s.at(7000) - 3e-5).abs() < 1e-18);
        assert!((s.at(14000) - 3e-6).abs() < 1e-18);
    }
}
