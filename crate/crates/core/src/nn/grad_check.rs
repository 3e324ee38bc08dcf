//! Central finite-difference verification of hand-written backward passes.

/// Settings for [`check_gradient`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that gradients near zero
    /// are compared absolutely.
    pub abs_floor: f64,
    /// Exclude coordinates whose input value lies within this distance of a
    /// kink at zero (elementwise ReLU-style ops).
    pub input_kink: Option<f64>,
    /// Exclude coordinates whose one-sided slopes disagree by more than this
    /// relative amount (a kink crossed inside the stencil).
    pub slope_kink: Option<f64>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-6,
            abs_floor: 1e-6,
            input_kink: None,
            slope_kink: None,
        }
    }
}

impl GradCheck {
    pub fn with_input_kink(mut self, radius: f64) -> Self {
        self.input_kink = Some(radius);
        self
    }

    pub fn with_slope_kink(mut self, tol: f64) -> Self {
        self.slope_kink = Some(tol);
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped as non-differentiable.
    pub excluded: Vec<usize>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport, offset: usize) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index.map(|i| i + offset);
        }
        self.checked += other.checked;
        self.excluded
            .extend(other.excluded.into_iter().map(|i| i + offset));
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at every coordinate.
pub fn check_gradient(
    cfg: &GradCheck,
    x: &[f64],
    analytic: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> GradCheckReport {
    let all: Vec<usize> = (0..x.len()).collect();
    check_gradient_at(cfg, x, analytic, &all, f)
}

/// Like [`check_gradient`], restricted to the listed coordinates.
pub fn check_gradient_at(
    cfg: &GradCheck,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    f: impl Fn(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut report = GradCheckReport::default();
    let mut probe = x.to_vec();
    let f0 = if cfg.slope_kink.is_some() { f(x) } else { 0.0 };
    for &i in indices {
        if let Some(r) = cfg.input_kink {
            if x[i].abs() < r {
                report.excluded.push(i);
                continue;
            }
        }
        let h = cfg.step;
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if let Some(tol) = cfg.slope_kink {
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if rel_err(fwd, bwd, cfg.abs_floor) > tol {
                report.excluded.push(i);
                continue;
            }
        }
        let numeric = (fp - fm) / (2.0 * h);
        let e = rel_err(numeric, analytic[i], cfg.abs_floor);
        report.checked += 1;
        if report.worst_index.is_none() || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Checks an op that returns its value together with its own gradient.
pub fn grad_check(
    cfg: &GradCheck,
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
) -> GradCheckReport {
    let (_, analytic) = f(x);
    check_gradient(cfg, x, &analytic, |v| f(v).0)
}
