use crate::error::Result;
use crate::motion::MotionGrid;
use crate::nn::{smooth_l1_vec2, weighted_bce_with_logits, Real, Tensor};

use super::ModelConfig;

fn check_shape<F: Real>(t: &Tensor<F>, channels: usize, gt: &MotionGrid, what: &str) -> Result<()> {
    t.ensure_shape(&[channels, gt.ny(), gt.nx()], what)
}

/// Mean component-summed smooth L1 over velocity-known cells, with its
/// gradient. Zero, with zero gradient, when no cell is known.
pub fn velocity_loss<F: Real>(velocity: &Tensor<F>, gt: &MotionGrid) -> Result<(f64, Tensor<F>)> {
    check_shape(velocity, 2, gt, "predicted velocity")?;
    let n = gt.num_cells();
    let known: Vec<usize> = (0..n).filter(|&c| gt.is_known(c)).collect();
    let mut grad = Tensor::zeros(velocity.shape());
    if known.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / known.len() as f64;
    let v = velocity.data();
    let mut total = 0.0;
    for &c in &known {
        let target = gt.velocity_at(c);
        let (l, g) = smooth_l1_vec2([v[c].as_f64(), v[n + c].as_f64()], target);
        total += l;
        grad.data_mut()[c] = F::lit(g[0] * scale);
        grad.data_mut()[n + c] = F::lit(g[1] * scale);
    }
    Ok((total * scale, grad))
}

/// Mean class-weighted binary cross-entropy on logits, with its gradient.
///
/// Averages over every cell, or over velocity-known cells when
/// `occupied_only` is set.
pub fn seg_loss<F: Real>(
    logits: &Tensor<F>,
    gt: &MotionGrid,
    beta: f64,
    occupied_only: bool,
) -> Result<(f64, Tensor<F>)> {
    check_shape(logits, 1, gt, "segmentation logits")?;
    let cells: Vec<usize> = (0..gt.num_cells())
        .filter(|&c| !occupied_only || gt.is_known(c))
        .collect();
    let mut grad = Tensor::zeros(logits.shape());
    if cells.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / cells.len() as f64;
    let mut total = 0.0;
    for &c in &cells {
        let (l, g) = weighted_bce_with_logits(logits.data()[c].as_f64(), gt.dynamic_at(c), beta);
        total += l;
        grad.data_mut()[c] = F::lit(g * scale);
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone)]
pub struct LossBreakdown<F> {
    pub velocity: f64,
    pub seg: f64,
    pub total: f64,
    pub grad_velocity: Tensor<F>,
    pub grad_logits: Tensor<F>,
}

/// `L = L_vel + alpha * L_seg` with gradients for both heads.
pub fn total_loss<F: Real>(
    velocity: &Tensor<F>,
    logits: &Tensor<F>,
    gt: &MotionGrid,
    cfg: &ModelConfig,
) -> Result<LossBreakdown<F>> {
    let (lv, gv) = velocity_loss(velocity, gt)?;
    let (ls, mut gs) = seg_loss(logits, gt, cfg.beta, cfg.seg_occupied_only)?;
    gs.scale(F::lit(cfg.alpha));
    Ok(LossBreakdown {
        velocity: lv,
        seg: ls,
        total: lv + cfg.alpha * ls,
        grad_velocity: gv,
        grad_logits: gs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::nn::grad_check::{check_gradient, GradCheck};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(0.0, 0.0, 0.0, 0.2, 0.4, nx, ny, 1).unwrap()
    }

    fn random_truth(g: &GridSpec, rng: &mut ChaCha8Rng) -> MotionGrid {
        let mut gt = MotionGrid::empty_truth(g);
        for c in 0..g.num_cells() {
            if rng.random::<f64>() < 0.5 {
                gt.known.as_mut().unwrap().data_mut()[c] = 1.0;
                let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                gt.set_velocity(c, v);
                gt.dynamic.data_mut()[c] = if v[0].hypot(v[1]) > 0.8 { 1.0 } else { 0.0 };
            }
        }
        gt
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn velocity_loss_examples() {
        let g = grid(1, 1);
        let mut gt = MotionGrid::empty_truth(&g);
        gt.known.as_mut().unwrap().fill(1.0);
        gt.set_velocity(0, [1.0, -1.0]);
        let exact = Tensor::from_vec(&[2, 1, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(velocity_loss(&exact, &gt).unwrap().0, 0.0);
        let off = Tensor::from_vec(&[2, 1, 1], vec![1.5, -1.0]).unwrap();
        assert_eq!(velocity_loss(&off, &gt).unwrap().0, 0.125);

        let none = MotionGrid::empty_truth(&g);
        let (l, grad) = velocity_loss(&off, &none).unwrap();
        assert_eq!(l, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_cells_never_matter() {
        let g = grid(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let gt = random_truth(&g, &mut rng);
            let v = random_tensor(&[2, 5, 6], &mut rng);
            let (l0, grad) = velocity_loss(&v, &gt).unwrap();
            for c in (0..g.num_cells()).filter(|&c| !gt.is_known(c)) {
                assert_eq!(grad.data()[c], 0.0);
                assert_eq!(grad.data()[30 + c], 0.0);
                let mut w = v.clone();
                w.data_mut()[c] += rng.random_range(-10.0..10.0);
                w.data_mut()[30 + c] -= 1.0;
                assert_eq!(velocity_loss(&w, &gt).unwrap().0, l0);
            }
        }
    }

    #[test]
    fn seg_loss_examples() {
        let one = grid(1, 1);
        let mut gt = MotionGrid::empty_truth(&one);
        gt.dynamic.data_mut()[0] = 1.0;
        let zero = Tensor::<f64>::zeros(&[1, 1, 1]);
        let (l, _) = seg_loss(&zero, &gt, 100.0, false).unwrap();
        assert!((l - 69.3147).abs() < 1e-3);
        let confident = Tensor::from_vec(&[1, 1, 1], vec![40.0]).unwrap();
        assert!(seg_loss(&confident, &gt, 100.0, false).unwrap().0 < 1e-15);

        let g = grid(4, 3);
        let all_static = MotionGrid::empty_truth(&g);
        let (l, _) =
            seg_loss(&Tensor::<f64>::zeros(&[1, 3, 4]), &all_static, 100.0, false).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn occupied_only_averages_over_known_cells() {
        let g = grid(2, 1);
        let mut gt = MotionGrid::empty_truth(&g);
        gt.known.as_mut().unwrap().data_mut()[0] = 1.0;
        let z = Tensor::<f64>::zeros(&[1, 1, 2]);
        let (all, _) = seg_loss(&z, &gt, 100.0, false).unwrap();
        let (occ, grad) = seg_loss(&z, &gt, 100.0, true).unwrap();
        assert!((all - 2f64.ln()).abs() < 1e-12);
        assert!((occ - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad.data()[1], 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let g = grid(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_truth(&g, &mut rng);
        let v = random_tensor(&[2, 4, 5], &mut rng);
        let z = random_tensor(&[1, 4, 5], &mut rng);
        let cfg = ModelConfig::default();
        let t = total_loss(&v, &z, &gt, &cfg).unwrap();
        let (lv, gv) = velocity_loss(&v, &gt).unwrap();
        let (ls, gs) = seg_loss(&z, &gt, cfg.beta, false).unwrap();
        assert!((t.total - (lv + 5.0 * ls)).abs() < 1e-12);
        assert_eq!(t.grad_velocity, gv);
        for (a, b) in t.grad_logits.data().iter().zip(gs.data()) {
            assert!((a - 5.0 * b).abs() < 1e-12);
        }
        // alpha enters linearly
        let cfg2 = ModelConfig { alpha: 2.0, ..cfg };
        let t2 = total_loss(&v, &z, &gt, &cfg2).unwrap();
        assert!(((t.total - t2.total) - 3.0 * ls).abs() < 1e-9);
    }

    #[test]
    fn loss_gradients_match_differences() {
        let g = grid(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_truth(&g, &mut rng);
        let v = random_tensor(&[2, 3, 4], &mut rng);
        let z = random_tensor(&[1, 3, 4], &mut rng);
        let cfg = ModelConfig::default();
        let t = total_loss(&v, &z, &gt, &cfg).unwrap();
        let gc = GradCheck::default().with_slope_kink(1e-4);
        let r = check_gradient(&gc, v.data(), t.grad_velocity.data(), |x| {
            let vv = Tensor::from_vec(&[2, 3, 4], x.to_vec()).unwrap();
            total_loss(&vv, &z, &gt, &cfg).unwrap().total
        });
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        let r = check_gradient(&gc, z.data(), t.grad_logits.data(), |x| {
            let zz = Tensor::from_vec(&[1, 3, 4], x.to_vec()).unwrap();
            total_loss(&v, &zz, &gt, &cfg).unwrap().total
        });
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
