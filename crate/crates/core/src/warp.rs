//! Differentiable planar warp of BEV feature tensors by a rigid motion.
//!
//! A [`WarpPlan`] stores, for every output cell, the bilinear sources in the
//! input grid. Forward gathers with those weights and backward scatters with
//! the same weights, so the two are exact adjoints.

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Transform2};
use crate::nn::{Real, Tensor};

/// Fractional indices this close to an integer are snapped onto it, so that
/// whole-cell motions yield single-source plans.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan {
    nx: usize,
    ny: usize,
    /// `offsets[cell]..offsets[cell + 1]` indexes `sources`.
    offsets: Vec<usize>,
    sources: Vec<(usize, f64)>,
    out_of_bounds: Vec<bool>,
}

impl WarpPlan {
    pub fn identity(g: &GridSpec) -> Self {
        let n = g.num_cells();
        Self {
            nx: g.nx,
            ny: g.ny,
            offsets: (0..=n).collect(),
            sources: (0..n).map(|i| (i, 1.0)).collect(),
            out_of_bounds: vec![false; n],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// `(source cell, weight)` pairs of an output cell; zero weights omitted.
    pub fn sources(&self, cell: usize) -> &[(usize, f64)] {
        &self.sources[self.offsets[cell]..self.offsets[cell + 1]]
    }

    /// True if some bilinear neighbor of the cell fell outside the grid.
    pub fn is_out_of_bounds(&self, cell: usize) -> bool {
        self.out_of_bounds[cell]
    }

    pub fn weight_sum(&self, cell: usize) -> f64 {
        self.sources(cell).iter().map(|s| s.1).sum()
    }

    fn check<F: Real>(&self, t: &Tensor<F>, what: &str) -> Result<usize> {
        match *t.shape() {
            [c, ny, nx] if ny == self.ny && nx == self.nx => Ok(c),
            _ => Err(Error::ShapeMismatch(format!(
                "{what}: tensor {:?} does not fit a {}x{} plan",
                t.shape(),
                self.ny,
                self.nx
            ))),
        }
    }
}

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

/// Plan that moves content by `t`: the output at metric location `c` samples
/// the input at `t⁻¹(c)`. Sources outside the grid contribute zero.
pub fn build_plan(t: &Transform2, g: &GridSpec) -> WarpPlan {
    if t.is_identity() {
        return WarpPlan::identity(g);
    }
    let inv = t.inverse();
    let n = g.num_cells();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut sources = Vec::with_capacity(4 * n);
    let mut out_of_bounds = Vec::with_capacity(n);
    offsets.push(0);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let (cx, cy) = g.cell_center(ix, iy);
            let (sx, sy) = inv.apply(cx, cy);
            // fractional index with cell centers at integers
            let u = snap((sx - g.x_min) / g.cell_size_xy - 0.5);
            let v = snap((sy - g.y_min) / g.cell_size_xy - 0.5);
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let mut oob = false;
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let w = wx * wy;
                    if w == 0.0 {
                        continue;
                    }
                    let (sx, sy) = (x0 + dx, y0 + dy);
                    if sx < 0.0 || sy < 0.0 || sx >= g.nx as f64 || sy >= g.ny as f64 {
                        oob = true;
                        continue;
                    }
                    sources.push((sy as usize * g.nx + sx as usize, w));
                }
            }
            out_of_bounds.push(oob);
            offsets.push(sources.len());
        }
    }
    WarpPlan {
        nx: g.nx,
        ny: g.ny,
        offsets,
        sources,
        out_of_bounds,
    }
}

/// `out[c, cell] = Σ w · h[c, src]`, each channel independently.
pub fn warp_forward<F: Real>(h: &Tensor<F>, plan: &WarpPlan) -> Result<Tensor<F>> {
    let channels = plan.check(h, "warp input")?;
    let n = plan.num_cells();
    let mut out = Tensor::zeros(h.shape());
    let weights: Vec<F> = plan.sources.iter().map(|s| F::lit(s.1)).collect();
    for c in 0..channels {
        let src = &h.data()[c * n..(c + 1) * n];
        let dst = &mut out.data_mut()[c * n..(c + 1) * n];
        for (cell, d) in dst.iter_mut().enumerate() {
            let mut acc = F::zero();
            for k in plan.offsets[cell]..plan.offsets[cell + 1] {
                acc += weights[k] * src[plan.sources[k].0];
            }
            *d = acc;
        }
    }
    Ok(out)
}

/// Adjoint of [`warp_forward`]: scatters `grad_out` back along the plan.
pub fn warp_backward<F: Real>(grad_out: &Tensor<F>, plan: &WarpPlan) -> Result<Tensor<F>> {
    let channels = plan.check(grad_out, "warp gradient")?;
    let n = plan.num_cells();
    let mut grad = Tensor::zeros(grad_out.shape());
    let weights: Vec<F> = plan.sources.iter().map(|s| F::lit(s.1)).collect();
    for c in 0..channels {
        let go = &grad_out.data()[c * n..(c + 1) * n];
        let gi = &mut grad.data_mut()[c * n..(c + 1) * n];
        for (cell, &g) in go.iter().enumerate() {
            for k in plan.offsets[cell]..plan.offsets[cell + 1] {
                gi[plan.sources[k].0] += weights[k] * g;
            }
        }
    }
    Ok(grad)
}
