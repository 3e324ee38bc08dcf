//! Point cloud -> BEV feature tensor: voxel grouping, point augmentation,
//! voxel feature encoding, vertical column stacking and convolutional mixing.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3};
use crate::nn::{
    conv2d, conv2d_backward, linear, linear_backward, ConvOpts, Parameter, Real, Tensor,
};

/// Points retained per voxel.
pub const VOXEL_POINT_CAP: usize = 32;

/// Width of an augmented point feature.
pub const POINT_FEATURES: usize = 6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Per-point intensity, same length as `points`.
    pub intensity: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        let intensity = vec![0.0; points.len()];
        Self { points, intensity }
    }

    pub fn with_intensity(points: Vec<Point3>, intensity: Vec<f64>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        Ok(Self { points, intensity })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `(x, y, z, x - x_c, y - y_c, z - z_c)`.
pub fn augment_point(p: &Point3, center: &Point3) -> [f64; POINT_FEATURES] {
    [
        p.x,
        p.y,
        p.z,
        p.x - center.x,
        p.y - center.y,
        p.z - center.z,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Voxel {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
    /// Offset of the voxel's first point in [`VoxelBatch::features`].
    pub start: usize,
    pub count: usize,
}

/// Non-empty voxels with their augmented point features, ordered by
/// `(iy, ix, iz)` so that vertical columns are contiguous.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VoxelBatch {
    pub voxels: Vec<Voxel>,
    pub features: Vec<[f64; POINT_FEATURES]>,
    /// In-bounds points before the per-voxel cap.
    pub in_bounds: usize,
}

impl VoxelBatch {
    pub fn num_points(&self) -> usize {
        self.features.len()
    }

    /// Voxel index of every retained point.
    pub fn point_voxel(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.features.len());
        for (v, vox) in self.voxels.iter().enumerate() {
            out.extend(std::iter::repeat_n(v, vox.count));
        }
        out
    }
}

/// Groups in-bounds points by voxel. Within a voxel points are ordered
/// lexicographically by coordinate before the cap is applied, which makes
/// the result independent of input order.
pub fn voxelize(cloud: &PointCloud, g: &GridSpec) -> VoxelBatch {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<Point3>> = BTreeMap::new();
    let mut in_bounds = 0;
    for p in &cloud.points {
        if let Some((ix, iy, iz)) = g.voxel_of(p) {
            groups.entry((iy, ix, iz)).or_default().push(*p);
            in_bounds += 1;
        }
    }
    let mut batch = VoxelBatch {
        in_bounds,
        ..Default::default()
    };
    for ((iy, ix, iz), mut pts) in groups {
        pts.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        pts.truncate(VOXEL_POINT_CAP);
        let center = g.voxel_center(ix, iy, iz);
        batch.voxels.push(Voxel {
            ix,
            iy,
            iz,
            start: batch.features.len(),
            count: pts.len(),
        });
        batch
            .features
            .extend(pts.iter().map(|p| augment_point(p, &center)));
    }
    batch
}

/// Layer widths of the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    /// Pointwise widths of the VFE layers; the last one is the per-voxel width.
    pub vfe: Vec<usize>,
    /// Channels of the BEV feature tensor and of the recurrent state.
    pub features: usize,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self {
            vfe: vec![16, 32],
            features: 32,
        }
    }
}

impl ChannelPlan {
    pub fn voxel_width(&self) -> usize {
        *self.vfe.last().expect("at least one VFE layer")
    }

    /// Input width of VFE layer `l`.
    fn vfe_input(&self, l: usize) -> usize {
        if l == 0 {
            POINT_FEATURES
        } else {
            2 * self.vfe[l - 1]
        }
    }
}

/// Weights of one VFE layer as borrowed tensors.
pub struct VfeLayer<'a, F> {
    pub weight: &'a Tensor<F>,
    pub bias: &'a Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct VfeCache<F> {
    inputs: Vec<Tensor<F>>,
    activations: Vec<Tensor<F>>,
    /// Per layer, `[voxel][feature]` index of the winning point.
    argmax: Vec<Vec<usize>>,
    point_voxel: Vec<usize>,
    num_voxels: usize,
}

#[derive(Debug, Clone)]
pub struct VfeGrads<F> {
    pub weights: Vec<(Tensor<F>, Tensor<F>)>,
    /// Gradient with respect to the augmented point features.
    pub input: Tensor<F>,
}

fn max_pool<F: Real>(act: &Tensor<F>, voxels: &[Voxel], width: usize) -> (Vec<F>, Vec<usize>) {
    let mut pooled = vec![F::zero(); voxels.len() * width];
    let mut arg = vec![0usize; voxels.len() * width];
    let a = act.data();
    for (v, vox) in voxels.iter().enumerate() {
        for f in 0..width {
            let mut best = vox.start;
            let mut best_val = a[vox.start * width + f];
            for p in vox.start + 1..vox.start + vox.count {
                // strict comparison keeps the lowest index on ties
                if a[p * width + f] > best_val {
                    best_val = a[p * width + f];
                    best = p;
                }
            }
            pooled[v * width + f] = best_val;
            arg[v * width + f] = best;
        }
    }
    (pooled, arg)
}

/// Stacked VFE layers followed by a voxel-wise max-pool.
///
/// Every layer is a pointwise linear map with ReLU and a voxel max-pool; all
/// but the last concatenate the pooled vector back onto each point.
pub fn vfe_forward<F: Real>(
    batch: &VoxelBatch,
    layers: &[VfeLayer<'_, F>],
) -> Result<(Tensor<F>, VfeCache<F>)> {
    if layers.is_empty() {
        return Err(Error::ShapeMismatch("no VFE layers".into()));
    }
    let n = batch.num_points();
    let nv = batch.voxels.len();
    let point_voxel = batch.point_voxel();
    let mut x = Tensor::from_vec(
        &[n, POINT_FEATURES],
        batch
            .features
            .iter()
            .flat_map(|f| f.iter().map(|&v| F::lit(v)))
            .collect(),
    )?;
    let mut cache = VfeCache {
        inputs: Vec::new(),
        activations: Vec::new(),
        argmax: Vec::new(),
        point_voxel,
        num_voxels: nv,
    };
    let mut out = Tensor::zeros(&[nv, 0]);
    for (l, layer) in layers.iter().enumerate() {
        let width = layer.weight.dims2()?.0;
        let mut act = linear(&x, layer.weight, Some(layer.bias))?;
        act.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > F::zero() { *v } else { F::zero() });
        let (pooled, arg) = max_pool(&act, &batch.voxels, width);
        let last = l + 1 == layers.len();
        let next = if last {
            out = Tensor::from_vec(&[nv, width], pooled)?;
            None
        } else {
            let mut cat = Vec::with_capacity(n * 2 * width);
            for p in 0..n {
                let v = cache.point_voxel[p];
                cat.extend_from_slice(&act.data()[p * width..(p + 1) * width]);
                cat.extend_from_slice(&pooled[v * width..(v + 1) * width]);
            }
            Some(Tensor::from_vec(&[n, 2 * width], cat)?)
        };
        cache.inputs.push(x);
        cache.activations.push(act);
        cache.argmax.push(arg);
        match next {
            Some(t) => x = t,
            None => break,
        }
    }
    Ok((out, cache))
}

pub fn vfe_backward<F: Real>(
    grad_out: &Tensor<F>,
    cache: &VfeCache<F>,
    layers: &[VfeLayer<'_, F>],
) -> Result<VfeGrads<F>> {
    let nl = cache.activations.len();
    if nl != layers.len() {
        return Err(Error::ShapeMismatch("VFE cache/layer count differ".into()));
    }
    let nv = cache.num_voxels;
    let last_width = cache.activations[nl - 1].shape()[1];
    grad_out.ensure_shape(&[nv, last_width], "vfe grad_out")?;

    let mut weights = vec![None; nl];
    let mut grad_pooled = grad_out.data().to_vec();
    // gradient flowing into the pointwise part of the current layer output
    let mut grad_point: Option<Vec<F>> = None;
    let mut input_grad = Tensor::zeros(&[0]);
    for l in (0..nl).rev() {
        let act = &cache.activations[l];
        let (n, width) = act.dims2()?;
        let mut d_act = grad_point
            .take()
            .unwrap_or_else(|| vec![F::zero(); n * width]);
        for (slot, &p) in cache.argmax[l].iter().enumerate() {
            let f = slot % width;
            d_act[p * width + f] += grad_pooled[slot];
        }
        for (g, &a) in d_act.iter_mut().zip(act.data()) {
            if a <= F::zero() {
                *g = F::zero();
            }
        }
        let d_act = Tensor::from_vec(&[n, width], d_act)?;
        let g = linear_backward(&cache.inputs[l], layers[l].weight, &d_act)?;
        weights[l] = Some((g.weight, g.bias));
        if l > 0 {
            // split the concatenated input gradient into point and pooled halves
            let prev = cache.activations[l - 1].shape()[1];
            let mut dp = vec![F::zero(); n * prev];
            let mut dpool = vec![F::zero(); nv * prev];
            for p in 0..n {
                let row = &g.input.data()[p * 2 * prev..(p + 1) * 2 * prev];
                dp[p * prev..(p + 1) * prev].copy_from_slice(&row[..prev]);
                let v = cache.point_voxel[p];
                for f in 0..prev {
                    dpool[v * prev + f] += row[prev + f];
                }
            }
            grad_point = Some(dp);
            grad_pooled = dpool;
        } else {
            input_grad = g.input;
        }
    }
    Ok(VfeGrads {
        weights: weights.into_iter().map(|w| w.expect("filled")).collect(),
        input: input_grad,
    })
}

/// Learned parameters of the cloud encoder.
#[derive(Debug, Clone)]
pub struct VoxelEncoder<F> {
    pub plan: ChannelPlan,
    pub grid: GridSpec,
    pub vfe: Vec<(Parameter<F>, Parameter<F>)>,
    /// 1x1 squash over stacked columns: `[features, nz * voxel_width]`.
    pub squash_w: Parameter<F>,
    pub squash_b: Parameter<F>,
    /// Bias-free 3x3 convolutions.
    pub conv: [Parameter<F>; 2],
}

#[derive(Debug, Clone)]
pub struct EncodeCache<F> {
    vfe: VfeCache<F>,
    /// Flat cell index of each occupied column, ascending.
    columns: Vec<usize>,
    /// `(column row, iz)` of each voxel.
    voxel_slot: Vec<(usize, usize)>,
    stacked: Tensor<F>,
    squashed: Tensor<F>,
    x0: Tensor<F>,
    x1: Tensor<F>,
    out: Tensor<F>,
}

impl<F: Real> VoxelEncoder<F> {
    pub fn new(plan: ChannelPlan, grid: GridSpec, rng: &mut impl Rng) -> Self {
        let mut vfe = Vec::new();
        for (l, &w) in plan.vfe.iter().enumerate() {
            let d_in = plan.vfe_input(l);
            vfe.push((
                Parameter::glorot(format!("encoder.vfe{l}.weight"), &[w, d_in], d_in, w, rng),
                Parameter::zeros(format!("encoder.vfe{l}.bias"), &[w]),
            ));
        }
        let stacked = grid.nz * plan.voxel_width();
        let f = plan.features;
        let squash_w = Parameter::glorot("encoder.squash.weight", &[f, stacked], stacked, f, rng);
        let squash_b = Parameter::zeros("encoder.squash.bias", &[f]);
        let conv = [0, 1].map(|i| {
            Parameter::glorot(
                format!("encoder.conv{i}.weight"),
                &[f, f, 3, 3],
                9 * f,
                9 * f,
                rng,
            )
        });
        Self {
            plan,
            grid,
            vfe,
            squash_w,
            squash_b,
            conv,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out: Vec<&Parameter<F>> = Vec::new();
        for (w, b) in &self.vfe {
            out.push(w);
            out.push(b);
        }
        out.push(&self.squash_w);
        out.push(&self.squash_b);
        out.extend(self.conv.iter());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = Vec::new();
        for (w, b) in &mut self.vfe {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.squash_w);
        out.push(&mut self.squash_b);
        out.extend(self.conv.iter_mut());
        out
    }

    fn vfe_layers(&self) -> Vec<VfeLayer<'_, F>> {
        self.vfe
            .iter()
            .map(|(w, b)| VfeLayer {
                weight: &w.value,
                bias: &b.value,
            })
            .collect()
    }

    /// Per-voxel vectors stacked into `[n_columns, nz * width]` rows.
    fn stack_columns(
        &self,
        batch: &VoxelBatch,
        voxel_features: &Tensor<F>,
    ) -> Result<(Vec<usize>, Vec<(usize, usize)>, Tensor<F>)> {
        let g = &self.grid;
        let width = self.plan.voxel_width();
        let row_len = g.nz * width;
        let mut columns: Vec<usize> = Vec::new();
        let mut slots = Vec::with_capacity(batch.voxels.len());
        for vox in &batch.voxels {
            let cell = g.cell_index(vox.ix, vox.iy);
            if columns.last() != Some(&cell) {
                columns.push(cell);
            }
            slots.push((columns.len() - 1, vox.iz));
        }
        let mut stacked = vec![F::zero(); columns.len() * row_len];
        for (v, &(row, iz)) in slots.iter().enumerate() {
            let dst = &mut stacked[row * row_len + iz * width..row * row_len + (iz + 1) * width];
            dst.copy_from_slice(&voxel_features.data()[v * width..(v + 1) * width]);
        }
        let stacked = Tensor::from_vec(&[columns.len(), row_len], stacked)?;
        Ok((columns, slots, stacked))
    }

    /// Encodes one cloud into a `[features, ny, nx]` tensor.
    pub fn encode(&self, cloud: &PointCloud) -> Result<(Tensor<F>, EncodeCache<F>)> {
        let g = &self.grid;
        let f = self.plan.features;
        let batch = voxelize(cloud, g);
        let (voxel_features, vfe_cache) = vfe_forward(&batch, &self.vfe_layers())?;
        let (columns, voxel_slot, stacked) = self.stack_columns(&batch, &voxel_features)?;

        let mut squashed = linear(&stacked, &self.squash_w.value, Some(&self.squash_b.value))?;
        squashed
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > F::zero() { *v } else { F::zero() });
        let plane = g.num_cells();
        let mut x0 = Tensor::zeros(&[f, g.ny, g.nx]);
        for (row, &cell) in columns.iter().enumerate() {
            for c in 0..f {
                x0.data_mut()[c * plane + cell] = squashed.data()[row * f + c];
            }
        }
        let x1 = relu_owned(conv2d(&x0, &self.conv[0].value, None, ConvOpts::same(3))?);
        let out = relu_owned(conv2d(&x1, &self.conv[1].value, None, ConvOpts::same(3))?);
        Ok((
            out.clone(),
            EncodeCache {
                vfe: vfe_cache,
                columns,
                voxel_slot,
                stacked,
                squashed,
                x0,
                x1,
                out,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d encode(cloud)`.
    pub fn backward(&mut self, grad: &Tensor<F>, cache: &EncodeCache<F>) -> Result<()> {
        let g = self.grid;
        let f = self.plan.features;
        let width = self.plan.voxel_width();
        let mut d = grad.clone();
        crate::nn::activation::relu_backward_inplace(d.data_mut(), cache.out.data());
        let c1 = conv2d_backward(&cache.x1, &self.conv[1].value, &d, ConvOpts::same(3))?;
        self.conv[1].grad.add_assign(&c1.weight)?;
        let mut d1 = c1.input;
        crate::nn::activation::relu_backward_inplace(d1.data_mut(), cache.x1.data());
        let c0 = conv2d_backward(&cache.x0, &self.conv[0].value, &d1, ConvOpts::same(3))?;
        self.conv[0].grad.add_assign(&c0.weight)?;

        if cache.columns.is_empty() {
            return Ok(());
        }
        let plane = g.num_cells();
        let mut dz = vec![F::zero(); cache.columns.len() * f];
        for (row, &cell) in cache.columns.iter().enumerate() {
            for c in 0..f {
                if cache.squashed.data()[row * f + c] > F::zero() {
                    dz[row * f + c] = c0.input.data()[c * plane + cell];
                }
            }
        }
        let dz = Tensor::from_vec(&[cache.columns.len(), f], dz)?;
        let lg = linear_backward(&cache.stacked, &self.squash_w.value, &dz)?;
        self.squash_w.grad.add_assign(&lg.weight)?;
        self.squash_b.grad.add_assign(&lg.bias)?;

        let row_len = g.nz * width;
        let mut dvox = vec![F::zero(); cache.voxel_slot.len() * width];
        for (v, &(row, iz)) in cache.voxel_slot.iter().enumerate() {
            let src =
                &lg.input.data()[row * row_len + iz * width..row * row_len + (iz + 1) * width];
            dvox[v * width..(v + 1) * width].copy_from_slice(src);
        }
        let dvox = Tensor::from_vec(&[cache.voxel_slot.len(), width], dvox)?;
        let vg = vfe_backward(&dvox, &cache.vfe, &self.vfe_layers())?;
        for ((w, b), (dw, db)) in self.vfe.iter_mut().zip(vg.weights) {
            w.grad.add_assign(&dw)?;
            b.grad.add_assign(&db)?;
        }
        Ok(())
    }
}

fn relu_owned<F: Real>(mut t: Tensor<F>) -> Tensor<F> {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > F::zero() { *v } else { F::zero() });
    t
}
