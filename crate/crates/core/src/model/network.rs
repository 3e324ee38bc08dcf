use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Frame;
use crate::error::{Error, Result};
use crate::geometry::{project_to_plane, relative_transform, transform_cloud};
use crate::motion::MotionGrid;
use crate::nn::activation::relu_backward_inplace;
use crate::nn::{
    concat_channels, conv2d, conv2d_backward, sigmoid, split_channels, Checkpoint, ConvOpts,
    NamedTensor, Parameter, Real, Tensor,
};
use crate::voxel::{EncodeCache, PointCloud, VoxelEncoder};
use crate::warp::{build_plan, warp_backward, warp_forward, WarpPlan};

use super::{ModelConfig, Variant};

const SAME: ConvOpts = ConvOpts { stride: 1, pad: 1 };

fn conv3x3<F: Real>(x: &Tensor<F>, w: &Parameter<F>) -> Result<Tensor<F>> {
    conv2d(x, &w.value, None, SAME)
}

fn relu_in_place<F: Real>(t: &mut Tensor<F>) {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > F::zero() { *v } else { F::zero() });
}

/// Backpropagates through `out = relu(conv(input, w))`, accumulating the
/// weight gradient and returning the input gradient.
fn conv_relu_backward<F: Real>(
    w: &mut Parameter<F>,
    input: &Tensor<F>,
    out: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let mut d = grad_out.clone();
    relu_backward_inplace(d.data_mut(), out.data());
    let g = conv2d_backward(input, &w.value, &d, SAME)?;
    w.grad.add_assign(&g.weight)?;
    Ok(g.input)
}

/// Saved activations of one recurrent step.
#[derive(Debug, Clone)]
pub struct RnnStep<F> {
    pub plan: Option<WarpPlan>,
    /// Frame features concatenated with the (warped) previous state.
    pub input: Tensor<F>,
    pub mid: Tensor<F>,
    pub state: Tensor<F>,
}

/// One recurrent step: warp the previous state into the current frame (when
/// a plan is given), concatenate with the frame features and apply two
/// ReLU convolutions.
pub fn rnn_cell<F: Real>(
    x: &Tensor<F>,
    h_prev: &Tensor<F>,
    plan: Option<WarpPlan>,
    weights: &[Parameter<F>; 2],
) -> Result<RnnStep<F>> {
    let h_hat = match &plan {
        Some(p) => warp_forward(h_prev, p)?,
        None => h_prev.clone(),
    };
    let input = concat_channels(&[x, &h_hat])?;
    let mut mid = conv3x3(&input, &weights[0])?;
    relu_in_place(&mut mid);
    let mut state = conv3x3(&mid, &weights[1])?;
    relu_in_place(&mut state);
    Ok(RnnStep {
        plan,
        input,
        mid,
        state,
    })
}

/// Returns `(d x, d h_prev)` and accumulates weight gradients.
fn rnn_cell_backward<F: Real>(
    step: &RnnStep<F>,
    grad_state: &Tensor<F>,
    weights: &mut [Parameter<F>; 2],
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d_mid = conv_relu_backward(&mut weights[1], &step.mid, &step.state, grad_state)?;
    let d_input = conv_relu_backward(&mut weights[0], &step.input, &step.mid, &d_mid)?;
    let f = step.input.shape()[0] / 2;
    let mut parts = split_channels(&d_input, &[f, f])?;
    let d_hat = parts.pop().expect("two parts");
    let dx = parts.pop().expect("two parts");
    let dh = match &step.plan {
        Some(p) => warp_backward(&d_hat, p)?,
        None => d_hat,
    };
    Ok((dx, dh))
}

#[derive(Debug, Clone)]
enum Aggregation<F> {
    Recurrent(Vec<RnnStep<F>>),
    Stacked {
        plans: Vec<Option<WarpPlan>>,
        input: Tensor<F>,
        mid: Tensor<F>,
        out: Tensor<F>,
    },
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    encodings: Vec<EncodeCache<F>>,
    aggregation: Aggregation<F>,
    /// Aggregated features followed by the four backbone activations.
    backbone: [Tensor<F>; 5],
}

/// Raw network outputs for the last frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F> {
    /// `[2, ny, nx]` velocity in m/s, last-frame coordinates.
    pub velocity: Tensor<F>,
    /// `[1, ny, nx]` dynamic logits.
    pub logits: Tensor<F>,
}

impl<F: Real> Prediction<F> {
    pub fn probability(&self) -> Tensor<F> {
        sigmoid(&self.logits)
    }

    pub fn to_motion_grid(&self) -> Result<MotionGrid> {
        MotionGrid::prediction(self.velocity.cast(), self.probability().cast())
    }
}

/// Encoder, temporal aggregation, backbone and the two prediction heads.
#[derive(Debug, Clone)]
pub struct MotionNet<F> {
    pub config: ModelConfig,
    pub encoder: VoxelEncoder<F>,
    pub aggregate: [Parameter<F>; 2],
    /// Four 3x3 convolutions with a residual skip around the third.
    pub backbone: [Parameter<F>; 4],
    pub velocity_head: Parameter<F>,
    pub seg_head_w: Parameter<F>,
    pub seg_head_b: Parameter<F>,
}

impl<F: Real> MotionNet<F> {
    /// Initialises every parameter from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.channels.features;
        let encoder = VoxelEncoder::new(config.channels.clone(), config.grid, &mut rng);
        let agg_in = if config.variant.is_recurrent() {
            2 * f
        } else {
            config.seq_len * f
        };
        let conv = |name: String, c_out: usize, c_in: usize, rng: &mut ChaCha8Rng| {
            Parameter::glorot(name, &[c_out, c_in, 3, 3], 9 * c_in, 9 * c_out, rng)
        };
        let aggregate = [
            conv("aggregate.conv0.weight".into(), f, agg_in, &mut rng),
            conv("aggregate.conv1.weight".into(), f, f, &mut rng),
        ];
        let backbone =
            [0, 1, 2, 3].map(|i| conv(format!("backbone.conv{i}.weight"), f, f, &mut rng));
        let velocity_head = conv("head.velocity.weight".into(), 2, f, &mut rng);
        let seg_head_w = conv("head.seg.weight".into(), 1, f, &mut rng);
        let seg_head_b = Parameter::zeros("head.seg.bias", &[1]);
        Ok(Self {
            config,
            encoder,
            aggregate,
            backbone,
            velocity_head,
            seg_head_w,
            seg_head_b,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = self.encoder.parameters();
        out.extend(self.aggregate.iter());
        out.extend(self.backbone.iter());
        out.push(&self.velocity_head);
        out.push(&self.seg_head_w);
        out.push(&self.seg_head_b);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = self.encoder.parameters_mut();
        out.extend(self.aggregate.iter_mut());
        out.extend(self.backbone.iter_mut());
        out.push(&mut self.velocity_head);
        out.push(&mut self.seg_head_w);
        out.push(&mut self.seg_head_b);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut()
            .into_iter()
            .for_each(|p| p.zero_grad());
    }

    /// Frames actually consumed: all of them for recurrent variants, the
    /// last `seq_len` for stacked ones.
    fn used_frames<'a>(&self, frames: &'a [Frame]) -> Result<&'a [Frame]> {
        let need = if self.config.variant.is_recurrent() {
            2
        } else {
            self.config.seq_len
        };
        if frames.len() < need {
            return Err(Error::TooFewFrames {
                got: frames.len(),
                need,
            });
        }
        if self.config.variant.is_recurrent() {
            Ok(frames)
        } else {
            Ok(&frames[frames.len() - need..])
        }
    }

    fn check_output(&self, t: &Tensor<F>) -> Result<()> {
        let g = &self.config.grid;
        t.ensure_shape(
            &[self.config.channels.features, g.ny, g.nx],
            "encoder output",
        )
    }

    /// Predicts velocity and dynamic logits for the last frame.
    pub fn forward(&self, frames: &[Frame]) -> Result<(Prediction<F>, Trace<F>)> {
        let frames = self.used_frames(frames)?;
        let g = self.config.grid;
        let last = frames.len() - 1;
        let (h, encodings, aggregation) = match self.config.variant {
            Variant::RnnOdo | Variant::RnnNoOdo => {
                let odometry = self.config.variant == Variant::RnnOdo;
                if !odometry {
                    log::debug!("warp bypassed: recurrent state is not ego-compensated");
                }
                let f = self.config.channels.features;
                let mut h = Tensor::zeros(&[f, g.ny, g.nx]);
                let mut encodings = Vec::with_capacity(frames.len());
                let mut steps = Vec::with_capacity(frames.len());
                for (i, frame) in frames.iter().enumerate() {
                    let (x, cache) = self.encoder.encode(&frame.cloud)?;
                    self.check_output(&x)?;
                    let plan = if odometry && i > 0 {
                        let rel = relative_transform(&frames[i - 1].pose, &frame.pose);
                        Some(build_plan(&project_to_plane(&rel)?, &g))
                    } else {
                        None
                    };
                    let step = rnn_cell(&x, &h, plan, &self.aggregate)?;
                    h = step.state.clone();
                    encodings.push(cache);
                    steps.push(step);
                }
                (h, encodings, Aggregation::Recurrent(steps))
            }
            Variant::StackConv | Variant::StackConvPct => {
                let target = &frames[last].pose;
                let mut encodings = Vec::with_capacity(frames.len());
                let mut parts = Vec::with_capacity(frames.len());
                let mut plans = Vec::with_capacity(frames.len());
                for (i, frame) in frames.iter().enumerate() {
                    let rel = relative_transform(&frame.pose, target);
                    let (x, plan) = if self.config.variant == Variant::StackConvPct {
                        let cloud = if i == last {
                            frame.cloud.clone()
                        } else {
                            PointCloud {
                                points: transform_cloud(&frame.cloud.points, &rel),
                                intensity: frame.cloud.intensity.clone(),
                            }
                        };
                        let (x, cache) = self.encoder.encode(&cloud)?;
                        encodings.push(cache);
                        (x, None)
                    } else {
                        let (x, cache) = self.encoder.encode(&frame.cloud)?;
                        encodings.push(cache);
                        if i == last {
                            (x, None)
                        } else {
                            let plan = build_plan(&project_to_plane(&rel)?, &g);
                            (warp_forward(&x, &plan)?, Some(plan))
                        }
                    };
                    self.check_output(&x)?;
                    parts.push(x);
                    plans.push(plan);
                }
                let refs: Vec<&Tensor<F>> = parts.iter().collect();
                let input = concat_channels(&refs)?;
                drop(parts);
                let mut mid = conv3x3(&input, &self.aggregate[0])?;
                relu_in_place(&mut mid);
                let mut out = conv3x3(&mid, &self.aggregate[1])?;
                relu_in_place(&mut out);
                (
                    out.clone(),
                    encodings,
                    Aggregation::Stacked {
                        plans,
                        input,
                        mid,
                        out,
                    },
                )
            }
        };

        let mut y0 = conv3x3(&h, &self.backbone[0])?;
        relu_in_place(&mut y0);
        let mut y1 = conv3x3(&y0, &self.backbone[1])?;
        relu_in_place(&mut y1);
        let mut y2 = conv3x3(&y1, &self.backbone[2])?;
        y2.add_assign(&y0)?;
        relu_in_place(&mut y2);
        let mut y3 = conv3x3(&y2, &self.backbone[3])?;
        relu_in_place(&mut y3);

        let velocity = conv3x3(&y3, &self.velocity_head)?;
        let logits = conv2d(
            &y3,
            &self.seg_head_w.value,
            Some(&self.seg_head_b.value),
            SAME,
        )?;
        Ok((
            Prediction { velocity, logits },
            Trace {
                encodings,
                aggregation,
                backbone: [h, y0, y1, y2, y3],
            },
        ))
    }

    pub fn predict(&self, frames: &[Frame]) -> Result<Prediction<F>> {
        Ok(self.forward(frames)?.0)
    }

    /// Accumulates parameter gradients given the loss gradients with respect
    /// to both heads.
    pub fn backward(
        &mut self,
        trace: &Trace<F>,
        grad_velocity: &Tensor<F>,
        grad_logits: &Tensor<F>,
    ) -> Result<()> {
        let [h, y0, y1, y2, y3] = &trace.backbone;
        let gv = conv2d_backward(y3, &self.velocity_head.value, grad_velocity, SAME)?;
        self.velocity_head.grad.add_assign(&gv.weight)?;
        let gs = conv2d_backward(y3, &self.seg_head_w.value, grad_logits, SAME)?;
        self.seg_head_w.grad.add_assign(&gs.weight)?;
        self.seg_head_b.grad.add_assign(&gs.bias)?;
        let mut d3 = gv.input;
        d3.add_assign(&gs.input)?;

        let d2 = conv_relu_backward(&mut self.backbone[3], y2, y3, &d3)?;
        // y2 = relu(conv(y1) + y0): the pre-activation gradient feeds both
        // the convolution and the skip.
        let mut d_pre2 = d2;
        relu_backward_inplace(d_pre2.data_mut(), y2.data());
        let c2 = conv2d_backward(y1, &self.backbone[2].value, &d_pre2, SAME)?;
        self.backbone[2].grad.add_assign(&c2.weight)?;
        let mut d0 = conv_relu_backward(&mut self.backbone[1], y0, y1, &c2.input)?;
        d0.add_assign(&d_pre2)?;
        let dh = conv_relu_backward(&mut self.backbone[0], h, y0, &d0)?;

        match &trace.aggregation {
            Aggregation::Recurrent(steps) => {
                let mut d_state = dh;
                for (step, cache) in steps.iter().zip(&trace.encodings).rev() {
                    let (dx, d_prev) = rnn_cell_backward(step, &d_state, &mut self.aggregate)?;
                    self.encoder.backward(&dx, cache)?;
                    d_state = d_prev;
                }
            }
            Aggregation::Stacked {
                plans,
                input,
                mid,
                out,
            } => {
                let d_mid = conv_relu_backward(&mut self.aggregate[1], mid, out, &dh)?;
                let d_input = conv_relu_backward(&mut self.aggregate[0], input, mid, &d_mid)?;
                let f = self.config.channels.features;
                let parts = split_channels(&d_input, &vec![f; plans.len()])?;
                for ((d, plan), cache) in parts.iter().zip(plans).zip(&trace.encodings) {
                    match plan {
                        Some(p) => self.encoder.backward(&warp_backward(d, p)?, cache)?,
                        None => self.encoder.backward(d, cache)?,
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tensors: self
                .parameters()
                .into_iter()
                .map(|p| NamedTensor::from_tensor(&p.name, &p.value))
                .collect(),
        }
    }

    /// Overwrites every parameter from `ckpt`, matched by name and shape.
    /// Optimiser state is reset.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let expected = self.parameters().len();
        if ckpt.tensors.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, model expects {expected}",
                ckpt.tensors.len()
            )));
        }
        for p in self.parameters_mut() {
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks '{}'", p.name)))?;
            if t.shape != p.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "'{}' is {:?} in the checkpoint, {:?} in the model",
                    p.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            *p = Parameter::new(p.name.clone(), t.to_tensor()?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, ScenarioSpec};
    use crate::geometry::{GridSpec, Point3, Transform3};
    use crate::nn::grad_check::{check_gradient_at, GradCheck};
    use crate::voxel::ChannelPlan;
    use rand::{Rng, SeedableRng};

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            seq_len: 2,
            grid: GridSpec::new(-1.6, -1.6, -0.4, 0.4, 0.4, 8, 8, 3).unwrap(),
            channels: ChannelPlan {
                vfe: vec![3, 4],
                features: 3,
            },
            seed: 11,
            ..ModelConfig::default()
        }
    }

    fn tiny_frames(rng: &mut ChaCha8Rng) -> Vec<Frame> {
        let poses = [
            Transform3::identity(),
            Transform3::from_yaw(0.1, Point3::new(0.3, -0.2, 0.0)),
        ];
        poses
            .iter()
            .enumerate()
            .map(|(i, pose)| {
                let points = (0..60)
                    .map(|_| {
                        Point3::new(
                            rng.random_range(-1.5..1.5),
                            rng.random_range(-1.5..1.5),
                            rng.random_range(-0.35..0.75),
                        )
                    })
                    .collect();
                Frame {
                    cloud: PointCloud::new(points),
                    pose: *pose,
                    timestamp: i as f64 * 0.1,
                }
            })
            .collect()
    }

    fn random_weights(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Scalar objective `<velocity, a> + <logits, b>` with fixed random
    /// directions.
    fn objective(p: &Prediction<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        p.velocity.dot(a) + p.logits.dot(b)
    }

    #[test]
    fn full_model_gradients_match_differences() {
        for variant in Variant::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let frames = tiny_frames(&mut rng);
            let mut net = MotionNet::<f64>::new(tiny_config(variant)).unwrap();
            let a = random_weights(&[2, 8, 8], &mut rng);
            let b = random_weights(&[1, 8, 8], &mut rng);
            net.zero_grad();
            let (pred, trace) = net.forward(&frames).unwrap();
            net.backward(&trace, &a, &b).unwrap();

            let gc = GradCheck::default().with_slope_kink(1e-3);
            let names: Vec<String> = net.parameters().iter().map(|p| p.name.clone()).collect();
            let mut checked = 0;
            for (k, name) in names.iter().enumerate() {
                let p = net.parameters()[k].clone();
                let x = p.value.data().to_vec();
                let idx: Vec<usize> = (0..x.len()).step_by((x.len() / 12).max(1)).collect();
                let probe = net.clone();
                let r = check_gradient_at(&gc, &x, p.grad.data(), &idx, |v| {
                    let mut m = probe.clone();
                    m.parameters_mut()[k].value =
                        Tensor::from_vec(p.value.shape(), v.to_vec()).unwrap();
                    objective(&m.predict(&frames).unwrap(), &a, &b)
                });
                assert!(r.max_rel_error < 1e-4, "{variant} {name}: {r:?}");
                checked += r.checked;
            }
            assert!(
                checked > 100,
                "{variant}: only {checked} coordinates checked"
            );
            assert!(objective(&pred, &a, &b).is_finite());
        }
    }

    #[test]
    fn empty_clouds_give_zero_velocity_and_even_odds() {
        for variant in Variant::ALL {
            let net = MotionNet::<f64>::new(tiny_config(variant)).unwrap();
            let frames: Vec<Frame> = (0..2)
                .map(|i| Frame {
                    cloud: PointCloud::new(Vec::new()),
                    pose: Transform3::from_translation(i as f64, 0.0, 0.0),
                    timestamp: i as f64 * 0.1,
                })
                .collect();
            let p = net.predict(&frames).unwrap();
            assert!(p.velocity.data().iter().all(|&v| v == 0.0));
            assert!(p.probability().data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = tiny_frames(&mut rng);
        let net = MotionNet::<f64>::new(tiny_config(Variant::RnnOdo)).unwrap();
        assert!(matches!(
            net.predict(&frames[..1]),
            Err(Error::TooFewFrames { got: 1, need: 2 })
        ));
        let stack = MotionNet::<f64>::new(ModelConfig {
            seq_len: 3,
            ..tiny_config(Variant::StackConv)
        })
        .unwrap();
        assert!(matches!(
            stack.predict(&frames),
            Err(Error::TooFewFrames { got: 2, need: 3 })
        ));
    }

    #[test]
    fn identity_odometry_matches_plain_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut frames = tiny_frames(&mut rng);
        frames[1].pose = Transform3::identity();
        let odo = MotionNet::<f64>::new(tiny_config(Variant::RnnOdo)).unwrap();
        let mut plain = odo.clone();
        plain.config.variant = Variant::RnnNoOdo;
        assert_eq!(
            odo.predict(&frames).unwrap(),
            plain.predict(&frames).unwrap()
        );
    }

    #[test]
    fn same_seed_same_weights() {
        let a = MotionNet::<f32>::new(tiny_config(Variant::RnnOdo)).unwrap();
        let b = MotionNet::<f32>::new(tiny_config(Variant::RnnOdo)).unwrap();
        let c = MotionNet::<f32>::new(ModelConfig {
            seed: 12,
            ..tiny_config(Variant::RnnOdo)
        })
        .unwrap();
        assert_eq!(a.to_checkpoint(), b.to_checkpoint());
        assert_ne!(a.to_checkpoint(), c.to_checkpoint());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = tiny_frames(&mut rng);
        let a = MotionNet::<f32>::new(tiny_config(Variant::StackConv)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        a.to_checkpoint().save(&path).unwrap();
        let mut b = MotionNet::<f32>::new(ModelConfig {
            seed: 99,
            ..tiny_config(Variant::StackConv)
        })
        .unwrap();
        b.load_checkpoint(&Checkpoint::load(&path).unwrap())
            .unwrap();
        assert_eq!(a.predict(&frames).unwrap(), b.predict(&frames).unwrap());

        let mut wrong = MotionNet::<f32>::new(ModelConfig {
            seq_len: 3,
            ..tiny_config(Variant::StackConv)
        })
        .unwrap();
        assert!(matches!(
            wrong.load_checkpoint(&a.to_checkpoint()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn f32_tracks_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = tiny_frames(&mut rng);
        let a = MotionNet::<f64>::new(tiny_config(Variant::RnnOdo)).unwrap();
        let mut b = MotionNet::<f32>::new(tiny_config(Variant::RnnOdo)).unwrap();
        b.load_checkpoint(&a.to_checkpoint()).unwrap();
        let pa = a.predict(&frames).unwrap();
        let pb = b.predict(&frames).unwrap();
        for (x, y) in pa.velocity.data().iter().zip(pb.velocity.data()) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }

    /// A recurrent step that copies the warped state exposes the alignment:
    /// after warping, last frame's occupancy lines up with this frame's.
    #[test]
    fn warped_state_aligns_static_occupancy() {
        let grid = GridSpec::centered(64, 0.2);
        let spec = ScenarioSpec {
            frames: 4,
            grid,
            movers_min: 0,
            movers_max: 0,
            ego_speed: (4.0, 5.0),
            ..ScenarioSpec::default()
        };
        let scene = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let occupancy = |cloud: &PointCloud| {
            let mut t = Tensor::<f64>::zeros(&[1, grid.ny, grid.nx]);
            for p in &cloud.points {
                if p.z > 0.3 {
                    if let Some((ix, iy)) = grid.column_of(p.x, p.y) {
                        t.data_mut()[grid.cell_index(ix, iy)] = 1.0;
                    }
                }
            }
            t
        };
        // conv0 passes the state channel through, conv1 is the identity
        let mut w0 = Tensor::zeros(&[1, 2, 3, 3]);
        w0.data_mut()[9 + 4] = 1.0;
        let mut w1 = Tensor::zeros(&[1, 1, 3, 3]);
        w1.data_mut()[4] = 1.0;
        let weights = [Parameter::new("w0", w0), Parameter::new("w1", w1)];
        let corr = |a: &Tensor<f64>, b: &Tensor<f64>| a.dot(b) / (a.dot(a) * b.dot(b)).sqrt();
        for i in 1..scene.len() {
            let prev = occupancy(&scene.frames[i - 1].cloud);
            let curr = occupancy(&scene.frames[i].cloud);
            let rel = relative_transform(&scene.frames[i - 1].pose, &scene.frames[i].pose);
            let plan = build_plan(&project_to_plane(&rel).unwrap(), &grid);
            let zeros = Tensor::zeros(&[1, grid.ny, grid.nx]);
            let warped = rnn_cell(&zeros, &prev, Some(plan), &weights).unwrap().state;
            let raw = rnn_cell(&zeros, &prev, None, &weights).unwrap().state;
            assert_eq!(raw, prev);
            assert!(
                corr(&warped, &curr) > corr(&raw, &curr) + 0.1,
                "frame {i}: warped {} raw {}",
                corr(&warped, &curr),
                corr(&raw, &curr)
            );
        }
    }
}
