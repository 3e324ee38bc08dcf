use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::datagen::{point_flow_truth, LabelConfig, SceneSequence, FRAME_DT};
use crate::error::{Error, Result};
use crate::geometry::{relative_transform, transform_cloud};
use crate::model::MotionNet;
use crate::motion::mask_velocity;
use crate::nn::Real;

use super::{
    average_precision, grid_to_point_flow, icp_global, icp_pointwise, mean, oracle_flow,
    point_errors, roi_filter, zero_flow_baseline, IcpParams, PointFlow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoiMode {
    WithRoad,
    NoRoad,
}

impl RoiMode {
    pub const ALL: [RoiMode; 2] = [RoiMode::WithRoad, RoiMode::NoRoad];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoiMode::WithRoad => "with_road",
            RoiMode::NoRoad => "no_road",
        }
    }
}

/// Which velocity ranks points for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApScore {
    /// Velocity after zeroing cells classified static.
    Masked,
    /// Velocity head output before masking.
    Raw,
}

impl FromStr for ApScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(ApScore::Masked),
            "raw" => Ok(ApScore::Raw),
            _ => Err(Error::Config(format!("unknown AP score '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Model,
    Zero,
    IcpGlobal,
    IcpPointwise,
    Oracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Zero => "zero",
            Method::IcpGlobal => "icp_global",
            Method::IcpPointwise => "icp_pointwise",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Model,
            Method::Zero,
            Method::IcpGlobal,
            Method::IcpPointwise,
            Method::Oracle,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Dynamic-probability threshold for velocity masking.
    pub tau: f64,
    pub labels: LabelConfig,
    pub ap_score: ApScore,
    /// Methods evaluated besides the model.
    pub baselines: Vec<Method>,
    pub icp: IcpParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            labels: LabelConfig::default(),
            ap_score: ApScore::Masked,
            baselines: vec![Method::Zero],
            icp: IcpParams::default(),
        }
    }
}

/// Point-level outcome of one method on one scene in one evaluation region.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub method: String,
    pub roi: RoiMode,
    pub errors: Vec<f64>,
    pub dynamic: Vec<bool>,
    pub scores: Vec<f64>,
}

impl FlowSample {
    fn new(
        method: &str,
        roi: RoiMode,
        pred: &PointFlow,
        gt: &PointFlow,
        scores: &[f64],
    ) -> Result<Self> {
        let keep = roi_filter(&gt.points, roi == RoiMode::WithRoad);
        let errors = point_errors(pred, gt)?;
        let dynamic = gt.dynamic_mask();
        Ok(Self {
            method: method.to_string(),
            roi,
            errors: keep.iter().map(|&i| errors[i]).collect(),
            dynamic: keep.iter().map(|&i| dynamic[i]).collect(),
            scores: keep.iter().map(|&i| scores[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scene: String,
    pub method: String,
    pub roi: RoiMode,
    pub points: usize,
    pub dynamic_points: usize,
    pub epe: Option<f64>,
    pub epe_dynamic: Option<f64>,
    pub ap: Option<f64>,
}

impl MetricRow {
    pub fn from_sample(scene: &str, s: &FlowSample) -> Self {
        let dyn_errors: Vec<f64> = s
            .errors
            .iter()
            .zip(&s.dynamic)
            .filter_map(|(&e, &d)| d.then_some(e))
            .collect();
        Self {
            scene: scene.to_string(),
            method: s.method.clone(),
            roi: s.roi,
            points: s.errors.len(),
            dynamic_points: dyn_errors.len(),
            epe: mean(&s.errors),
            epe_dynamic: mean(&dyn_errors),
            ap: average_precision(&s.scores, &s.dynamic).ok(),
        }
    }
}

/// Evaluates the model (when given) and the configured baselines on the
/// last frame of `scene`. The model sees the window of its sequence length
/// ending there.
pub fn evaluate_scene<F: Real>(
    net: Option<&MotionNet<F>>,
    scene: &SceneSequence,
    cfg: &EvalConfig,
) -> Result<Vec<FlowSample>> {
    if scene.len() < 2 {
        return Err(Error::TooFewFrames {
            got: scene.len(),
            need: 2,
        });
    }
    let last = scene.len() - 1;
    let frame = &scene.frames[last];
    let g = scene.grid;
    let truth = point_flow_truth(scene, last, &cfg.labels);
    let gt = PointFlow::new(
        frame.cloud.points.clone(),
        truth
            .iter()
            .map(|f| nalgebra::Vector3::new(f[0], f[1], f[2]))
            .collect(),
    )?;
    let norms = |f: &PointFlow| f.flow.iter().map(|v| v.norm()).collect::<Vec<f64>>();

    let mut flows: Vec<(String, PointFlow, Vec<f64>)> = Vec::new();
    if let Some(net) = net {
        let window = scene.window(last, net.config.seq_len.min(scene.len()))?;
        let raw = net.predict(&window.frames)?.to_motion_grid()?;
        let masked = mask_velocity(&raw, cfg.tau)?;
        let flow = grid_to_point_flow(&masked, &frame.cloud, &g, FRAME_DT)?;
        let scores = match cfg.ap_score {
            ApScore::Masked => norms(&flow),
            ApScore::Raw => norms(&grid_to_point_flow(&raw, &frame.cloud, &g, FRAME_DT)?),
        };
        flows.push((net.config.variant.as_str().to_string(), flow, scores));
    }
    for &m in &cfg.baselines {
        let flow = match m {
            Method::Model => continue,
            Method::Zero => zero_flow_baseline(&frame.cloud),
            Method::Oracle => oracle_flow(&gt, &g),
            Method::IcpGlobal | Method::IcpPointwise => {
                // match current points against the ego-compensated previous
                // cloud, then flip the displacement to point forward in time
                let prev = &scene.frames[last - 1];
                let rel = relative_transform(&prev.pose, &frame.pose);
                let prev_pts = transform_cloud(&prev.cloud.points, &rel);
                let back = if m == Method::IcpGlobal {
                    icp_global(&frame.cloud.points, &prev_pts, &cfg.icp)?
                } else {
                    icp_pointwise(&frame.cloud.points, &prev_pts, &cfg.icp)?
                };
                PointFlow::new(back.points, back.flow.into_iter().map(|f| -f).collect())?
            }
        };
        let scores = norms(&flow);
        flows.push((m.as_str().to_string(), flow, scores));
    }

    let mut out = Vec::new();
    for roi in RoiMode::ALL {
        for (name, flow, scores) in &flows {
            out.push(FlowSample::new(name, roi, flow, &gt, scores)?);
        }
    }
    Ok(out)
}

/// Pools samples over scenes into one row per (method, region), in order of
/// first appearance.
pub fn summarize(samples: &[FlowSample]) -> Vec<MetricRow> {
    let mut keys: Vec<(String, RoiMode)> = Vec::new();
    for s in samples {
        if !keys.iter().any(|(m, r)| *m == s.method && *r == s.roi) {
            keys.push((s.method.clone(), s.roi));
        }
    }
    keys.into_iter()
        .map(|(method, roi)| {
            let mut pooled = FlowSample {
                method,
                roi,
                errors: Vec::new(),
                dynamic: Vec::new(),
                scores: Vec::new(),
            };
            for s in samples
                .iter()
                .filter(|s| s.method == pooled.method && s.roi == roi)
            {
                pooled.errors.extend_from_slice(&s.errors);
                pooled.dynamic.extend_from_slice(&s.dynamic);
                pooled.scores.extend_from_slice(&s.scores);
            }
            MetricRow::from_sample("all", &pooled)
        })
        .collect()
}

/// Fixed-precision value, or `undefined` when the metric has no support.
pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "undefined".to_string(),
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("scene,method,roi,points,dynamic_points,epe,epe_dynamic,ap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scene,
            r.method,
            r.roi.as_str(),
            r.points,
            r.dynamic_points,
            format_metric(r.epe),
            format_metric(r.epe_dynamic),
            format_metric(r.ap)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scene, ScenarioSpec};
    use crate::geometry::GridSpec;
    use crate::model::{ModelConfig, Variant};
    use crate::voxel::ChannelPlan;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> SceneSequence {
        let spec = ScenarioSpec {
            frames: 3,
            grid: GridSpec::centered(32, 0.4),
            movers_min: 2,
            movers_max: 4,
            ..ScenarioSpec::default()
        };
        generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn all_baselines() -> EvalConfig {
        EvalConfig {
            baselines: vec![
                Method::Zero,
                Method::Oracle,
                Method::IcpGlobal,
                Method::IcpPointwise,
            ],
            ..EvalConfig::default()
        }
    }

    #[test]
    fn rows_for_every_method_and_region() {
        let net = MotionNet::<f32>::new(ModelConfig {
            variant: Variant::RnnOdo,
            seq_len: 2,
            grid: GridSpec::centered(32, 0.4),
            channels: ChannelPlan {
                vfe: vec![4, 4],
                features: 4,
            },
            ..ModelConfig::default()
        })
        .unwrap();
        let samples = evaluate_scene(Some(&net), &scene(1), &all_baselines()).unwrap();
        assert_eq!(samples.len(), 10);
        let rows = summarize(&samples);
        assert_eq!(rows.len(), 10);
        assert_eq!(
            rows.iter().filter(|r| r.roi == RoiMode::WithRoad).count(),
            5
        );
        let csv = metrics_csv(&rows);
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.contains("rnn_odo,no_road"));
        for r in &rows {
            assert!(r.epe.unwrap() >= 0.0);
        }
        let no_road = rows
            .iter()
            .find(|r| r.method == "zero" && r.roi == RoiMode::NoRoad)
            .unwrap();
        let with_road = rows
            .iter()
            .find(|r| r.method == "zero" && r.roi == RoiMode::WithRoad)
            .unwrap();
        assert!(with_road.points > no_road.points);
    }

    #[test]
    fn oracle_beats_zero_on_movers() {
        let samples: Vec<FlowSample> = (0..3)
            .flat_map(|s| evaluate_scene::<f32>(None, &scene(10 + s), &all_baselines()).unwrap())
            .collect();
        let rows = summarize(&samples);
        let get = |m: &str| {
            rows.iter()
                .find(|r| r.method == m && r.roi == RoiMode::NoRoad)
                .unwrap()
        };
        assert!(get("zero").dynamic_points > 0);
        assert!(get("oracle").epe.unwrap() < get("zero").epe.unwrap());
        assert!(get("oracle").epe_dynamic.unwrap() < get("zero").epe_dynamic.unwrap());
        // a single rigid motion cannot explain independent movers
        assert!(get("icp_global").epe_dynamic.unwrap() > 0.08);
    }

    #[test]
    fn summaries_pool_points() {
        let a = FlowSample {
            method: "m".into(),
            roi: RoiMode::NoRoad,
            errors: vec![1.0],
            dynamic: vec![true],
            scores: vec![1.0],
        };
        let b = FlowSample {
            errors: vec![0.0, 0.0, 0.0],
            dynamic: vec![false, false, false],
            scores: vec![0.0, 0.0, 0.0],
            ..a.clone()
        };
        let rows = summarize(&[a, b]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].epe, Some(0.25));
        assert_eq!(rows[0].epe_dynamic, Some(1.0));
        assert_eq!(rows[0].ap, Some(1.0));
        let undefined = MetricRow::from_sample(
            "s",
            &FlowSample {
                method: "m".into(),
                roi: RoiMode::NoRoad,
                errors: vec![0.0],
                dynamic: vec![false],
                scores: vec![0.0],
            },
        );
        assert_eq!(format_metric(undefined.epe_dynamic), "undefined");
        assert_eq!(undefined.ap, None);
    }
}
