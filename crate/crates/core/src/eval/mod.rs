//! Pointwise flow metrics, baselines and timing.

mod bench;
mod icp;
mod report;

pub use bench::{benchmark, BenchReport};
pub use icp::{icp, icp_global, icp_pointwise, rigid_fit, IcpParams, IcpResult};
pub use report::{
    evaluate_scene, format_metric, metrics_csv, summarize, ApScore, EvalConfig, FlowSample, Method,
    MetricRow, RoiMode,
};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3};
use crate::motion::MotionGrid;
use crate::voxel::PointCloud;

/// Flow norm above which a point counts as dynamic, m.
pub const DYNAMIC_FLOW: f64 = 0.08;

/// Per-point displacement over one frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFlow {
    pub points: Vec<Point3>,
    pub flow: Vec<Vector3<f64>>,
}

impl PointFlow {
    pub fn new(points: Vec<Point3>, flow: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != flow.len() {
            return Err(Error::PointSetMismatch(points.len(), flow.len()));
        }
        Ok(Self { points, flow })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the listed points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointFlow {
        PointFlow {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            flow: indices.iter().map(|&i| self.flow[i]).collect(),
        }
    }

    pub fn dynamic_mask(&self) -> Vec<bool> {
        self.flow.iter().map(|f| f.norm() > DYNAMIC_FLOW).collect()
    }
}

/// Reads each point's cell velocity and scales it by `dt`. Points outside
/// the grid get zero flow; vertical flow is always zero.
pub fn grid_to_point_flow(
    pred: &MotionGrid,
    cloud: &PointCloud,
    g: &GridSpec,
    dt: f64,
) -> Result<PointFlow> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt {dt} must be positive")));
    }
    if pred.nx() != g.nx || pred.ny() != g.ny {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{} vs spec {}x{}",
            pred.nx(),
            pred.ny(),
            g.nx,
            g.ny
        )));
    }
    let flow = cloud
        .points
        .iter()
        .map(|p| match g.column_of(p.x, p.y) {
            Some((ix, iy)) => {
                let v = pred.velocity_at(g.cell_index(ix, iy));
                Vector3::new(v[0] * dt, v[1] * dt, 0.0)
            }
            None => Vector3::zeros(),
        })
        .collect();
    PointFlow::new(cloud.points.clone(), flow)
}

fn check_same(pred: &PointFlow, gt: &PointFlow) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::PointSetMismatch(pred.len(), gt.len()));
    }
    Ok(())
}

/// Per-point Euclidean flow error.
pub fn point_errors(pred: &PointFlow, gt: &PointFlow) -> Result<Vec<f64>> {
    check_same(pred, gt)?;
    Ok(pred
        .flow
        .iter()
        .zip(&gt.flow)
        .map(|(a, b)| (a - b).norm())
        .collect())
}

/// Mean end-point error. Zero for empty point sets.
pub fn epe(pred: &PointFlow, gt: &PointFlow) -> Result<f64> {
    let e = point_errors(pred, gt)?;
    Ok(mean(&e).unwrap_or(0.0))
}

/// End-point error over points whose true flow exceeds [`DYNAMIC_FLOW`];
/// `None` when there are none.
pub fn epe_dynamic(pred: &PointFlow, gt: &PointFlow) -> Result<Option<f64>> {
    let e = point_errors(pred, gt)?;
    let dynamic: Vec<f64> = e
        .into_iter()
        .zip(gt.dynamic_mask())
        .filter_map(|(e, d)| d.then_some(e))
        .collect();
    Ok(mean(&dynamic))
}

pub(crate) fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rank-based average precision: points sorted by descending score (ties
/// keep input order), precision summed at every positive and divided by the
/// number of positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::PointSetMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Evaluation region: `0 < x < 40`, `|y| < 40`, and without road also
/// `z >= 0.1`. Returns indices of kept points.
pub fn roi_filter(points: &[Point3], with_road: bool) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.x > 0.0 && p.x < 40.0 && p.y > -40.0 && p.y < 40.0 && (with_road || p.z >= 0.1)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Round-trips true flow through the grid: each cell takes the flow of its
/// largest-norm point (first on ties) and every point reads its cell back.
/// Points outside the grid read zero.
pub fn oracle_flow(gt: &PointFlow, g: &GridSpec) -> PointFlow {
    let cells: Vec<Option<usize>> = gt
        .points
        .iter()
        .map(|p| g.column_of(p.x, p.y).map(|(ix, iy)| g.cell_index(ix, iy)))
        .collect();
    let mut best: Vec<Option<usize>> = vec![None; g.num_cells()];
    for (i, c) in cells.iter().enumerate() {
        if let Some(c) = *c {
            match best[c] {
                Some(j) if gt.flow[j].norm() >= gt.flow[i].norm() => {}
                _ => best[c] = Some(i),
            }
        }
    }
    let flow = cells
        .iter()
        .map(|c| match c {
            Some(c) => gt.flow[best[*c].expect("cell has a point")],
            None => Vector3::zeros(),
        })
        .collect();
    PointFlow {
        points: gt.points.clone(),
        flow,
    }
}

/// Smallest end-point error reachable with one flow per cell.
pub fn oracle_metric(gt: &PointFlow, g: &GridSpec) -> f64 {
    epe(&oracle_flow(gt, g), gt).expect("same point set")
}

pub fn zero_flow_baseline(cloud: &PointCloud) -> PointFlow {
    PointFlow {
        points: cloud.points.clone(),
        flow: vec![Vector3::zeros(); cloud.len()],
    }
}
