//! Dynamic-cell clustering into bird's-eye-view boxes with velocities.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::motion::MotionGrid;
use crate::voxel::PointCloud;

/// Label of points that belong to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellVector {
    /// Cell center, local frame, m.
    pub x: f64,
    pub y: f64,
    /// Predicted velocity, m/s.
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
    /// Seconds; velocity enters the distance as `scale * v`.
    pub velocity_scale: f64,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 0.6,
            min_pts: 3,
            velocity_scale: 0.5,
        }
    }
}

/// Axis-aligned box around one cluster of dynamic cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicBox {
    pub id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// Highest point inside the footprint, m (0 when none).
    pub height: f64,
    /// Mean member velocity, m/s.
    pub velocity: [f64; 2],
    pub cells: usize,
}

/// One vector per cell whose dynamic probability reaches `tau`, row-major.
pub fn cells_to_vectors(pred: &MotionGrid, g: &GridSpec, tau: f64) -> Result<Vec<CellVector>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("threshold {tau} outside (0, 1)")));
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
    let mut out = Vec::new();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let c = g.cell_index(ix, iy);
            if pred.dynamic_at(c) >= tau {
                let (x, y) = g.cell_center(ix, iy);
                let [vx, vy] = pred.velocity_at(c);
                out.push(CellVector { x, y, vx, vy });
            }
        }
    }
    Ok(out)
}

fn feature(v: &CellVector, scale: f64) -> [f64; 4] {
    [v.x, v.y, scale * v.vx, scale * v.vy]
}

fn dist_sq(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN over `(x, y, s·vx, s·vy)`. A point is core when at least `min_pts`
/// points, itself included, lie within `eps`. Clusters are numbered in
/// order of their first core point; noise is [`NOISE`].
pub fn dbscan(vectors: &[CellVector], params: &DbscanParams) -> Result<Vec<i32>> {
    if !(params.eps > 0.0) || params.min_pts == 0 {
        return Err(Error::Config(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got {} and {}",
            params.eps, params.min_pts
        )));
    }
    let feats: Vec<[f64; 4]> = vectors
        .iter()
        .map(|v| feature(v, params.velocity_scale))
        .collect();
    let eps_sq = params.eps * params.eps;
    let neighbours = |i: usize| -> Vec<usize> {
        (0..feats.len())
            .filter(|&j| dist_sq(&feats[i], &feats[j]) <= eps_sq)
            .collect()
    };
    const UNVISITED: i32 = -2;
    let mut labels = vec![UNVISITED; feats.len()];
    let mut next = 0;
    for i in 0..feats.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        let n = neighbours(i);
        if n.len() < params.min_pts {
            labels[i] = NOISE;
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = id;
        let mut queue: VecDeque<usize> = n.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = id;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = id;
            let nj = neighbours(j);
            if nj.len() >= params.min_pts {
                queue.extend(nj);
            }
        }
    }
    Ok(labels)
}

/// One box per cluster: the union of member cell footprints, the mean member
/// velocity and the highest cloud point inside the footprint.
pub fn clusters_to_boxes(
    labels: &[i32],
    vectors: &[CellVector],
    cloud: &PointCloud,
    g: &GridSpec,
) -> Result<Vec<DynamicBox>> {
    if labels.len() != vectors.len() {
        return Err(Error::PointSetMismatch(labels.len(), vectors.len()));
    }
    let clusters = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let half = g.cell_size_xy / 2.0;
    let mut boxes = Vec::with_capacity(clusters);
    for id in 0..clusters {
        let members: Vec<&CellVector> = vectors
            .iter()
            .zip(labels)
            .filter_map(|(v, &l)| (l == id as i32).then_some(v))
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let x_min = members.iter().map(|v| v.x).fold(f64::INFINITY, f64::min) - half;
        let x_max = members
            .iter()
            .map(|v| v.x)
            .fold(f64::NEG_INFINITY, f64::max)
            + half;
        let y_min = members.iter().map(|v| v.y).fold(f64::INFINITY, f64::min) - half;
        let y_max = members
            .iter()
            .map(|v| v.y)
            .fold(f64::NEG_INFINITY, f64::max)
            + half;
        let height = cloud
            .points
            .iter()
            .filter(|p| p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max)
            .map(|p| p.z)
            .fold(0.0, f64::max);
        boxes.push(DynamicBox {
            id,
            x_min,
            y_min,
            x_max,
            y_max,
            height,
            velocity: [
                members.iter().map(|v| v.vx).sum::<f64>() / n,
                members.iter().map(|v| v.vy).sum::<f64>() / n,
            ],
            cells: members.len(),
        });
    }
    Ok(boxes)
}

pub fn boxes_csv(boxes: &[DynamicBox]) -> String {
    let mut out = String::from("id,x_min,y_min,x_max,y_max,height,vx,vy,cells\n");
    for b in boxes {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            b.id,
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            b.height,
            b.velocity[0],
            b.velocity[1],
            b.cells
        );
    }
    out
}
