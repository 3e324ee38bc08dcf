use crate::geometry::{GridSpec, Point3, Transform3};
use crate::motion::MotionGrid;
use crate::voxel::PointCloud;

use super::{BoxTrack, SceneSequence, FRAME_DT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    /// Speed above which a cell is dynamic, m/s.
    pub theta: f64,
    /// Footprint growth when testing membership, m. Surface points sit on the
    /// footprint boundary, so a small margin keeps them inside.
    pub margin: f64,
    /// Points lower than this above an object's base count as ground.
    pub ground_clearance: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            theta: 0.8,
            margin: 0.15,
            ground_clearance: 0.1,
        }
    }
}

/// A track state expressed in a frame's local coordinates.
struct LocalBox {
    center: Point3,
    yaw: f64,
    extents: [f64; 3],
    velocity: [f64; 2],
    shape: super::ShapeKind,
}

impl LocalBox {
    fn new(track: &BoxTrack, frame: usize, pose: &Transform3) -> Self {
        let s = &track.states[frame];
        let inv = pose.inverse();
        let v = inv.rotate(&Point3::new(s.velocity[0], s.velocity[1], 0.0));
        Self {
            center: inv.apply(&s.center),
            yaw: s.yaw - pose.yaw(),
            extents: s.extents,
            velocity: [v.x, v.y],
            shape: track.shape,
        }
    }

    fn contains_xy(&self, x: f64, y: f64, margin: f64) -> bool {
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        let (s, c) = self.yaw.sin_cos();
        let (ox, oy) = (c * dx + s * dy, -s * dx + c * dy);
        self.shape
            .contains(self.extents[0], self.extents[1], ox, oy, margin)
    }

    fn radius(&self, margin: f64) -> f64 {
        0.5 * self.extents[0].hypot(self.extents[1]) + margin
    }

    fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Paints track footprints onto a grid in the local frame of `pose`.
///
/// Every cell is velocity-known: cells under a footprint carry the object's
/// velocity and the rest are static background with zero velocity. Where
/// footprints overlap the faster object wins. Dynamic labels are left at 0.
pub fn rasterize_ground_truth(
    tracks: &[BoxTrack],
    frame: usize,
    pose: &Transform3,
    g: &GridSpec,
    margin: f64,
) -> MotionGrid {
    let mut out = MotionGrid::empty_truth(g);
    out.known.as_mut().expect("truth").fill(1.0);
    let mut best = vec![-1.0f64; g.num_cells()];
    for track in tracks {
        let b = LocalBox::new(track, frame, pose);
        let r = b.radius(margin);
        let lo = g.world_to_grid(&Point3::new(b.center.x - r, b.center.y - r, 0.0));
        let hi = g.world_to_grid(&Point3::new(b.center.x + r, b.center.y + r, 0.0));
        let clamp = |v: f64, n: usize| v.floor().clamp(0.0, n as f64 - 1.0) as usize;
        if hi[0] < 0.0 || hi[1] < 0.0 || lo[0] >= g.nx as f64 || lo[1] >= g.ny as f64 {
            continue;
        }
        let speed = b.speed();
        for iy in clamp(lo[1], g.ny)..=clamp(hi[1], g.ny) {
            for ix in clamp(lo[0], g.nx)..=clamp(hi[0], g.nx) {
                let (cx, cy) = g.cell_center(ix, iy);
                let cell = g.cell_index(ix, iy);
                if speed > best[cell] && b.contains_xy(cx, cy, margin) {
                    best[cell] = speed;
                    out.set_velocity(cell, b.velocity);
                }
            }
        }
    }
    out
}

/// Keeps labels only at cells holding at least one point. Other cells become
/// velocity-unknown and static.
pub fn refine_with_points(grid: &MotionGrid, cloud: &PointCloud, g: &GridSpec) -> MotionGrid {
    let mut occupied = vec![false; g.num_cells()];
    for p in &cloud.points {
        if let Some((ix, iy)) = g.column_of(p.x, p.y) {
            occupied[g.cell_index(ix, iy)] = true;
        }
    }
    let mut out = grid.clone();
    let mut known = out
        .known
        .take()
        .unwrap_or_else(|| grid.dynamic.map(|_| 1.0));
    for (cell, &occ) in occupied.iter().enumerate() {
        if !occ {
            known.data_mut()[cell] = 0.0;
            out.set_velocity(cell, [0.0, 0.0]);
            out.dynamic.data_mut()[cell] = 0.0;
        }
    }
    out.known = Some(known);
    out
}

/// Marks cells with speed strictly above `theta` as dynamic.
pub fn dynamic_label(grid: &MotionGrid, theta: f64) -> MotionGrid {
    let mut out = grid.clone();
    for cell in 0..grid.num_cells() {
        let [vx, vy] = grid.velocity_at(cell);
        out.dynamic.data_mut()[cell] = if vx.hypot(vy) > theta { 1.0 } else { 0.0 };
    }
    out
}

/// Full label pipeline for one frame: rasterize, refine, threshold.
pub fn ground_truth(scene: &SceneSequence, frame: usize, cfg: &LabelConfig) -> MotionGrid {
    let f = &scene.frames[frame];
    let raster = rasterize_ground_truth(&scene.tracks, frame, &f.pose, &scene.grid, cfg.margin);
    dynamic_label(
        &refine_with_points(&raster, &f.cloud, &scene.grid),
        cfg.theta,
    )
}

/// Ground-truth displacement over one frame interval for every point of a
/// frame, in its local coordinates. Points on no object get zero flow.
pub fn point_flow_truth(scene: &SceneSequence, frame: usize, cfg: &LabelConfig) -> Vec<[f64; 3]> {
    let f = &scene.frames[frame];
    let boxes: Vec<LocalBox> = scene
        .tracks
        .iter()
        .map(|t| LocalBox::new(t, frame, &f.pose))
        .collect();
    f.cloud
        .points
        .iter()
        .map(|p| {
            let mut best: Option<&LocalBox> = None;
            for b in &boxes {
                let base = b.center.z - 0.5 * b.extents[2];
                let top = b.center.z + 0.5 * b.extents[2];
                if p.z < base + cfg.ground_clearance || p.z > top + cfg.margin {
                    continue;
                }
                if !b.contains_xy(p.x, p.y, cfg.margin) {
                    continue;
                }
                if best.is_none_or(|cur| b.speed() > cur.speed()) {
                    best = Some(b);
                }
            }
            match best {
                Some(b) => [b.velocity[0] * FRAME_DT, b.velocity[1] * FRAME_DT, 0.0],
                None => [0.0; 3],
            }
        })
        .collect()
}
