//! Synthetic scenes, ground-truth grids and augmentation.

mod augment;
mod generator;
mod io;
mod labels;

pub use augment::{augment, AugmentDraw};
pub use generator::{generate_scene, ScenarioSpec};
pub use io::{
    load_scene, read_dataset_index, read_points, save_scene, write_dataset_index, write_points,
    DatasetIndex, Split,
};
pub use labels::{
    dynamic_label, ground_truth, point_flow_truth, rasterize_ground_truth, refine_with_points,
    LabelConfig,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3, Transform3};
use crate::voxel::PointCloud;

/// Nominal spacing between frames in seconds.
pub const FRAME_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Box,
    Disc,
    LShape,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Box, ShapeKind::Disc, ShapeKind::LShape];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Disc => "disc",
            ShapeKind::LShape => "l_shape",
        }
    }

    /// Whether the object-frame BEV point `(x, y)` lies within the footprint
    /// of extents `(l, w)` grown by `margin`.
    pub fn contains(&self, l: f64, w: f64, x: f64, y: f64, margin: f64) -> bool {
        match self {
            ShapeKind::Box => x.abs() <= 0.5 * l + margin && y.abs() <= 0.5 * w + margin,
            ShapeKind::Disc => x.hypot(y) <= 0.5 * l + margin,
            ShapeKind::LShape => {
                // bounding box minus the (+x, +y) quadrant
                x.abs() <= 0.5 * l + margin
                    && y.abs() <= 0.5 * w + margin
                    && !(x > margin && y > margin)
            }
        }
    }

    /// Counter-clockwise outline in the object frame.
    pub fn outline(&self, l: f64, w: f64) -> Vec<[f64; 2]> {
        let (hl, hw) = (0.5 * l, 0.5 * w);
        match self {
            ShapeKind::Box => vec![[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]],
            ShapeKind::Disc => (0..24)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::TAU / 24.0;
                    [hl * a.cos(), hl * a.sin()]
                })
                .collect(),
            ShapeKind::LShape => vec![
                [-hl, -hw],
                [hl, -hw],
                [hl, 0.0],
                [0.0, 0.0],
                [0.0, hw],
                [-hl, hw],
            ],
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown shape '{s}'")))
    }
}

/// State of a tracked object at one frame, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxState {
    pub center: Point3,
    /// Length, width, height in meters.
    pub extents: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxTrack {
    pub id: u32,
    pub shape: ShapeKind,
    /// One state per frame of the owning sequence.
    pub states: Vec<BoxState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Points in the sensor's local frame.
    pub cloud: PointCloud,
    /// Local to world.
    pub pose: Transform3,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<Frame>,
    pub tracks: Vec<BoxTrack>,
    pub grid: GridSpec,
}

impl SceneSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The `len` frames ending at `end` (inclusive), with tracks cut to match.
    pub fn window(&self, end: usize, len: usize) -> Result<SceneSequence> {
        if len == 0 || end >= self.frames.len() || end + 1 < len {
            return Err(Error::TooFewFrames {
                got: self.frames.len().min(end + 1),
                need: len,
            });
        }
        let range = end + 1 - len..end + 1;
        Ok(SceneSequence {
            frames: self.frames[range.clone()].to_vec(),
            tracks: self
                .tracks
                .iter()
                .map(|t| BoxTrack {
                    id: t.id,
                    shape: t.shape,
                    states: t.states[range.clone()].to_vec(),
                })
                .collect(),
            grid: self.grid,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for w in self.frames.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::InvalidSpec("timestamps must increase".into()));
            }
        }
        for t in &self.tracks {
            if t.states.len() != self.frames.len() {
                return Err(Error::InvalidSpec(format!(
                    "track {} has {} states for {} frames",
                    t.id,
                    t.states.len(),
                    self.frames.len()
                )));
            }
            if t.states.iter().any(|s| s.extents.iter().any(|&e| e <= 0.0)) {
                return Err(Error::InvalidSpec(format!(
                    "track {} has empty extents",
                    t.id
                )));
            }
        }
        Ok(())
    }
}
