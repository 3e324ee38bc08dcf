use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::geometry::Transform3;

use super::{BoxState, BoxTrack, Frame, SceneSequence};

/// Global rotation about the ego origin and uniform scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub angle: f64,
    pub scale: f64,
}

impl Default for AugmentDraw {
    fn default() -> Self {
        Self {
            angle: 0.0,
            scale: 1.0,
        }
    }
}

impl AugmentDraw {
    /// Angle uniform in `±max_angle`, scale uniform in `scale`.
    pub fn sample(rng: &mut impl Rng, max_angle: f64, scale: (f64, f64)) -> Self {
        let angle = if max_angle > 0.0 {
            rng.random_range(-max_angle..=max_angle)
        } else {
            0.0
        };
        let scale = if scale.1 > scale.0 {
            rng.random_range(scale.0..=scale.1)
        } else {
            scale.0
        };
        Self { angle, scale }
    }

    fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
}

/// Applies the similarity `x -> s·R·x` to every frame's local points and,
/// consistently, to poses, track footprints and velocities.
///
/// Poses are conjugated, `T' = A·T·A⁻¹`, which keeps them rigid and makes
/// every world-space relation of the original scene hold in the new one.
pub fn augment(scene: &SceneSequence, draw: &AugmentDraw) -> SceneSequence {
    let r = draw.rotation();
    let s = draw.scale;
    let frames = scene
        .frames
        .iter()
        .map(|f| {
            let mut cloud = f.cloud.clone();
            for p in &mut cloud.points {
                *p = (r * *p) * s;
            }
            let rot = r * f.pose.rotation() * r.transpose();
            let t = (r * f.pose.translation()) * s;
            Frame {
                cloud,
                pose: Transform3::new(rot, t).expect("conjugated rotation stays orthonormal"),
                timestamp: f.timestamp,
            }
        })
        .collect();
    let tracks = scene
        .tracks
        .iter()
        .map(|t| BoxTrack {
            id: t.id,
            shape: t.shape,
            states: t
                .states
                .iter()
                .map(|st| {
                    let v = r * Vector3::new(st.velocity[0], st.velocity[1], 0.0) * s;
                    BoxState {
                        center: (r * st.center) * s,
                        extents: st.extents.map(|e| e * s),
                        yaw: st.yaw + draw.angle,
                        velocity: [v.x, v.y],
                    }
                })
                .collect(),
        })
        .collect();
    SceneSequence {
        frames,
        tracks,
        grid: scene.grid,
    }
}
