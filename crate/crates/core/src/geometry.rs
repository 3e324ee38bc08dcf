//! Rigid transforms, the planar projection used by the BEV warp, and the
//! metric <-> grid index mapping shared by every stage of the pipeline.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Orthonormality tolerance applied when a rotation is constructed.
const ORTHO_TOL: f64 = 1e-9;

/// Largest roll or pitch (rad) accepted by [`project_to_plane`].
pub const MAX_ROLL_PITCH: f64 = 0.05;

pub type Point3 = Vector3<f64>;

/// A 3D rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Transform3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !dev.is_finite() || dev > ORTHO_TOL || rotation.determinant() < 0.0 {
            return Err(Error::NotOrthonormal(dev));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NotOrthonormal(f64::NAN));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about +Z by `yaw` followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) construction.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Applies only the rotation, for direction vectors such as velocities.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: the result applies `other` first.
    pub fn compose(&self, other: &Transform3) -> Transform3 {
        Transform3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform3 {
        let rt = self.rotation.transpose();
        Transform3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 3x4 `[R | t]`, the layout used in scene manifests.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Transform3::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    /// Roll and pitch of the Z-Y-X decomposition.
    pub fn roll_pitch(&self) -> (f64, f64) {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (roll, pitch)
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

impl Default for Transform3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Maps coordinates of frame `i-1` into frame `i`, given both local->world poses.
pub fn relative_transform(t_prev: &Transform3, t_curr: &Transform3) -> Transform3 {
    t_curr.inverse().compose(t_prev)
}

/// Reduces a near-planar 3D transform to yaw plus planar translation.
pub fn project_to_plane(t: &Transform3) -> Result<Transform2> {
    let (roll, pitch) = t.roll_pitch();
    let worst = roll.abs().max(pitch.abs());
    if worst > MAX_ROLL_PITCH {
        return Err(Error::RollPitchTooLarge(worst));
    }
    Ok(Transform2 {
        yaw: t.yaw(),
        tx: t.translation.x,
        ty: t.translation.y,
    })
}

pub fn transform_cloud(points: &[Point3], t: &Transform3) -> Vec<Point3> {
    points.iter().map(|p| t.apply(p)).collect()
}

/// Planar rigid transform `(x, y) -> R(yaw) (x, y) + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transform2 {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Transform2 {
    pub fn new(yaw: f64, tx: f64, ty: f64) -> Self {
        Self { yaw, tx, ty }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.yaw == 0.0 && self.tx == 0.0 && self.ty == 0.0
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.yaw.sin_cos();
        Transform2 {
            yaw: -self.yaw,
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
        }
    }

    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (tx, ty) = self.apply(other.tx, other.ty);
        Transform2 {
            yaw: self.yaw + other.yaw,
            tx,
            ty,
        }
    }

    pub fn to_transform3(&self) -> Transform3 {
        Transform3::from_yaw(self.yaw, Vector3::new(self.tx, self.ty, 0.0))
    }
}

/// Discretization of the local frame into BEV cells and vertical voxels.
///
/// Index `k` along an axis covers `[min + k*size, min + (k+1)*size)`; the
/// cell center sits at fractional index `k + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub z_min: f64,
    pub cell_size_xy: f64,
    pub voxel_size_z: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridSpec {
    pub fn new(
        x_min: f64,
        y_min: f64,
        z_min: f64,
        cell_size_xy: f64,
        voxel_size_z: f64,
        nx: usize,
        ny: usize,
        nz: usize,
    ) -> Result<Self> {
        let g = Self {
            x_min,
            y_min,
            z_min,
            cell_size_xy,
            voxel_size_z,
            nx,
            ny,
            nz,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid of `n x n` cells at `cell` meters centered on the ego origin.
    pub fn centered(n: usize, cell: f64) -> Self {
        let half = n as f64 * cell / 2.0;
        Self {
            x_min: -half,
            y_min: -half,
            z_min: -0.4,
            cell_size_xy: cell,
            voxel_size_z: 0.4,
            nx: n,
            ny: n,
            nz: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.z_min]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        if !(self.cell_size_xy > 0.0) || !(self.voxel_size_z > 0.0) {
            return Err(Error::InvalidGrid("cell sizes must be positive".into()));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidGrid("cell counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.nx as f64 * self.cell_size_xy
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.ny as f64 * self.cell_size_xy
    }

    /// Fractional indices of a metric point; out-of-range values are not clipped.
    pub fn world_to_grid(&self, p: &Point3) -> [f64; 3] {
        [
            (p.x - self.x_min) / self.cell_size_xy,
            (p.y - self.y_min) / self.cell_size_xy,
            (p.z - self.z_min) / self.voxel_size_z,
        ]
    }

    pub fn grid_to_world(&self, idx: [f64; 3]) -> Point3 {
        Point3::new(
            self.x_min + idx[0] * self.cell_size_xy,
            self.y_min + idx[1] * self.cell_size_xy,
            self.z_min + idx[2] * self.voxel_size_z,
        )
    }

    /// BEV column containing `(x, y)`, if inside the grid.
    pub fn column_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.x_min) / self.cell_size_xy).floor();
        let fy = ((y - self.y_min) / self.cell_size_xy).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Voxel containing `p`, if inside the grid volume.
    pub fn voxel_of(&self, p: &Point3) -> Option<(usize, usize, usize)> {
        let (ix, iy) = self.column_of(p.x, p.y)?;
        let fz = ((p.z - self.z_min) / self.voxel_size_z).floor();
        if fz < 0.0 || fz >= self.nz as f64 {
            return None;
        }
        Some((ix, iy, fz as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.cell_size_xy,
            self.y_min + (iy as f64 + 0.5) * self.cell_size_xy,
        )
    }

    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        self.grid_to_world([ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5])
    }

    /// Row-major flat index of a BEV cell.
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("grid.x_min".into(), fmt_f64(self.x_min)),
            ("grid.y_min".into(), fmt_f64(self.y_min)),
            ("grid.z_min".into(), fmt_f64(self.z_min)),
            ("grid.cell_size_xy".into(), fmt_f64(self.cell_size_xy)),
            ("grid.voxel_size_z".into(), fmt_f64(self.voxel_size_z)),
            ("grid.nx".into(), self.nx.to_string()),
            ("grid.ny".into(), self.ny.to_string()),
            ("grid.nz".into(), self.nz.to_string()),
        ]
    }

    /// Reads the `grid.*` keys written by [`GridSpec::to_kv`].
    pub fn from_kv<'a>(mut get: impl FnMut(&str) -> Option<&'a str>) -> Result<Self> {
        let mut num = |key: &str| -> Result<f64> {
            let raw = get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw}")))
        };
        let x_min = num("grid.x_min")?;
        let y_min = num("grid.y_min")?;
        let z_min = num("grid.z_min")?;
        let cell = num("grid.cell_size_xy")?;
        let vz = num("grid.voxel_size_z")?;
        let count = |v: f64, key: &str| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "{key} must be a non-negative integer"
                )));
            }
            Ok(v as usize)
        };
        let nx = count(num("grid.nx")?, "grid.nx")?;
        let ny = count(num("grid.ny")?, "grid.ny")?;
        let nz = count(num("grid.nz")?, "grid.nz")?;
        GridSpec::new(x_min, y_min, z_min, cell, vz, nx, ny, nz)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::centered(128, 0.2)
    }
}

/// Shortest decimal representation that parses back to the same value.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(rng: &mut ChaCha8Rng) -> Transform3 {
        Transform3::from_euler(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-3.0..3.0),
            Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-2.0..2.0),
            ),
        )
    }

    fn close(a: &Transform3, b: &Transform3, tol: f64) -> bool {
        (a.rotation - b.rotation).norm() <= tol && (a.translation - b.translation).norm() <= tol
    }

    // 4x4 homogeneous product, kept independent of `compose`.
    fn homogeneous(t: &Transform3) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(t.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t.translation());
        m
    }

    #[test]
    fn compose_examples() {
        let t = Transform3::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0));
        assert!(close(&Transform3::identity().compose(&t), &t, 1e-15));
        assert!(close(
            &t.compose(&t.inverse()),
            &Transform3::identity(),
            1e-12
        ));
        let c = Transform3::from_translation(1.0, 0.0, 0.0)
            .compose(&Transform3::from_translation(0.0, 2.0, 0.0));
        assert!(close(&c, &Transform3::from_translation(1.0, 2.0, 0.0), 0.0));
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let m = homogeneous(&a) * homogeneous(&b);
            let c = homogeneous(&a.compose(&b));
            assert!((m - c).norm() < 1e-9);
            let p = Point3::new(rng.random(), rng.random(), rng.random());
            assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        }
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            assert!(close(
                &a.compose(&b).compose(&c),
                &a.compose(&b.compose(&c)),
                1e-9
            ));
            assert!(close(&a.inverse().inverse(), &a, 1e-9));
            assert!(close(
                &a.inverse().compose(&a),
                &Transform3::identity(),
                1e-9
            ));
        }
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Transform3::new(m, Vector3::zeros()),
            Err(Error::NotOrthonormal(_))
        ));
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Transform3::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn relative_transform_examples() {
        let t = Transform3::from_yaw(1.0, Vector3::new(4.0, 5.0, 0.0));
        assert!(close(
            &relative_transform(&t, &t),
            &Transform3::identity(),
            1e-12
        ));

        // previous pose one meter ahead in world x, current at the origin
        let rel = relative_transform(
            &Transform3::from_translation(1.0, 0.0, 0.0),
            &Transform3::identity(),
        );
        assert!(close(
            &rel,
            &Transform3::from_translation(1.0, 0.0, 0.0),
            0.0
        ));
    }

    #[test]
    fn relative_transform_two_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let prev = random_pose(&mut rng);
            let curr = random_pose(&mut rng);
            let p = Point3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-3.0..3.0),
            );
            let direct = relative_transform(&prev, &curr).apply(&p);
            let via_world = curr.inverse().apply(&prev.apply(&p));
            assert!((direct - via_world).norm() < 1e-9);
        }
    }

    #[test]
    fn project_to_plane_examples() {
        assert_eq!(
            project_to_plane(&Transform3::identity()).unwrap(),
            Transform2::new(0.0, 0.0, 0.0)
        );
        let t = Transform3::from_yaw(FRAC_PI_2, Vector3::new(1.0, 2.0, 0.0));
        let p = project_to_plane(&t).unwrap();
        assert!((p.yaw - FRAC_PI_2).abs() < 1e-15);
        assert_eq!((p.tx, p.ty), (1.0, 2.0));
        let tilted = Transform3::from_euler(0.2, 0.0, 0.0, Vector3::zeros());
        assert!(matches!(
            project_to_plane(&tilted),
            Err(Error::RollPitchTooLarge(_))
        ));
    }

    #[test]
    fn transform2_round_trip_and_lift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let t = Transform2::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let (x, y) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let (u, v) = t.apply(x, y);
            let (bx, by) = t.inverse().apply(u, v);
            assert!((bx - x).abs() < 1e-9 && (by - y).abs() < 1e-9);
            let lifted = t.to_transform3().apply(&Point3::new(x, y, 1.5));
            assert!((lifted.x - u).abs() < 1e-9 && (lifted.y - v).abs() < 1e-9);
            assert!((lifted.z - 1.5).abs() < 1e-12);
            let back = project_to_plane(&t.to_transform3()).unwrap();
            let (u2, v2) = back.apply(x, y);
            assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
        }
    }

    #[test]
    fn world_to_grid_examples() {
        let g = GridSpec::new(-3.0, 2.0, -1.0, 0.2, 0.4, 64, 64, 8).unwrap();
        let o = g.world_to_grid(&Point3::new(-3.0, 2.0, -1.0));
        assert_eq!(o, [0.0, 0.0, 0.0]);
        let g0 = GridSpec::new(0.0, 0.0, 0.0, 0.2, 0.4, 64, 64, 8).unwrap();
        assert_eq!(g0.world_to_grid(&Point3::new(1.0, 0.0, 0.0))[0], 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-3.0..9.8),
                rng.random_range(2.0..14.8),
                rng.random_range(-1.0..2.2),
            );
            let back = g.grid_to_world(g.world_to_grid(&p));
            assert!((back - p).norm() < 1e-9);
            let (ix, iy, iz) = g.voxel_of(&p).unwrap();
            let c = g.voxel_center(ix, iy, iz);
            let idx = g.world_to_grid(&c);
            assert!((idx[0] - (ix as f64 + 0.5)).abs() < 1e-9);
            assert!((idx[1] - (iy as f64 + 0.5)).abs() < 1e-9);
            assert!((idx[2] - (iz as f64 + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn floor_convention_on_boundaries() {
        let g = GridSpec::new(0.0, 0.0, 0.0, 0.25, 0.5, 4, 4, 2).unwrap();
        assert_eq!(g.column_of(0.25, 0.5), Some((1, 2)));
        assert_eq!(g.column_of(1.0, 0.0), None);
        assert_eq!(g.column_of(-1e-12, 0.0), None);
        assert_eq!(g.voxel_of(&Point3::new(0.1, 0.1, 0.5)), Some((0, 0, 1)));
    }

    #[test]
    fn transform_cloud_examples() {
        let cloud = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 3.0, 1.0)];
        assert_eq!(transform_cloud(&cloud, &Transform3::identity()), cloud);
        let r = Transform3::from_yaw(FRAC_PI_2, Vector3::zeros());
        let out = transform_cloud(&cloud[..1], &r);
        assert!((out[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Point3> = (0..40)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) * 20.0)
            .collect();
        let t = random_pose(&mut rng);
        let moved = transform_cloud(&pts, &t);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = (pts[i] - pts[j]).norm();
                let d1 = (moved[i] - moved[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_kv_round_trip() {
        let g = GridSpec::new(-12.8, -6.4, -0.4, 0.2, 0.4, 128, 64, 8).unwrap();
        let kv = g.to_kv();
        let back = GridSpec::from_kv(|k| kv.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str()))
            .unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 0.0, 0.0, 0.0, 0.4, 4, 4, 4).is_err());
        assert!(GridSpec::new(0.0, 0.0, 0.0, 0.2, 0.4, 0, 4, 4).is_err());
    }
}
