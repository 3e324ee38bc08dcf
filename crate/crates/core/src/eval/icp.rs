use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Transform3};

use super::PointFlow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondences farther apart than this are dropped, m.
    pub max_distance: f64,
    /// Stop once the transform moves less than this between iterations.
    pub tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_distance: 1.0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: Transform3,
    pub iterations: usize,
    pub converged: bool,
    /// Target index matched to each source point after the final iteration,
    /// `None` when rejected.
    pub matches: Vec<Option<usize>>,
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn rigid_fit(src: &[Point3], dst: &[Point3]) -> Result<Transform3> {
    if src.len() != dst.len() {
        return Err(Error::PointSetMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate);
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 1e-12 * s[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate);
    }
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    Transform3::new(r, t)
}

fn change(a: &Transform3, b: &Transform3) -> f64 {
    (a.translation() - b.translation()).norm() + (a.rotation() - b.rotation()).norm()
}

/// Point-to-point ICP from the identity: nearest-neighbour matching,
/// distance rejection and an SVD fit per iteration.
pub fn icp(source: &[Point3], target: &[Point3], params: &IcpParams) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Degenerate);
    }
    let entries: Vec<[f64; 3]> = target.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree =
        ImmutableKdTree::<f64, 3>::new_from_slice(&entries).map_err(|_| Error::Degenerate)?;
    let max_sq = params.max_distance * params.max_distance;
    let mut transform = Transform3::identity();
    let mut matches = vec![None; source.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let mut src = Vec::with_capacity(source.len());
        let mut dst = Vec::with_capacity(source.len());
        for (i, p) in source.iter().enumerate() {
            let q = transform.apply(p);
            let nn = tree
                .query(&[q.x, q.y, q.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute();
            let j = nn.item as usize;
            if nn.distance <= max_sq {
                matches[i] = Some(j);
                src.push(*p);
                dst.push(target[j]);
            } else {
                matches[i] = None;
            }
        }
        let next = rigid_fit(&src, &dst)?;
        let delta = change(&next, &transform);
        transform = next;
        if delta < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform,
        iterations,
        converged,
        matches,
    })
}

/// Flow of every `a` point under the single rigid motion aligning `a` to `b`.
pub fn icp_global(a: &[Point3], b: &[Point3], params: &IcpParams) -> Result<PointFlow> {
    let r = icp(a, b, params)?;
    let flow = a.iter().map(|p| r.transform.apply(p) - p).collect();
    PointFlow::new(a.to_vec(), flow)
}

/// Flow of every `a` point towards its final ICP match in `b`; points
/// without a match follow the rigid motion.
pub fn icp_pointwise(a: &[Point3], b: &[Point3], params: &IcpParams) -> Result<PointFlow> {
    let r = icp(a, b, params)?;
    let flow = a
        .iter()
        .zip(&r.matches)
        .map(|(p, m)| match m {
            Some(j) => b[*j] - p,
            None => r.transform.apply(p) - p,
        })
        .collect();
    PointFlow::new(a.to_vec(), flow)
}
