use std::f64::consts::{PI, TAU};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point3, Transform3};
use crate::voxel::PointCloud;

use super::{BoxState, BoxTrack, Frame, SceneSequence, ShapeKind, FRAME_DT};

/// Parameters of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub frames: usize,
    pub grid: GridSpec,
    pub movers_min: usize,
    pub movers_max: usize,
    /// Shapes drawn uniformly for movers.
    pub shapes: Vec<ShapeKind>,
    /// Mover speed range, m/s.
    pub mover_speed: (f64, f64),
    /// Mover yaw rate bound, rad/s; half of the movers drive straight.
    pub turn_rate_max: f64,
    /// Ego speed range, m/s.
    pub ego_speed: (f64, f64),
    pub ego_yaw_rate_max: f64,
    pub walls_max: usize,
    pub poles_max: usize,
    pub ground: bool,
    /// Surface samples per square meter before range thinning.
    pub density: f64,
    /// Range below which every surface sample is observed, m.
    pub reference_range: f64,
    pub dropout: f64,
    /// Standard deviation of point noise, m.
    pub noise: f64,
    /// Standard deviation of track-center noise, m, emulating detector error.
    pub label_jitter: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            frames: 10,
            grid: GridSpec::default(),
            movers_min: 1,
            movers_max: 8,
            shapes: vec![ShapeKind::Box],
            mover_speed: (1.5, 6.0),
            turn_rate_max: 0.3,
            ego_speed: (0.0, 5.0),
            ego_yaw_rate_max: 0.1,
            walls_max: 6,
            poles_max: 12,
            ground: true,
            density: 40.0,
            reference_range: 5.0,
            dropout: 0.1,
            noise: 0.01,
            label_jitter: 0.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.into()));
        self.grid.validate()?;
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if self.movers_min > self.movers_max {
            return bad("movers_min exceeds movers_max");
        }
        if self.movers_max > 0 && self.shapes.is_empty() {
            return bad("no mover shapes enabled");
        }
        for (name, (lo, hi)) in [
            ("mover_speed", self.mover_speed),
            ("ego_speed", self.ego_speed),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{name} range ({lo}, {hi}) is invalid"
                )));
            }
        }
        if !(self.turn_rate_max >= 0.0 && self.ego_yaw_rate_max >= 0.0) {
            return bad("yaw rate bounds must be non-negative");
        }
        if !(self.density > 0.0 && self.reference_range > 0.0) {
            return bad("density and reference range must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.noise >= 0.0 && self.label_jitter >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }

    fn half_extent(&self) -> f64 {
        0.5 * (self.grid.nx as f64 * self.grid.cell_size_xy)
            .min(self.grid.ny as f64 * self.grid.cell_size_xy)
    }
}

/// Planar unicycle motion; a static body has zero speed and turn rate.
#[derive(Debug, Clone, Copy)]
struct Motion {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    turn: f64,
}

impl Motion {
    fn at(&self, t: f64) -> (f64, f64, f64) {
        let heading = self.heading + self.turn * t;
        if self.turn.abs() < 1e-12 {
            let (s, c) = self.heading.sin_cos();
            (
                self.x + self.speed * t * c,
                self.y + self.speed * t * s,
                heading,
            )
        } else {
            let r = self.speed / self.turn;
            (
                self.x + r * (heading.sin() - self.heading.sin()),
                self.y - r * (heading.cos() - self.heading.cos()),
                heading,
            )
        }
    }

    fn velocity(&self, t: f64) -> [f64; 2] {
        let (s, c) = (self.heading + self.turn * t).sin_cos();
        [self.speed * c, self.speed * s]
    }
}

/// A surface sample attached to a body: all randomness is drawn once so that
/// an unchanged viewpoint reproduces the same points.
#[derive(Debug, Clone, Copy)]
struct Sample {
    edge: usize,
    u: f64,
    z: f64,
    jitter: [f64; 3],
    keep: f64,
    drop: f64,
}

#[derive(Debug, Clone)]
struct Body {
    extents: [f64; 3],
    outline: Vec<[f64; 2]>,
    samples: Vec<Sample>,
    motion: Motion,
}

impl Body {
    fn new(
        shape: ShapeKind,
        extents: [f64; 3],
        motion: Motion,
        z_low: f64,
        spec: &ScenarioSpec,
        noise: &Normal<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let outline = shape.outline(extents[0], extents[1]);
        let mut samples = Vec::new();
        let height = extents[2] - z_low;
        for edge in 0..outline.len() {
            let (a, b) = (outline[edge], outline[(edge + 1) % outline.len()]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let n = (len * height * spec.density).ceil() as usize;
            for _ in 0..n {
                samples.push(Sample {
                    edge,
                    u: rng.random(),
                    z: z_low + rng.random::<f64>() * height,
                    jitter: [noise.sample(rng), noise.sample(rng), noise.sample(rng)],
                    keep: rng.random(),
                    drop: rng.random(),
                });
            }
        }
        Self {
            extents,
            outline,
            samples,
            motion,
        }
    }

    fn radius(&self) -> f64 {
        0.5 * self.extents[0].hypot(self.extents[1])
    }
}

struct GroundSample {
    x: f64,
    y: f64,
    z: f64,
    keep: f64,
    drop: f64,
}

fn keep_probability(range: f64, reference: f64) -> f64 {
    (reference / range.max(1e-6)).powi(2).min(1.0)
}

fn draw_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn draw_symmetric(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

fn mover_extents(shape: ShapeKind, rng: &mut impl Rng) -> [f64; 3] {
    match shape {
        ShapeKind::Box => {
            let l = rng.random_range(0.8..4.8);
            let w = rng.random_range(0.6..2.0f64).min(l);
            [l, w, rng.random_range(1.2..2.0)]
        }
        ShapeKind::Disc => {
            let d = rng.random_range(0.6..2.0);
            [d, d, rng.random_range(1.0..1.8)]
        }
        ShapeKind::LShape => [
            rng.random_range(2.5..5.0),
            rng.random_range(1.5..2.5),
            rng.random_range(1.2..2.0),
        ],
    }
}

/// Angular resolution of the occlusion buffer.
const OCCLUSION_BINS: usize = 720;
/// Points this far behind another body's nearest surface are hidden, m.
const OCCLUSION_SLACK: f64 = 0.3;
/// Mover surfaces start above the ground to leave a clearance gap, m.
const MOVER_Z_LOW: f64 = 0.15;
/// Points beyond this range are never emitted, m.
const MAX_RANGE: f64 = 60.0;

/// Generates one scene: an ego vehicle driving through static clutter with
/// constant-velocity or gently turning movers.
pub fn generate_scene(spec: &ScenarioSpec, rng: &mut impl Rng) -> Result<SceneSequence> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise).expect("validated");
    let jitter = Normal::new(0.0, spec.label_jitter).expect("validated");
    let times: Vec<f64> = (0..spec.frames).map(|i| i as f64 * FRAME_DT).collect();
    let t_end = *times.last().expect("frames > 0");

    let ego = Motion {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        speed: draw_range(rng, spec.ego_speed),
        turn: draw_symmetric(rng, spec.ego_yaw_rate_max),
    };
    let ego_path: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let (x, y, _) = ego.at(t);
            (x, y)
        })
        .collect();

    let half = spec.half_extent();
    let spawn = 0.8 * half;
    let mut bodies: Vec<Body> = Vec::new();
    let mut tracks = Vec::new();
    let movers = rng.random_range(spec.movers_min..=spec.movers_max);
    for _ in 0..movers {
        let shape = *spec.shapes.choose(rng).expect("validated");
        let extents = mover_extents(shape, rng);
        let radius = 0.5 * extents[0].hypot(extents[1]);
        let speed = draw_range(rng, spec.mover_speed);
        let turn = if rng.random::<bool>() {
            draw_symmetric(rng, spec.turn_rate_max)
        } else {
            0.0
        };
        let heading = rng.random_range(-PI..PI);
        let mut placed = None;
        for _ in 0..100 {
            let m = Motion {
                x: rng.random_range(-spawn..spawn),
                y: rng.random_range(-spawn..spawn),
                heading,
                speed,
                turn,
            };
            let clear = times.iter().all(|&t| {
                let (x, y, _) = m.at(t);
                let (ex, ey, _) = ego.at(t);
                (x - ex).hypot(y - ey) > radius + 2.5
                    && bodies.iter().all(|b| {
                        let (bx, by, _) = b.motion.at(t);
                        (x - bx).hypot(y - by) > radius + b.radius() + 0.5
                    })
            });
            if clear {
                placed = Some(m);
                break;
            }
        }
        let Some(motion) = placed else { continue };
        let body = Body::new(shape, extents, motion, MOVER_Z_LOW, spec, &noise, rng);
        let id = tracks.len() as u32 + 1;
        tracks.push(BoxTrack {
            id,
            shape,
            states: times
                .iter()
                .map(|&t| {
                    let (x, y, yaw) = motion.at(t);
                    let (jx, jy) = if spec.label_jitter > 0.0 {
                        (jitter.sample(rng), jitter.sample(rng))
                    } else {
                        (0.0, 0.0)
                    };
                    BoxState {
                        center: Point3::new(x + jx, y + jy, 0.5 * extents[2]),
                        extents,
                        yaw,
                        velocity: motion.velocity(t),
                    }
                })
                .collect(),
        });
        bodies.push(body);
    }
    let num_movers = bodies.len();

    // static clutter around the driven area
    let (cx, cy) = ego_path[ego_path.len() / 2];
    let area = half + 2.0;
    let walls = rng.random_range(0..=spec.walls_max);
    let poles = rng.random_range(0..=spec.poles_max);
    for k in 0..walls + poles {
        let (shape, extents) = if k < walls {
            (
                ShapeKind::Box,
                [
                    rng.random_range(3.0..10.0),
                    0.2,
                    rng.random_range(2.0..3.0f64),
                ],
            )
        } else {
            let d: f64 = rng.random_range(0.2..0.4);
            (ShapeKind::Disc, [d, d, 3.0])
        };
        let radius = 0.5 * extents[0].hypot(extents[1]);
        let yaw = rng.random_range(-PI..PI);
        for _ in 0..50 {
            let (x, y) = (
                cx + rng.random_range(-area..area),
                cy + rng.random_range(-area..area),
            );
            let clear_ego = ego_path
                .iter()
                .all(|&(ex, ey)| (x - ex).hypot(y - ey) > radius + 2.5);
            let clear_bodies = bodies.iter().all(|b| {
                times.iter().all(|&t| {
                    let (bx, by, _) = b.motion.at(t);
                    (x - bx).hypot(y - by) > radius + b.radius() + 0.5
                })
            });
            if clear_ego && clear_bodies {
                let motion = Motion {
                    x,
                    y,
                    heading: yaw,
                    speed: 0.0,
                    turn: 0.0,
                };
                bodies.push(Body::new(shape, extents, motion, 0.0, spec, &noise, rng));
                break;
            }
        }
    }

    let mut ground = Vec::new();
    if spec.ground {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &ego_path {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let reach = half * std::f64::consts::SQRT_2 + 0.5;
        let (x0, x1, y0, y1) = (x0 - reach, x1 + reach, y0 - reach, y1 + reach);
        let count = ((x1 - x0) * (y1 - y0) * 0.25 * spec.density) as usize;
        for _ in 0..count {
            ground.push(GroundSample {
                x: rng.random_range(x0..x1),
                y: rng.random_range(y0..y1),
                z: noise.sample(rng),
                keep: rng.random(),
                drop: rng.random(),
            });
        }
    }

    let frames = times
        .iter()
        .map(|&t| {
            let (ex, ey, eyaw) = ego.at(t);
            let pose = Transform3::from_yaw(eyaw, Point3::new(ex, ey, 0.0));
            let cloud = render_frame(&bodies, &ground, (ex, ey), &pose, t, spec);
            Frame {
                cloud,
                pose,
                timestamp: t,
            }
        })
        .collect();
    log::debug!(
        "generated scene: {} movers, {} static bodies, {} ground samples, {:.1} s",
        num_movers,
        bodies.len() - num_movers,
        ground.len(),
        t_end
    );
    Ok(SceneSequence {
        frames,
        tracks,
        grid: spec.grid,
    })
}

fn render_frame(
    bodies: &[Body],
    ground: &[GroundSample],
    sensor: (f64, f64),
    pose: &Transform3,
    t: f64,
    spec: &ScenarioSpec,
) -> PointCloud {
    let bin_of = |x: f64, y: f64| {
        let a = (y - sensor.1).atan2(x - sensor.0).rem_euclid(TAU);
        ((a / TAU * OCCLUSION_BINS as f64) as usize).min(OCCLUSION_BINS - 1)
    };
    // (body, world point, range, bin) of every visible body sample
    let mut hits: Vec<(usize, Point3, f64, usize)> = Vec::new();
    let mut nearest: Vec<Vec<(usize, f64)>> = vec![Vec::new(); OCCLUSION_BINS];
    for (bi, body) in bodies.iter().enumerate() {
        let (bx, by, yaw) = body.motion.at(t);
        let (s, c) = yaw.sin_cos();
        let n = body.outline.len();
        for sample in &body.samples {
            let a = body.outline[sample.edge];
            let b = body.outline[(sample.edge + 1) % n];
            let (ox, oy) = (
                a[0] + sample.u * (b[0] - a[0]),
                a[1] + sample.u * (b[1] - a[1]),
            );
            let (wx, wy) = (bx + c * ox - s * oy, by + s * ox + c * oy);
            // outward normal of a counter-clockwise edge, rotated to world
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let (nx, ny) = (c * dy + s * dx, s * dy - c * dx);
            if nx * (sensor.0 - wx) + ny * (sensor.1 - wy) <= 0.0 {
                continue;
            }
            let range = (wx - sensor.0).hypot(wy - sensor.1);
            if range > MAX_RANGE
                || sample.keep >= keep_probability(range, spec.reference_range)
                || sample.drop < spec.dropout
            {
                continue;
            }
            let p = Point3::new(
                wx + sample.jitter[0],
                wy + sample.jitter[1],
                sample.z + sample.jitter[2],
            );
            let bin = bin_of(wx, wy);
            match nearest[bin].iter_mut().find(|e| e.0 == bi) {
                Some(e) => e.1 = e.1.min(range),
                None => nearest[bin].push((bi, range)),
            }
            hits.push((bi, p, range, bin));
        }
    }
    let inv = pose.inverse();
    let mut points = Vec::with_capacity(hits.len() + ground.len() / 4);
    for (bi, p, range, bin) in hits {
        let hidden = nearest[bin]
            .iter()
            .any(|&(other, r)| other != bi && r < range - OCCLUSION_SLACK);
        if !hidden {
            points.push(inv.apply(&p));
        }
    }
    // the ground neither occludes nor is occluded
    for g in ground {
        let range = (g.x - sensor.0).hypot(g.y - sensor.1);
        if range > MAX_RANGE
            || g.keep >= keep_probability(range, spec.reference_range)
            || g.drop < spec.dropout
        {
            continue;
        }
        points.push(inv.apply(&Point3::new(g.x, g.y, g.z)));
    }
    // stored precision of the point file format
    for p in &mut points {
        *p = p.map(|v| v as f32 as f64);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{point_flow_truth, LabelConfig};
    use crate::geometry::{project_to_plane, relative_transform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> ScenarioSpec {
        ScenarioSpec {
            frames: 4,
            grid: GridSpec::centered(64, 0.2),
            movers_min: 0,
            movers_max: 0,
            ego_speed: (0.0, 0.0),
            ego_yaw_rate_max: 0.0,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ScenarioSpec {
            movers_min: 3,
            movers_max: 2,
            ..ScenarioSpec::default()
        };
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        s = ScenarioSpec {
            shapes: vec![],
            ..ScenarioSpec::default()
        };
        assert!(s.validate().is_err());
        s = ScenarioSpec {
            dropout: 1.0,
            ..ScenarioSpec::default()
        };
        assert!(s.validate().is_err());
        s = ScenarioSpec {
            frames: 0,
            ..ScenarioSpec::default()
        };
        assert!(generate_scene(&s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn static_world_static_ego_repeats_clouds() {
        let scene = generate_scene(&quiet(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(scene.tracks.is_empty());
        assert!(scene.frames[0].cloud.len() > 100);
        for f in &scene.frames[1..] {
            assert_eq!(f.cloud, scene.frames[0].cloud);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = ScenarioSpec {
            frames: 3,
            ..ScenarioSpec::default()
        };
        let a = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn timestamps_and_tracks_are_consistent() {
        let scene =
            generate_scene(&ScenarioSpec::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        scene.validate().unwrap();
        assert_eq!(scene.len(), 10);
        for (i, f) in scene.frames.iter().enumerate() {
            assert!((f.timestamp - 0.1 * i as f64).abs() < 1e-12);
        }
        assert!(!scene.tracks.is_empty() && scene.tracks.len() <= 8);
    }

    #[test]
    fn single_mover_moves_a_tenth_per_frame() {
        let spec = ScenarioSpec {
            movers_min: 1,
            movers_max: 1,
            mover_speed: (1.0, 1.0),
            turn_rate_max: 0.0,
            ..quiet()
        };
        let scene = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let states = &scene.tracks[0].states;
        for w in states.windows(2) {
            assert!(((w[1].center - w[0].center).norm() - 0.1).abs() < 1e-12);
        }
        // the mover's points travel with it
        let cfg = LabelConfig::default();
        let (f0, f1) = (&scene.frames[0].cloud, &scene.frames[1].cloud);
        let flow = point_flow_truth(&scene, 0, &cfg);
        let moving: Vec<Point3> = f0
            .points
            .iter()
            .zip(&flow)
            .filter(|(_, f)| f[0] != 0.0 || f[1] != 0.0)
            .map(|(p, f)| p + Point3::new(f[0], f[1], 0.0))
            .collect();
        assert!(moving.len() > 20);
        let found = moving
            .iter()
            .filter(|p| f1.points.iter().any(|q| (*p - q).norm() < 1e-5))
            .count();
        assert!(
            found as f64 >= 0.9 * moving.len() as f64,
            "{found}/{}",
            moving.len()
        );
    }

    #[test]
    fn ego_speed_sets_relative_translation() {
        let spec = ScenarioSpec {
            ego_speed: (5.0, 5.0),
            ..quiet()
        };
        let scene = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let rel = relative_transform(&scene.frames[0].pose, &scene.frames[1].pose);
        assert!((rel.translation().norm() - 0.5).abs() < 1e-12);
        let planar = project_to_plane(&rel).unwrap();
        assert!(planar.yaw.abs() < 1e-12);
    }

    #[test]
    fn static_points_follow_relative_motion() {
        let spec = ScenarioSpec {
            ego_speed: (4.0, 4.0),
            ego_yaw_rate_max: 0.2,
            noise: 0.0,
            ground: false,
            ..quiet()
        };
        let scene = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let rel = relative_transform(&scene.frames[0].pose, &scene.frames[1].pose);
        let next = &scene.frames[1].cloud.points;
        let moved: Vec<Point3> = scene.frames[0]
            .cloud
            .points
            .iter()
            .map(|p| rel.apply(p))
            .collect();
        let matched = moved
            .iter()
            .filter(|p| next.iter().any(|q| (*p - q).norm() < 1e-5))
            .count();
        // range thinning and visibility changes drop a few samples
        assert!(
            matched as f64 > 0.8 * moved.len() as f64,
            "{matched}/{}",
            moved.len()
        );
    }

    #[test]
    fn shapes_are_drawn_from_spec() {
        let spec = ScenarioSpec {
            shapes: vec![ShapeKind::Disc, ShapeKind::LShape],
            movers_min: 6,
            ..ScenarioSpec::default()
        };
        let scene = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(scene.tracks.iter().all(|t| t.shape != ShapeKind::Box));
        assert!(scene.tracks.iter().any(|t| t.shape == ShapeKind::Disc));
    }
}
