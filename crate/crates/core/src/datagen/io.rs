//! On-disk scene layout: one directory per sequence holding a text manifest,
//! one point file per frame and optionally one ground-truth grid per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, GridSpec, Point3, Transform3};
use crate::voxel::PointCloud;

use super::{ground_truth, BoxState, BoxTrack, Frame, LabelConfig, SceneSequence};

const MANIFEST: &str = "manifest.txt";
const INDEX: &str = "index.txt";

fn points_name(i: usize) -> String {
    format!("frame_{i:04}.bin")
}

pub fn truth_name(i: usize) -> String {
    format!("gt_{i:04}.grid")
}

/// Little-endian f32 records `x y z intensity`.
pub fn write_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 * cloud.len());
    for (p, &i) in cloud.points.iter().zip(&cloud.intensity) {
        for v in [p.x, p.y, p.z, i] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format(
            path,
            "point file length is not a multiple of 16",
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        points.push(Point3::new(f(0), f(1), f(2)));
        intensity.push(f(3));
    }
    PointCloud::with_intensity(points, intensity)
}

fn manifest_text(scene: &SceneSequence) -> String {
    let mut s = String::from("# scene manifest\nversion = 1\n");
    writeln!(s, "frames = {}", scene.frames.len()).unwrap();
    for (k, v) in scene.grid.to_kv() {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s.push_str("# pose <frame> <timestamp> <3x4 row-major local-to-world>\n");
    for (i, f) in scene.frames.iter().enumerate() {
        write!(s, "pose {i} {}", fmt_f64(f.timestamp)).unwrap();
        for v in f.pose.to_row_major() {
            write!(s, " {}", fmt_f64(v)).unwrap();
        }
        s.push('\n');
    }
    s.push_str("# track <id> <shape> <frame> <cx cy cz> <l w h> <yaw> <vx vy>\n");
    for t in &scene.tracks {
        for (i, st) in t.states.iter().enumerate() {
            write!(s, "track {} {} {i}", t.id, t.shape).unwrap();
            let vals = [
                st.center.x,
                st.center.y,
                st.center.z,
                st.extents[0],
                st.extents[1],
                st.extents[2],
                st.yaw,
                st.velocity[0],
                st.velocity[1],
            ];
            for v in vals {
                write!(s, " {}", fmt_f64(v)).unwrap();
            }
            s.push('\n');
        }
    }
    s
}

/// Writes a scene directory. With `labels`, ground-truth grids are written
/// for every frame as well.
pub fn save_scene(dir: &Path, scene: &SceneSequence, labels: Option<&LabelConfig>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), manifest_text(scene))?;
    for (i, f) in scene.frames.iter().enumerate() {
        write_points(&dir.join(points_name(i)), &f.cloud)?;
        if let Some(cfg) = labels {
            ground_truth(scene, i, cfg).save(&dir.join(truth_name(i)))?;
        }
    }
    Ok(())
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::format(path, format!("bad number '{s}'")))
}

fn parse_usize(path: &Path, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::format(path, format!("bad integer '{s}'")))
}

pub fn load_scene(dir: &Path) -> Result<SceneSequence> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let mut kv: Vec<(String, String)> = Vec::new();
    let mut poses: Vec<(usize, f64, Transform3)> = Vec::new();
    let mut tracks: Vec<BoxTrack> = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "pose" => {
                if fields.len() != 15 {
                    return Err(Error::format(
                        &path,
                        format!("pose row has {} fields", fields.len()),
                    ));
                }
                let mut m = [0.0; 12];
                for (k, v) in fields[3..].iter().enumerate() {
                    m[k] = parse_f64(&path, v)?;
                }
                poses.push((
                    parse_usize(&path, fields[1])?,
                    parse_f64(&path, fields[2])?,
                    Transform3::from_row_major(&m)?,
                ));
            }
            "track" => {
                if fields.len() != 13 {
                    return Err(Error::format(
                        &path,
                        format!("track row has {} fields", fields.len()),
                    ));
                }
                let id: u32 = fields[1]
                    .parse()
                    .map_err(|_| Error::format(&path, "bad track id"))?;
                let shape = fields[2].parse()?;
                let frame = parse_usize(&path, fields[3])?;
                let v: Vec<f64> = fields[4..]
                    .iter()
                    .map(|s| parse_f64(&path, s))
                    .collect::<Result<_>>()?;
                let state = BoxState {
                    center: Point3::new(v[0], v[1], v[2]),
                    extents: [v[3], v[4], v[5]],
                    yaw: v[6],
                    velocity: [v[7], v[8]],
                };
                match tracks.iter_mut().find(|t| t.id == id) {
                    Some(t) if t.states.len() == frame => t.states.push(state),
                    Some(_) => {
                        return Err(Error::format(
                            &path,
                            format!("track {id} rows out of order"),
                        ))
                    }
                    None if frame == 0 => tracks.push(BoxTrack {
                        id,
                        shape,
                        states: vec![state],
                    }),
                    None => {
                        return Err(Error::format(
                            &path,
                            format!("track {id} starts at frame {frame}"),
                        ))
                    }
                }
            }
            _ => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::format(&path, format!("unparsable line '{line}'")))?;
                kv.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let count = parse_usize(
        &path,
        get("frames").ok_or_else(|| Error::format(&path, "missing frames"))?,
    )?;
    let grid = GridSpec::from_kv(get)?;
    if poses.len() != count || poses.iter().enumerate().any(|(i, p)| p.0 != i) {
        return Err(Error::format(&path, "pose rows do not match frame count"));
    }
    let mut frames = Vec::with_capacity(count);
    for (i, (_, timestamp, pose)) in poses.into_iter().enumerate() {
        frames.push(Frame {
            cloud: read_points(&dir.join(points_name(i)))?,
            pose,
            timestamp,
        });
    }
    let scene = SceneSequence {
        frames,
        tracks,
        grid,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Scene directories of a generated dataset with their split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<(Split, String)>,
}

impl DatasetIndex {
    /// First `floor(n * train_fraction)` scenes train, the rest validate.
    pub fn with_split(root: &Path, names: Vec<String>, train_fraction: f64) -> Self {
        let n_train = ((names.len() as f64) * train_fraction + 1e-9).floor() as usize;
        let entries = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                (
                    if i < n_train {
                        Split::Train
                    } else {
                        Split::Val
                    },
                    n,
                )
            })
            .collect();
        Self {
            root: root.to_path_buf(),
            entries,
        }
    }

    pub fn scenes(&self, split: Split) -> Vec<PathBuf> {
        self.entries
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, n)| self.root.join(n))
            .collect()
    }
}

pub fn write_dataset_index(index: &DatasetIndex) -> Result<()> {
    let mut s = String::from("# split scene\n");
    for (split, name) in &index.entries {
        writeln!(s, "{} {name}", split.as_str()).unwrap();
    }
    fs::write(index.root.join(INDEX), s)?;
    Ok(())
}

/// Reads `index.txt` from a dataset root.
pub fn read_dataset_index(root: &Path) -> Result<DatasetIndex> {
    let path = root.join(INDEX);
    let text = fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (split, name) = line
            .split_once(' ')
            .ok_or_else(|| Error::format(&path, format!("bad index line '{line}'")))?;
        let split = match split {
            "train" => Split::Train,
            "val" => Split::Val,
            other => return Err(Error::format(&path, format!("unknown split '{other}'"))),
        };
        entries.push((split, name.trim().to_string()));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
    })
}
