//! End-to-end commands: generate, train, evaluate, infer, render, bench.
//!
//! Every command validates its configuration before touching the disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::datagen::{
    generate_scene, load_scene, read_dataset_index, save_scene, write_dataset_index, DatasetIndex,
    SceneSequence, Split,
};
use crate::error::{Error, Result};
use crate::eval::{benchmark, evaluate_scene, metrics_csv, summarize, BenchReport, MetricRow};
use crate::geometry::GridSpec;
use crate::model::{train, MotionNet, TrainReport};
use crate::motion::{mask_velocity, MotionGrid};
use crate::nn::{Checkpoint, Real};
use crate::postprocess::{
    boxes_csv, cells_to_vectors, clusters_to_boxes, dbscan, DbscanParams, DynamicBox,
};
use crate::voxel::PointCloud;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BENCH_FILE: &str = "bench.csv";

pub fn scene_name(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Generator for scene `i`: the master seed with stream `i`, so scenes are
/// independent of how many others are generated.
pub fn scene_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Writes `cfg.scenes` scenes with labels and a train/val index under `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<DatasetIndex> {
    let cfg = cfg.resolve()?;
    let scenes: Vec<SceneSequence> = (0..cfg.scenes)
        .map(|i| generate_scene(&cfg.scenario, &mut scene_rng(cfg.seed, i)))
        .collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let mut names = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = scene_name(i);
        save_scene(&out.join(&name), scene, Some(&cfg.labels))?;
        names.push(name);
    }
    let index = DatasetIndex::with_split(out, names, cfg.split);
    write_dataset_index(&index)?;
    log::info!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(index)
}

pub fn load_split(data: &Path, split: Split) -> Result<Vec<(String, SceneSequence)>> {
    let index = read_dataset_index(data)?;
    index
        .scenes(split)
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, load_scene(&p)?))
        })
        .collect()
}

fn check_grid(cfg: &RunConfig, scenes: &[(String, SceneSequence)]) -> Result<()> {
    for (name, s) in scenes {
        if s.grid != cfg.model.grid {
            return Err(Error::Config(format!(
                "scene {name} uses a {}x{} grid, the model a {}x{} one",
                s.grid.nx, s.grid.ny, cfg.model.grid.nx, cfg.model.grid.ny
            )));
        }
    }
    Ok(())
}

fn train_as<F: Real>(cfg: &RunConfig, scenes: &[SceneSequence], out: &Path) -> Result<TrainReport> {
    let mut net = MotionNet::<F>::new(cfg.model.clone())?;
    log::info!(
        "training {} ({} parameters) on {} scenes",
        cfg.model.variant,
        net.num_parameters(),
        scenes.len()
    );
    let report = train(&mut net, scenes, &cfg.train)?;
    fs::create_dir_all(out)?;
    net.to_checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    fs::write(out.join(MODEL_CONFIG_FILE), cfg.model_text())?;
    fs::write(out.join(RUN_CONFIG_FILE), cfg.to_text())?;
    fs::write(out.join(LOSS_FILE), report.to_csv())?;
    Ok(report)
}

/// Trains on the training split and writes checkpoint, architecture and
/// loss curve to `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainReport> {
    let cfg = cfg.resolve()?;
    let scenes = load_split(data, Split::Train)?;
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_grid(&cfg, &scenes)?;
    let scenes: Vec<SceneSequence> = scenes.into_iter().map(|(_, s)| s).collect();
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &scenes, out),
        Precision::F64 => train_as::<f64>(&cfg, &scenes, out),
    }
}

/// Resolves a checkpoint argument: a file, or a directory holding one.
/// Returns the checkpoint path and the config with the stored architecture
/// applied.
pub fn locate_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<(PathBuf, RunConfig)> {
    let path = if checkpoint.is_dir() {
        checkpoint.join(CHECKPOINT_FILE)
    } else {
        checkpoint.to_path_buf()
    };
    if !path.is_file() {
        return Err(Error::MissingCheckpoint(path));
    }
    let mut cfg = cfg.clone();
    let arch = path.with_file_name(MODEL_CONFIG_FILE);
    if arch.is_file() {
        cfg.apply_text(&fs::read_to_string(arch)?)?;
    }
    Ok((path, cfg.resolve()?))
}

fn load_net<F: Real>(cfg: &RunConfig, path: &Path) -> Result<MotionNet<F>> {
    let mut net = MotionNet::<F>::new(cfg.model.clone())?;
    net.load_checkpoint(&Checkpoint::load(path)?)?;
    Ok(net)
}

fn eval_as<F: Real>(
    cfg: &RunConfig,
    ckpt: &Path,
    scenes: &[(String, SceneSequence)],
) -> Result<Vec<MetricRow>> {
    let net = load_net::<F>(cfg, ckpt)?;
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for (name, scene) in scenes {
        let samples = evaluate_scene(Some(&net), scene, &cfg.eval)?;
        rows.extend(samples.iter().map(|s| MetricRow::from_sample(name, s)));
        pooled.extend(samples);
    }
    rows.extend(summarize(&pooled));
    Ok(rows)
}

/// Evaluates a checkpoint and the configured baselines on the validation
/// split; writes per-scene and pooled rows to `out/metrics.csv`.
pub fn cmd_eval(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<Vec<MetricRow>> {
    let (ckpt, cfg) = locate_checkpoint(cfg, checkpoint)?;
    let scenes = load_split(data, Split::Val)?;
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_grid(&cfg, &scenes)?;
    let rows = match cfg.precision {
        Precision::F32 => eval_as::<f32>(&cfg, &ckpt, &scenes)?,
        Precision::F64 => eval_as::<f64>(&cfg, &ckpt, &scenes)?,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join(METRICS_FILE), metrics_csv(&rows))?;
    Ok(rows)
}

fn infer_as<F: Real>(cfg: &RunConfig, ckpt: &Path, scene: &SceneSequence) -> Result<MotionGrid> {
    let net = load_net::<F>(cfg, ckpt)?;
    let p = net.config.seq_len.min(scene.len());
    let window = scene.window(scene.len().saturating_sub(1), p)?;
    net.predict(&window.frames)?.to_motion_grid()
}

/// Predicts the last frame of a scene directory. Writes the raw prediction
/// grid and the boxes of its dynamic cells.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    out: &Path,
) -> Result<(MotionGrid, Vec<DynamicBox>)> {
    let (ckpt, cfg) = locate_checkpoint(cfg, checkpoint)?;
    let scene = load_scene(scene_dir)?;
    check_grid(&cfg, &[(scene_dir.display().to_string(), scene.clone())])?;
    let pred = match cfg.precision {
        Precision::F32 => infer_as::<f32>(&cfg, &ckpt, &scene)?,
        Precision::F64 => infer_as::<f64>(&cfg, &ckpt, &scene)?,
    };
    let g = scene.grid;
    let vectors = cells_to_vectors(&pred, &g, cfg.eval.tau)?;
    let labels = dbscan(&vectors, &DbscanParams::default())?;
    let cloud = &scene.frames[scene.len() - 1].cloud;
    let boxes = clusters_to_boxes(&labels, &vectors, cloud, &g)?;
    fs::create_dir_all(out)?;
    pred.save(&out.join("prediction.grid"))?;
    mask_velocity(&pred, cfg.eval.tau)?.save(&out.join("masked.grid"))?;
    fs::write(out.join("boxes.csv"), boxes_csv(&boxes))?;
    Ok((pred, boxes))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Cells holding at least one point inside the grid volume.
pub fn occupancy(cloud: &PointCloud, g: &GridSpec) -> Vec<bool> {
    let mut occ = vec![false; g.num_cells()];
    for p in &cloud.points {
        if let Some((ix, iy, _)) = g.voxel_of(p) {
            occ[g.cell_index(ix, iy)] = true;
        }
    }
    occ
}

/// Binary PPM of a velocity grid: hue encodes direction, saturation speed
/// relative to `v_max`. Lit cells are the `occupied` ones when given, else
/// the known cells of a truth grid, else cells with non-zero velocity. The
/// top image row is the largest `y`.
pub fn render_ppm(grid: &MotionGrid, occupied: Option<&[bool]>, v_max: f64) -> Vec<u8> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    for row in 0..ny {
        let iy = ny - 1 - row;
        for ix in 0..nx {
            let c = iy * nx + ix;
            let [vx, vy] = grid.velocity_at(c);
            let speed = vx.hypot(vy);
            let lit = match (occupied, &grid.known) {
                (Some(occ), _) => occ.get(c).copied().unwrap_or(false),
                (None, Some(_)) => grid.is_known(c),
                (None, None) => speed > 0.0,
            };
            let rgb = if lit {
                let hue = vy.atan2(vx).to_degrees().rem_euclid(360.0);
                hsv_to_rgb(hue, (speed / v_max).min(1.0), 1.0)
            } else {
                [0, 0, 0]
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

/// What to draw: a stored grid, or a model prediction on the last frame of
/// a scene, lit where that frame is occupied.
#[derive(Debug, Clone)]
pub enum RenderSource {
    Grid(PathBuf),
    Model { checkpoint: PathBuf, scene: PathBuf },
}

pub fn cmd_render(cfg: &RunConfig, source: &RenderSource, out: &Path) -> Result<()> {
    let cfg = cfg.resolve()?;
    let img = match source {
        RenderSource::Grid(path) => render_ppm(&MotionGrid::load(path)?, None, cfg.v_max),
        RenderSource::Model { checkpoint, scene } => {
            let (ckpt, cfg) = locate_checkpoint(&cfg, checkpoint)?;
            let scene = load_scene(scene)?;
            check_grid(&cfg, std::slice::from_ref(&(String::new(), scene.clone())))?;
            let pred = match cfg.precision {
                Precision::F32 => infer_as::<f32>(&cfg, &ckpt, &scene)?,
                Precision::F64 => infer_as::<f64>(&cfg, &ckpt, &scene)?,
            };
            let masked = mask_velocity(&pred, cfg.eval.tau)?;
            let occ = occupancy(&scene.frames[scene.len() - 1].cloud, &scene.grid);
            render_ppm(&masked, Some(&occ), cfg.v_max)
        }
    };
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, img)?;
    Ok(())
}

fn bench_as<F: Real>(cfg: &RunConfig, scenes: &[SceneSequence]) -> Result<BenchReport> {
    let net = MotionNet::<F>::new(cfg.model.clone())?;
    benchmark(&net, scenes, cfg.bench_reps, cfg.bench_warmup)
}

/// Times forward passes of a freshly initialised model on generated scenes
/// and writes `out/bench.csv`.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<BenchReport> {
    let cfg = cfg.resolve()?;
    let mut spec = cfg.scenario.clone();
    spec.frames = spec.frames.max(cfg.model.seq_len);
    let scenes: Vec<SceneSequence> = (0..cfg.bench_scenes)
        .map(|i| generate_scene(&spec, &mut scene_rng(cfg.seed, i)))
        .collect::<Result<_>>()?;
    let report = match cfg.precision {
        Precision::F32 => bench_as::<f32>(&cfg, &scenes)?,
        Precision::F64 => bench_as::<f64>(&cfg, &scenes)?,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join(BENCH_FILE), report.to_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn tiny() -> RunConfig {
        RunConfig::from_text(
            "grid.cells = 16\ngrid.cell_size = 0.5\nscenario.frames = 3\ndata.scenes = 5\n\
             model.seq_len = 2\nmodel.vfe = 4,4\nmodel.features = 4\ntrain.steps = 2\ntrain.batch = 1\n\
             train.log_every = 0\nbench.reps = 2\nbench.warmup = 0",
        )
        .unwrap()
    }

    #[test]
    fn gen_train_eval_infer() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let index = cmd_gen(&tiny(), &data).unwrap();
        assert_eq!(index.scenes(Split::Train).len(), 4);
        assert_eq!(index.scenes(Split::Val).len(), 1);

        let run = dir.path().join("run");
        let report = cmd_train(&tiny(), &data, &run).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(run.join(CHECKPOINT_FILE).is_file());

        // the stored architecture wins over the caller's config
        let mut other = tiny();
        other.set("model.features", "9").unwrap();
        let rows = cmd_eval(&other, &data, &run, dir.path()).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(fs::read_to_string(dir.path().join(METRICS_FILE))
            .unwrap()
            .contains("all,rnn_odo,no_road"));

        let (pred, _) = cmd_infer(
            &tiny(),
            &run,
            &index.scenes(Split::Val)[0],
            &dir.path().join("inf"),
        )
        .unwrap();
        assert_eq!(pred.nx(), 16);
        let size = "P6\n16 16\n255\n".len() + 16 * 16 * 3;
        let grid = RenderSource::Grid(dir.path().join("inf/prediction.grid"));
        cmd_render(&tiny(), &grid, &dir.path().join("p.ppm")).unwrap();
        assert_eq!(fs::read(dir.path().join("p.ppm")).unwrap().len(), size);
        let model = RenderSource::Model {
            checkpoint: run.clone(),
            scene: index.scenes(Split::Val)[0].clone(),
        };
        cmd_render(&tiny(), &model, &dir.path().join("m.ppm")).unwrap();
        assert_eq!(fs::read(dir.path().join("m.ppm")).unwrap().len(), size);

        assert!(matches!(
            cmd_eval(&tiny(), &data, &dir.path().join("missing"), dir.path()),
            Err(Error::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn zero_scenes_give_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.scenes = 0;
        let index = cmd_gen(&cfg, dir.path()).unwrap();
        assert!(index.entries.is_empty());
        assert!(matches!(
            cmd_train(&cfg, dir.path(), dir.path()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let mut cfg = tiny();
        cfg.scenario.movers_min = 9;
        cfg.scenario.movers_max = 1;
        assert!(cmd_gen(&cfg, &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn gen_is_reproducible_and_split_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.scenes = 20;
        cfg.scenario.frames = 2;
        let a = cmd_gen(&cfg, &dir.path().join("a")).unwrap();
        cmd_gen(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(a.scenes(Split::Train).len(), 16);
        assert_eq!(a.scenes(Split::Val).len(), 4);
        for name in [
            "scene_0007/manifest.txt",
            "scene_0007/frame_0001.bin",
            "index.txt",
        ] {
            assert_eq!(
                fs::read(dir.path().join("a").join(name)).unwrap(),
                fs::read(dir.path().join("b").join(name)).unwrap()
            );
        }
    }

    fn pixel(img: &[u8], nx: usize, row: usize, col: usize) -> [u8; 3] {
        let header = img.len() - nx * nx * 3;
        let i = header + (row * nx + col) * 3;
        [img[i], img[i + 1], img[i + 2]]
    }

    #[test]
    fn render_colours() {
        let mut v = Tensor::zeros(&[2, 2, 2]);
        let zero = MotionGrid::prediction(v.clone(), Tensor::zeros(&[1, 2, 2])).unwrap();
        let img = render_ppm(&zero, None, 10.0);
        assert!(img.ends_with(&[0; 12]));
        // cell (0, 0) sits in the bottom-left pixel
        v.data_mut()[0] = 10.0;
        v.data_mut()[4 + 1] = 10.0;
        let g = MotionGrid::prediction(v, Tensor::zeros(&[1, 2, 2])).unwrap();
        let img = render_ppm(&g, None, 10.0);
        assert_eq!(pixel(&img, 2, 1, 0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(90.0, 1.0, 1.0), [128, 255, 0]);
        assert_eq!(pixel(&img, 2, 1, 1), [128, 255, 0]);
        assert_eq!(hsv_to_rgb(0.0, 0.0, 1.0), [255, 255, 255]);
        // an occupancy mask lights static cells white and hides the rest
        let img = render_ppm(&g, Some(&[false, false, true, false]), 10.0);
        assert_eq!(pixel(&img, 2, 0, 0), [255, 255, 255]);
        assert_eq!(pixel(&img, 2, 1, 0), [0, 0, 0]);
    }
}
