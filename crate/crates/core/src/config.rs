//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::datagen::{LabelConfig, ScenarioSpec, ShapeKind};
use crate::error::{Error, Result};
use crate::eval::{ApScore, EvalConfig, Method};
use crate::geometry::GridSpec;
use crate::model::{ModelConfig, TrainConfig, Variant};
use crate::nn::LrSchedule;

/// Arithmetic used for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision '{s}'"))),
        }
    }
}

/// Every tunable of the pipeline. Grid, seed and label settings are written
/// once here and copied into the per-stage configs by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Scenes written by `gen`.
    pub scenes: usize,
    /// Fraction of generated scenes used for training.
    pub split: f64,
    pub grid_cells: usize,
    pub grid_cell_size: f64,
    pub scenario: ScenarioSpec,
    pub labels: LabelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Speed rendered at full saturation, m/s.
    pub v_max: f64,
    pub bench_reps: usize,
    pub bench_warmup: usize,
    pub bench_scenes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            scenes: 20,
            split: 0.8,
            grid_cells: 128,
            grid_cell_size: 0.2,
            scenario: ScenarioSpec::default(),
            labels: LabelConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            v_max: 10.0,
            bench_reps: 20,
            bench_warmup: 2,
            bench_scenes: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value '{value}' for {key}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let s = &mut self.scenario;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = value.parse()?,
            "data.scenes" => self.scenes = parse(key, value)?,
            "data.split" => self.split = parse(key, value)?,
            "grid.cells" => self.grid_cells = parse(key, value)?,
            "grid.cell_size" => self.grid_cell_size = parse(key, value)?,
            "scenario.frames" => s.frames = parse(key, value)?,
            "scenario.movers_min" => s.movers_min = parse(key, value)?,
            "scenario.movers_max" => s.movers_max = parse(key, value)?,
            "scenario.shapes" => s.shapes = parse_list::<ShapeKind>(key, value)?,
            "scenario.mover_speed_min" => s.mover_speed.0 = parse(key, value)?,
            "scenario.mover_speed_max" => s.mover_speed.1 = parse(key, value)?,
            "scenario.turn_rate_max" => s.turn_rate_max = parse(key, value)?,
            "scenario.ego_speed_min" => s.ego_speed.0 = parse(key, value)?,
            "scenario.ego_speed_max" => s.ego_speed.1 = parse(key, value)?,
            "scenario.ego_yaw_rate_max" => s.ego_yaw_rate_max = parse(key, value)?,
            "scenario.walls_max" => s.walls_max = parse(key, value)?,
            "scenario.poles_max" => s.poles_max = parse(key, value)?,
            "scenario.ground" => s.ground = parse_bool(key, value)?,
            "scenario.density" => s.density = parse(key, value)?,
            "scenario.reference_range" => s.reference_range = parse(key, value)?,
            "scenario.dropout" => s.dropout = parse(key, value)?,
            "scenario.noise" => s.noise = parse(key, value)?,
            "scenario.label_jitter" => s.label_jitter = parse(key, value)?,
            "labels.theta" => self.labels.theta = parse(key, value)?,
            "labels.margin" => self.labels.margin = parse(key, value)?,
            "labels.ground_clearance" => self.labels.ground_clearance = parse(key, value)?,
            "model.variant" => self.model.variant = value.parse::<Variant>()?,
            "model.seq_len" => self.model.seq_len = parse(key, value)?,
            "model.alpha" => self.model.alpha = parse(key, value)?,
            "model.beta" => self.model.beta = parse(key, value)?,
            "model.vfe" => self.model.channels.vfe = parse_list(key, value)?,
            "model.features" => self.model.channels.features = parse(key, value)?,
            "model.seg_occupied_only" => self.model.seg_occupied_only = parse_bool(key, value)?,
            "train.steps" => self.train.steps = parse(key, value)?,
            "train.batch" => self.train.batch = parse(key, value)?,
            "train.lr" => self.train.schedule.base = parse(key, value)?,
            "train.lr_decay" => self.train.schedule.factor = parse(key, value)?,
            "train.lr_decay_every" => self.train.schedule.every = parse(key, value)?,
            "train.weight_decay" => self.train.adam.weight_decay = parse(key, value)?,
            "train.augment" => self.train.augment = parse_bool(key, value)?,
            "train.max_angle" => self.train.max_angle = parse(key, value)?,
            "train.scale_min" => self.train.scale_range.0 = parse(key, value)?,
            "train.scale_max" => self.train.scale_range.1 = parse(key, value)?,
            "train.log_every" => self.train.log_every = parse(key, value)?,
            "eval.tau" => self.eval.tau = parse(key, value)?,
            "eval.baselines" => self.eval.baselines = parse_list::<Method>(key, value)?,
            "eval.ap_score" => self.eval.ap_score = value.parse::<ApScore>()?,
            "render.v_max" => self.v_max = parse(key, value)?,
            "bench.reps" => self.bench_reps = parse(key, value)?,
            "bench.warmup" => self.bench_warmup = parse(key, value)?,
            "bench.scenes" => self.bench_scenes = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values. Blank lines and
    /// `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    fn model_lines(&self, out: &mut String) {
        let m = &self.model;
        let _ = writeln!(out, "grid.cells = {}", self.grid_cells);
        let _ = writeln!(out, "grid.cell_size = {}", self.grid_cell_size);
        let _ = writeln!(out, "model.variant = {}", m.variant);
        let _ = writeln!(out, "model.seq_len = {}", m.seq_len);
        let _ = writeln!(out, "model.alpha = {}", m.alpha);
        let _ = writeln!(out, "model.beta = {}", m.beta);
        let _ = writeln!(out, "model.vfe = {}", join(&m.channels.vfe));
        let _ = writeln!(out, "model.features = {}", m.channels.features);
        let _ = writeln!(out, "model.seg_occupied_only = {}", m.seg_occupied_only);
    }

    /// The settings that fix a network's architecture, for storing next to
    /// a checkpoint.
    pub fn model_text(&self) -> String {
        let mut out = String::new();
        self.model_lines(&mut out);
        out
    }

    /// Every setting, in a form [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("precision", self.precision.as_str().into());
        kv("data.scenes", self.scenes.to_string());
        kv("data.split", self.split.to_string());
        kv("scenario.frames", s.frames.to_string());
        kv("scenario.movers_min", s.movers_min.to_string());
        kv("scenario.movers_max", s.movers_max.to_string());
        kv("scenario.shapes", join(&s.shapes));
        kv("scenario.mover_speed_min", s.mover_speed.0.to_string());
        kv("scenario.mover_speed_max", s.mover_speed.1.to_string());
        kv("scenario.turn_rate_max", s.turn_rate_max.to_string());
        kv("scenario.ego_speed_min", s.ego_speed.0.to_string());
        kv("scenario.ego_speed_max", s.ego_speed.1.to_string());
        kv("scenario.ego_yaw_rate_max", s.ego_yaw_rate_max.to_string());
        kv("scenario.walls_max", s.walls_max.to_string());
        kv("scenario.poles_max", s.poles_max.to_string());
        kv("scenario.ground", s.ground.to_string());
        kv("scenario.density", s.density.to_string());
        kv("scenario.reference_range", s.reference_range.to_string());
        kv("scenario.dropout", s.dropout.to_string());
        kv("scenario.noise", s.noise.to_string());
        kv("scenario.label_jitter", s.label_jitter.to_string());
        kv("labels.theta", self.labels.theta.to_string());
        kv("labels.margin", self.labels.margin.to_string());
        kv(
            "labels.ground_clearance",
            self.labels.ground_clearance.to_string(),
        );
        kv("train.steps", t.steps.to_string());
        kv("train.batch", t.batch.to_string());
        kv("train.lr", t.schedule.base.to_string());
        kv("train.lr_decay", t.schedule.factor.to_string());
        kv("train.lr_decay_every", t.schedule.every.to_string());
        kv("train.weight_decay", t.adam.weight_decay.to_string());
        kv("train.augment", t.augment.to_string());
        kv("train.max_angle", t.max_angle.to_string());
        kv("train.scale_min", t.scale_range.0.to_string());
        kv("train.scale_max", t.scale_range.1.to_string());
        kv("train.log_every", t.log_every.to_string());
        kv("eval.tau", self.eval.tau.to_string());
        kv("eval.baselines", join(&self.eval.baselines));
        kv(
            "eval.ap_score",
            match self.eval.ap_score {
                ApScore::Masked => "masked".into(),
                ApScore::Raw => "raw".into(),
            },
        );
        kv("render.v_max", self.v_max.to_string());
        kv("bench.reps", self.bench_reps.to_string());
        kv("bench.warmup", self.bench_warmup.to_string());
        kv("bench.scenes", self.bench_scenes.to_string());
        self.model_lines(&mut out);
        out
    }

    pub fn grid(&self) -> Result<GridSpec> {
        if self.grid_cells == 0 || !(self.grid_cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "{} cells of {} m",
                self.grid_cells, self.grid_cell_size
            )));
        }
        Ok(GridSpec::centered(self.grid_cells, self.grid_cell_size))
    }

    /// Copies shared settings into the stage configs and validates them all.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut r = self.clone();
        let grid = r.grid()?;
        r.scenario.grid = grid;
        r.model.grid = grid;
        r.model.seed = r.seed;
        r.train.seed = r.seed.wrapping_add(1);
        r.train.labels = r.labels;
        r.eval.labels = r.labels;
        r.scenario.validate()?;
        r.model.validate()?;
        if !(0.0..=1.0).contains(&r.split) {
            return Err(Error::Config(format!("split {} outside [0, 1]", r.split)));
        }
        if r.train.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        if !(r.eval.tau > 0.0 && r.eval.tau < 1.0) {
            return Err(Error::Config(format!(
                "eval.tau {} outside (0, 1)",
                r.eval.tau
            )));
        }
        if !(r.v_max > 0.0) {
            return Err(Error::Config("render.v_max must be positive".into()));
        }
        let LrSchedule { base, factor, .. } = r.train.schedule;
        if !(base > 0.0 && factor > 0.0) {
            return Err(Error::Config(
                "learning rate and decay must be positive".into(),
            ));
        }
        Ok(r)
    }
}
