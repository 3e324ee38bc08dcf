use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{augment, ground_truth, AugmentDraw, LabelConfig, SceneSequence};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, LrSchedule, Real};

use super::{total_loss, MotionNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per optimiser step.
    pub batch: usize,
    /// Moments and weight decay. The learning rate comes from `schedule`.
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub augment: bool,
    /// Largest augmentation rotation, radians.
    pub max_angle: f64,
    pub scale_range: (f64, f64),
    pub labels: LabelConfig,
    pub seed: u64,
    /// Emit an info log line every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 4,
            adam: AdamConfig::default(),
            schedule: LrSchedule::default(),
            augment: true,
            max_angle: std::f64::consts::FRAC_PI_4,
            scale_range: (0.95, 1.05),
            labels: LabelConfig::default(),
            seed: 0,
            log_every: 50,
        }
    }
}

/// A training sequence: the window of `seq_len` frames ending at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSample {
    pub scene: usize,
    pub end: usize,
}

impl TrainSample {
    /// Every full window of every scene.
    pub fn enumerate(scenes: &[SceneSequence], seq_len: usize) -> Vec<TrainSample> {
        scenes
            .iter()
            .enumerate()
            .flat_map(|(scene, s)| {
                (seq_len.saturating_sub(1)..s.len()).map(move |end| TrainSample { scene, end })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub velocity: f64,
    pub seg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Batch-mean losses, measured before each step's update.
    pub records: Vec<LossRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,velocity_loss,seg_loss,total_loss\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{}",
                r.step, r.lr, r.velocity, r.seg, r.total
            );
        }
        out
    }

    /// Mean total loss over `range` of recorded steps.
    pub fn mean_total(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64
    }
}

/// Trains `net` in place on windows drawn uniformly from `scenes`.
///
/// Each step draws `batch` windows, optionally applies one random rotation
/// and scale per window, recomputes labels for the transformed window and
/// takes one Adam step on the batch-mean loss. Deterministic for a given
/// seed.
pub fn train<F: Real>(
    net: &mut MotionNet<F>,
    scenes: &[SceneSequence],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let samples = TrainSample::enumerate(scenes, net.config.seq_len);
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let scale = F::lit(1.0 / cfg.batch as f64);
    for step in 0..cfg.steps {
        net.zero_grad();
        let (mut lv, mut ls, mut lt) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch {
            let s = samples.choose(&mut rng).expect("non-empty");
            let mut window = scenes[s.scene].window(s.end, net.config.seq_len)?;
            if cfg.augment {
                let draw = AugmentDraw::sample(&mut rng, cfg.max_angle, cfg.scale_range);
                window = augment(&window, &draw);
            }
            let gt = ground_truth(&window, window.len() - 1, &cfg.labels);
            let (pred, trace) = net.forward(&window.frames)?;
            let mut loss = total_loss(&pred.velocity, &pred.logits, &gt, &net.config)?;
            if !loss.total.is_finite() {
                return Err(Error::NanLoss(step));
            }
            loss.grad_velocity.scale(scale);
            loss.grad_logits.scale(scale);
            net.backward(&trace, &loss.grad_velocity, &loss.grad_logits)?;
            lv += loss.velocity;
            ls += loss.seg;
            lt += loss.total;
        }
        let lr = cfg.schedule.at(step);
        let adam = AdamConfig { lr, ..cfg.adam };
        for p in net.parameters_mut() {
            if !p.grad.all_finite() {
                return Err(Error::NanLoss(step));
            }
            adam_step(p, &adam);
        }
        let n = cfg.batch as f64;
        let record = LossRecord {
            step,
            lr,
            velocity: lv / n,
            seg: ls / n,
            total: lt / n,
        };
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!(
                "step {step}: loss {:.4} (velocity {:.4}, seg {:.4}), lr {lr:.2e}",
                record.total,
                record.velocity,
                record.seg
            );
        }
        report.records.push(record);
    }
    Ok(report)
}
