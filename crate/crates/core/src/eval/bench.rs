use std::fmt::Write as _;
use std::time::Instant;

use crate::datagen::SceneSequence;
use crate::error::Result;
use crate::model::MotionNet;
use crate::nn::Real;

/// Wall-clock timings of single forward passes, milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub grid: (usize, usize),
    pub samples_ms: Vec<f64>,
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.samples_ms.is_empty()
    }

    pub fn mean_ms(&self) -> Option<f64> {
        super::mean(&self.samples_ms)
    }

    /// Nearest-rank 95th percentile.
    pub fn p95_ms(&self) -> Option<f64> {
        if self.samples_ms.is_empty() {
            return None;
        }
        let mut s = self.samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let rank = (0.95 * s.len() as f64).ceil() as usize;
        Some(s[rank.clamp(1, s.len()) - 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("nx,ny,runs,mean_ms,p95_ms,p95_over_mean\n");
        if let (Some(m), Some(p)) = (self.mean_ms(), self.p95_ms()) {
            let _ = writeln!(
                out,
                "{},{},{},{m:.3},{p:.3},{:.3}",
                self.grid.0,
                self.grid.1,
                self.samples_ms.len(),
                p / m
            );
        }
        out
    }
}

/// Times `reps` forward passes on the last window of each scene after
/// `warmup` untimed passes per scene.
pub fn benchmark<F: Real>(
    net: &MotionNet<F>,
    scenes: &[SceneSequence],
    reps: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let g = net.config.grid;
    let mut report = BenchReport {
        grid: (g.nx, g.ny),
        samples_ms: Vec::new(),
    };
    for scene in scenes {
        let p = net.config.seq_len.min(scene.len());
        let window = scene.window(scene.len().saturating_sub(1), p)?;
        for _ in 0..warmup {
            net.predict(&window.frames)?;
        }
        for _ in 0..reps {
            let t = Instant::now();
            let pred = net.predict(&window.frames)?;
            report.samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(pred);
        }
    }
    Ok(report)
}
