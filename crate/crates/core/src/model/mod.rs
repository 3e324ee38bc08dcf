//! Network variants, losses and training.

mod loss;
mod network;
mod train;

pub use loss::{seg_loss, total_loss, velocity_loss, LossBreakdown};
pub use network::{rnn_cell, MotionNet, Prediction, RnnStep, Trace};
pub use train::{train, LossRecord, TrainConfig, TrainReport, TrainSample};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::voxel::ChannelPlan;

/// How frames are aggregated before the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Recurrent cell with the previous state warped by odometry.
    RnnOdo,
    /// Recurrent cell without ego-motion compensation.
    RnnNoOdo,
    /// Channel stack of ego-compensated per-frame tensors.
    StackConv,
    /// Channel stack of tensors encoded from clouds pre-transformed into the
    /// last frame.
    StackConvPct,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::RnnOdo,
        Variant::RnnNoOdo,
        Variant::StackConv,
        Variant::StackConvPct,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::RnnOdo => "rnn_odo",
            Variant::RnnNoOdo => "rnn_no_odo",
            Variant::StackConv => "stack_conv",
            Variant::StackConvPct => "stack_conv_pct",
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self, Variant::RnnOdo | Variant::RnnNoOdo)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frames per input sequence.
    pub seq_len: usize,
    /// Weight of the segmentation loss.
    pub alpha: f64,
    /// Weight of positive cells in the segmentation loss.
    pub beta: f64,
    pub grid: GridSpec,
    pub channels: ChannelPlan,
    /// Average the segmentation loss over velocity-known cells only instead
    /// of over the whole grid.
    pub seg_occupied_only: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::RnnOdo,
            seq_len: 5,
            alpha: 5.0,
            beta: 100.0,
            grid: GridSpec::default(),
            channels: ChannelPlan::default(),
            seg_occupied_only: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.seq_len < 2 {
            return Err(Error::Config(format!("seq_len {} < 2", self.seq_len)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::Config(format!(
                "beta {} must be at least 1",
                self.beta
            )));
        }
        if self.channels.vfe.is_empty()
            || self.channels.vfe.contains(&0)
            || self.channels.features == 0
        {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }
}
