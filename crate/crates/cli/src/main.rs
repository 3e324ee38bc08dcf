use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use motiongrid_core::config::RunConfig;
use motiongrid_core::eval::format_metric;
use motiongrid_core::pipeline::{self, RenderSource};

#[derive(Parser)]
#[command(
    name = "motiongrid",
    version,
    about = "Grid motion estimation from point cloud sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (output file for `render`).
    #[arg(long)]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint and baselines on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file or training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Predict the last frame of a scene and extract dynamic boxes.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Draw a velocity grid as a PPM image.
    Render {
        #[command(flatten)]
        common: Common,
        /// Stored grid file.
        #[arg(long, conflicts_with_all = ["checkpoint", "scene"], required_unless_present = "checkpoint")]
        grid: Option<PathBuf>,
        #[arg(long, requires = "scene")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        scene: Option<PathBuf>,
    },
    /// Time forward passes of an untrained model.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let index = pipeline::cmd_gen(&common.config()?, &common.out)?;
            println!("{} scenes in {}", index.entries.len(), common.out.display());
        }
        Command::Train { common, data } => {
            let report = pipeline::cmd_train(&common.config()?, &data, &common.out)?;
            if let Some(last) = report.records.last() {
                println!("step {} total loss {:.6}", last.step, last.total);
            }
        }
        Command::Eval {
            common,
            data,
            checkpoint,
        } => {
            let rows = pipeline::cmd_eval(&common.config()?, &data, &checkpoint, &common.out)?;
            for r in rows.iter().filter(|r| r.scene == "all") {
                println!(
                    "{:<14} {:<9} epe {} epe_dynamic {} ap {}",
                    r.method,
                    r.roi.as_str(),
                    format_metric(r.epe),
                    format_metric(r.epe_dynamic),
                    format_metric(r.ap)
                );
            }
        }
        Command::Infer {
            common,
            checkpoint,
            scene,
        } => {
            let (_, boxes) =
                pipeline::cmd_infer(&common.config()?, &checkpoint, &scene, &common.out)?;
            println!("{} dynamic boxes", boxes.len());
        }
        Command::Render {
            common,
            grid,
            checkpoint,
            scene,
        } => {
            let source = match (grid, checkpoint, scene) {
                (Some(g), _, _) => RenderSource::Grid(g),
                (None, Some(checkpoint), Some(scene)) => RenderSource::Model { checkpoint, scene },
                _ => anyhow::bail!("render needs --grid or both --checkpoint and --scene"),
            };
            pipeline::cmd_render(&common.config()?, &source, &common.out)?;
        }
        Command::Bench { common } => {
            let report = pipeline::cmd_bench(&common.config()?, &common.out)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
