use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use xgen_cli::commands::{self, error_json, parse_site, TrainOptions};
use xgen_cli::{Outcome, PipelineConfig};

/// Cross-field generation pipeline. Every command prints one JSON result
/// line on stdout; logs go to stderr (level from XGEN_LOG, default info).
/// Exit codes: 0 ok, 1 some items failed, 2 fatal error.
#[derive(Parser)]
#[command(name = "xgen", version)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-shape work.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the input grid and TSDF resolution.
    #[arg(long, global = true)]
    resolution: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build training data and a manifest from a directory of meshes.
    Dataset {
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split of a manifest and write a checkpoint.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint (weights, optimizer state and step).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Directory for periodic checkpoints (default: <out>.d).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Predict a cross field for a mesh (.obj/.ply) or oriented cloud (.ply).
    Infer {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Field sites for mesh input: face or vertex.
        #[arg(long, default_value = "face")]
        site: String,
    },
    /// Angular error of a field against the principal directions of a mesh.
    EvalField { field: PathBuf, mesh: PathBuf },
    /// Quad-mesh quality metrics.
    EvalQuad {
        quad: PathBuf,
        /// Reference surface for the Chamfer distance.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Also write the full report with per-face values.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Marching cubes on a TSDF file.
    Mc {
        tsdf: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Curvature-aligned ground-truth field for a mesh.
    GtField {
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset { .. } => "dataset",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::EvalField { .. } => "eval-field",
            Command::EvalQuad { .. } => "eval-quad",
            Command::Mc { .. } => "mc",
            Command::GtField { .. } => "gt-field",
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(r) = cli.resolution {
        cfg.set_resolution(r).context("--resolution")?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Dataset { in_dir, out } => commands::cmd_dataset(in_dir, out, &cfg, cli.workers),
        Command::Train {
            manifest,
            out,
            resume,
            checkpoint_dir,
            log_every,
        } => commands::cmd_train(
            manifest,
            out,
            &cfg,
            &TrainOptions {
                resume: resume.clone(),
                checkpoint_dir: checkpoint_dir.clone(),
                log_every: *log_every,
            },
        ),
        Command::Infer {
            input,
            checkpoint,
            out,
            site,
        } => commands::cmd_infer(input, checkpoint, out, &cfg, parse_site(site)?),
        Command::EvalField { field, mesh } => commands::cmd_eval_field(field, mesh, &cfg),
        Command::EvalQuad { quad, reference, out } => {
            commands::cmd_eval_quad(quad, reference.as_deref(), out.as_deref(), &cfg)
        }
        Command::Mc { tsdf, out } => commands::cmd_mc(tsdf, out),
        Command::GtField { mesh, out } => commands::cmd_gt_field(mesh, out, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XGEN_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(o) => {
            println!("{}", o.result);
            if o.failures > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            log::error!("{e:#}");
            println!("{}", error_json(cli.command.name(), &e));
            ExitCode::from(2)
        }
    }
}
