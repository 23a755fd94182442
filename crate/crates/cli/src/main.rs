//! Command-line front end for the saliency pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saliency_core::commands::{self, GradcheckScope};
use saliency_core::config::{apply_setting, read_config_file};
use saliency_core::error::Error;
use saliency_core::fusion::Variant;
use saliency_core::synth::GenPreset;
use saliency_core::trainer::{AblationMask, TrainConfig};

#[derive(Parser)]
#[command(
    name = "saliency",
    about = "Social-cue saliency prediction on synthetic scenes",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Dataset scale: tiny (24x24) or full (120x120).
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the five modality maps of one frame as PPM images.
    Render {
        /// Path to a scene.json inside a generated dataset.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long, default_value_t = 0.7)]
        sp_quality: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and evaluate it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate an existing checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        sp_quality: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// How many overlay panels to write.
        #[arg(long, default_value_t = 4)]
        overlays: usize,
    },
    /// Train and evaluate the 2^3 social-modality ablation grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Report per-modality gate shares of a trained model.
    Contrib {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        sp_quality: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
    },
    /// Finite-difference verification of operators and variant graphs.
    Gradcheck {
        /// Check every operator and every variant graph.
        #[arg(long, conflicts_with_all = ["op", "variant"])]
        all: bool,
        /// Check a single operator by name.
        #[arg(long)]
        op: Option<String>,
        /// Check a single variant graph.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = false)]
        dam: bool,
        #[arg(long, default_value_t = 1)]
        context: usize,
        /// Probes per tensor for graph checks.
        #[arg(long, default_value_t = 8)]
        coords: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    context: Option<usize>,
    /// Put the directed attention module in front of the encoders.
    #[arg(long)]
    dam: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sp_quality: Option<f64>,
    /// Comma-separated social modalities to zero out (ge,gf,fer).
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    tie_interval: Option<usize>,
}

impl TrainArgs {
    fn build(&self) -> Result<TrainConfig, Error> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            for (k, v) in read_config_file(path)? {
                apply_setting(&mut cfg, &k, &v)?;
            }
        }
        if let Some(v) = &self.variant {
            cfg.variant = Variant::parse(v)?;
        }
        if let Some(c) = self.context {
            cfg.context = c;
        }
        if self.dam {
            cfg.dam = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(i) = self.iterations {
            cfg.iterations = i;
        }
        if let Some(b) = self.batch {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(q) = self.sp_quality {
            cfg.sp_quality = q;
        }
        if let Some(a) = &self.ablate {
            cfg.ablate = AblationMask::parse(a)?;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(t) = self.tie_interval {
            cfg.tie_interval = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { preset, seed, out } => {
            commands::gen_data(&out, GenPreset::parse(&preset)?, seed)
        }
        Command::Render {
            scene,
            frame,
            sp_quality,
            out,
        } => commands::render(&scene, frame, sp_quality, &out),
        Command::Train { data, out, train } => {
            let cfg = train.build()?;
            commands::train(&data, &out, &cfg).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            sp_quality,
            batch,
            overlays,
        } => commands::eval(&checkpoint, &data, &out, sp_quality, batch, overlays).map(|_| ()),
        Command::Ablate { data, out, train } => {
            let cfg = train.build()?;
            commands::ablate(&data, &out, &cfg).map(|_| ())
        }
        Command::Contrib {
            checkpoint,
            data,
            out,
            sp_quality,
            batch,
        } => commands::contrib(&checkpoint, &data, &out, sp_quality, batch).map(|_| ()),
        Command::Gradcheck {
            all,
            op,
            variant,
            dam,
            context,
            coords,
        } => {
            let scope = if all {
                GradcheckScope::All
            } else if let Some(op) = op {
                GradcheckScope::Op(op)
            } else if let Some(v) = variant {
                GradcheckScope::Variant {
                    variant: Variant::parse(&v)?,
                    dam,
                    context,
                }
            } else {
                return Err(Error::config(
                    "gradcheck needs --all, --op NAME or --variant NAME",
                ));
            };
            if commands::gradcheck(scope, coords)? {
                Ok(())
            } else {
                Err(Error::numeric("gradient check failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/usage text, exit 1 on usage errors
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Numeric(_)) => {
            eprintln!("numeric failure: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
