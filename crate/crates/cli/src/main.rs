//! `gvlm`: scene synthesis, tokenization, training, inference and the
//! counting benchmark from one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-finite
//! numbers during training.

mod config;
mod run;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gvlm_core::model::GenerationConfig;
use gvlm_core::sparsifier::Variant;
use thiserror::Error;

use config::{resolve_seed, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gvlm", version, about = "Sparse language-aware tokens for Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes (`.gsvl`) and their annotations.
    Synth {
        /// One scene spec or a JSON array of them.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Language feature width.
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
    /// Dump the sparse scene and region tokens for one prompt.
    Tokenize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Point location `x,y,z` in meters.
        #[arg(long)]
        loc: Option<String>,
        /// Box `x0,y0,z0,x1,y1,z1`; its center is used.
        #[arg(long = "box")]
        bbox: Option<String>,
        /// Fresh seeded weights when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contrastive pretraining of the task-guided sparsifier.
    Pretrain(TrainArgs),
    /// Prefix-LM training (align or instruct stage).
    Train(TrainArgs),
    /// Answer a prompt about a scene.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        loc: Option<String>,
        #[arg(long = "box")]
        bbox: Option<String>,
        #[arg(long, default_value_t = 5)]
        beams: usize,
        #[arg(long, default_value_t = 32)]
        max_length: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate counting questions from instance annotations.
    Benchgen {
        /// Annotation JSON (object, array or lines) or a directory of them.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSON-lines file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against counting questions.
    Eval {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// JSON run config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let flags = Overrides { seed: self.seed, epochs: self.epochs, variant: self.variant, out_dir: self.out.clone() };
        RunConfig::load(self.config.as_deref(), &flags)
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth { spec, out, dim } => {
            for p in run::synth(&spec, &out, dim)? {
                println!("{}", p.display());
            }
        }
        Command::Tokenize { scene, prompt, loc, bbox, ckpt, variant, seed, out } => {
            let args = run::TokenizeArgs {
                scene: &scene,
                prompt: &prompt,
                location: run::parse_location(loc.as_deref(), bbox.as_deref())?,
                ckpt: ckpt.as_deref(),
                variant,
                seed: resolve_seed(seed)?,
            };
            emit(out.as_ref(), &(run::tokenize(&args)? + "\n"))?;
        }
        Command::Pretrain(a) => {
            let summary = run::pretrain(&a.config()?)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Train(a) => {
            let summary = run::train(&a.config()?)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Infer { ckpt, scene, prompt, loc, bbox, beams, max_length, seed } => {
            let gen = GenerationConfig { beams, max_length, ..GenerationConfig::default() };
            let location = run::parse_location(loc.as_deref(), bbox.as_deref())?;
            println!("{}", run::infer(&scene, &prompt, location, &ckpt, &gen, resolve_seed(seed)?)?);
        }
        Command::Benchgen { annotations, n, seed, out } => {
            let seed = resolve_seed(seed)?;
            let mut buf = Vec::new();
            run::benchgen(&annotations, n, seed, &mut buf)?;
            match out {
                Some(p) => std::fs::write(&p, &buf).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
                None => std::io::stdout().write_all(&buf).map_err(|e| Failure::Data(e.to_string()))?,
            }
        }
        Command::Eval { qa, pred, report } => {
            print!("{}", run::eval(&qa, &pred, &report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
