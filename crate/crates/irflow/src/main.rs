use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irflow::commands::{self, Overrides};
use irflow::{report, RunConfig};
use irflow_core::VelocityMode;

#[derive(Parser)]
#[command(name = "irflow", version, about = "Few-step flow restoration at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Sampler steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "lambda-mct")]
    lambda_mct: Option<f64>,
    /// `cumulative` or `standard`.
    #[arg(long)]
    mode: Option<VelocityMode>,
    /// Noise level on the 8-bit scale.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clean/degraded corpus or a 2D point set.
    GenData(Common),
    /// Train a model on the corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the configured checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Restore the corpus' degraded images and report metrics.
    Restore(Common),
    /// Generate 2D points with a toy model.
    Sample2d {
        #[command(flatten)]
        common: Common,
        /// Number of points.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Transport energy of both velocity fields over the corpus.
    Energy(Common),
    /// Score restored images (or, with --baseline, the degraded inputs).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding restored_%04d.pgm; defaults to the output directory.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
    },
}

fn load(c: &Common) -> irflow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    Overrides {
        steps: c.steps,
        lambda_mct: c.lambda_mct,
        mode: c.mode,
        sigma: c.sigma,
        seed: c.seed,
        out: c.out.clone(),
        corpus: c.corpus.clone(),
        checkpoint: c.checkpoint.clone(),
    }
    .apply(&mut cfg);
    Ok(cfg)
}

fn run(cmd: Command) -> irflow::Result<()> {
    match cmd {
        Command::GenData(c) => {
            let s = commands::gen_data(&load(&c)?)?;
            println!("wrote {} files", s.files.len());
        }
        Command::Train { common, resume } => {
            let cfg = load(&common)?;
            let s = commands::train(&cfg, resume)?;
            if let Some(last) = s.records.last() {
                println!("{}", commands::loss_line(last));
            }
            println!(
                "trained to iteration {}; checkpoint {}",
                s.iterations,
                cfg.paths.checkpoint.display()
            );
        }
        Command::Restore(c) => {
            let r = commands::restore(&load(&c)?)?;
            print!("{}", report::to_json(&r));
        }
        Command::Sample2d { common, samples } => {
            let mut cfg = load(&common)?;
            if let Some(n) = samples {
                cfg.sampler.samples = n;
            }
            let s = commands::sample2d(&cfg)?;
            println!("energy_distance: {}", irflow::fmt::sig(s.energy_distance, 6));
        }
        Command::Energy(c) => {
            let e = commands::energy(&load(&c)?)?;
            print!("{}", commands::energy_text(&e));
        }
        Command::Eval {
            common,
            images,
            baseline,
        } => {
            let r = commands::eval(&load(&common)?, images.as_deref(), baseline)?;
            print!("{}", report::to_json(&r));
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
