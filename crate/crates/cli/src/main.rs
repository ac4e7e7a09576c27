//! `vbma` command-line interface.

mod artifacts;
mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "vbma", version, about = "Variational Bayesian model averaging")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file (see docs/config.md).
    #[arg(long, global = true, env = "VBMA_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed; overrides [vbma] seed.
    #[arg(long, global = true, env = "VBMA_SEED")]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, env = "VBMA_OUT", default_value = "vbma-out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "VBMA_THREADS")]
    threads: Option<usize>,
    /// adam, rmsprop or sga.
    #[arg(long, global = true, env = "VBMA_OPTIMIZER")]
    optimizer: Option<String>,
    #[arg(long, global = true, env = "VBMA_STEP_SIZE")]
    step_size: Option<f64>,
    /// Monte Carlo draws per model per iteration.
    #[arg(long, global = true, env = "VBMA_SAMPLES")]
    samples: Option<usize>,
    #[arg(long, global = true, env = "VBMA_PRETRAIN_ITERS")]
    pretrain_iters: Option<usize>,
    #[arg(long, global = true, env = "VBMA_JOINT_ITERS")]
    joint_iters: Option<usize>,
    /// Trailing iterations averaged into the reported weights.
    #[arg(long, global = true, env = "VBMA_WINDOW")]
    window: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true, env = "VBMA_SVG")]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer and write weights, ELBO trace and checkpoint.
    Fit,
    /// Exact (Zellner) or Monte Carlo log evidence per model.
    Evidence,
    /// Bayes factor of FIRST against SECOND from fitted weights.
    Bf { first: String, second: String },
    /// Predictive intervals and coefficient summaries from a fitted run.
    Predict,
    /// Empirical coverage of predictive intervals on held-out rows.
    Coverage,
    /// Write a synthetic lattice dataset.
    Synth,
}

fn resolve(common: &Common) -> vbma::Result<RunConfig> {
    let mut file = FileConfig::load(common.config.as_deref())?;
    file.apply(&Overrides {
        seed: common.seed,
        optimizer: common.optimizer.clone(),
        step_size: common.step_size,
        samples: common.samples,
        pretrain_iters: common.pretrain_iters,
        joint_iters: common.joint_iters,
        window: common.window,
    });
    let base_dir = common
        .config
        .as_ref()
        .and_then(|p| p.parent().map(PathBuf::from))
        .unwrap_or_default();
    if common.threads == Some(0) {
        return Err(vbma::Error::Config("--threads must be at least 1".into()));
    }
    Ok(RunConfig { file, base_dir, out: common.out.clone(), threads: common.threads, svg: common.svg })
}

fn run(cli: Cli) -> vbma::Result<()> {
    let cfg = resolve(&cli.common)?;
    if let Some(n) = cfg.threads {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Fit => commands::fit(&cfg),
        Command::Evidence => commands::evidence(&cfg),
        Command::Bf { first, second } => commands::bf(&cfg, first, second),
        Command::Predict => commands::predict(&cfg),
        Command::Coverage => commands::coverage(&cfg),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
