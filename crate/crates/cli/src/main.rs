use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metsynth::experiment::Mode;
use metsynth_cli::stages::{self, Run};
use metsynth_cli::{CliError, Result, RunConfig};

/// Synthetic lesion data and segmentation experiments on femur phantoms.
#[derive(Debug, Parser)]
#[command(name = "metsynth", version)]
struct Cli {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory that stages read from and write below.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads; 1 gives the reference schedule.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the raw phantom cohorts.
    Phantom,
    /// Resample and standardize the phantoms.
    Preprocess,
    /// Transplant donor lesions into the healthy hosts.
    Synthesize {
        /// Comma-separated donor ids to leave out.
        #[arg(long, value_delimiter = ',')]
        exclude_donors: Vec<String>,
    },
    /// Train the diffusion noise predictor.
    #[command(name = "train_denoiser", alias = "train-denoiser")]
    TrainDenoiser,
    /// Refine the synthetic samples by partial noising and denoising.
    Refine {
        #[arg(long)]
        lambda: Option<usize>,
    },
    /// Train a segmenter in one mode.
    #[command(name = "train_seg", alias = "train-seg")]
    TrainSeg {
        /// real, synthetic, synthetic+ft, diffusion or diffusion+ft.
        #[arg(long)]
        mode: Mode,
        /// Train on a seeded subset of this many samples.
        #[arg(long)]
        train_size: Option<usize>,
        /// Refinement timestep of the diffusion modes.
        #[arg(long)]
        lambda: Option<usize>,
    },
    /// Score every trained model on the test cases.
    Evaluate {
        /// Comma-separated subject ids no evaluated model may have seen.
        #[arg(long, value_delimiter = ',')]
        exclude_donors: Vec<String>,
    },
    /// Tabulate simulated inter- and intra-operator agreement.
    Variability,
    /// Compare the evaluated models statistically.
    Stats,
    /// Run every stage and train all five modes.
    Run,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let run = Run::new(&cli.out, cfg)?;
    let manifest = match cli.command {
        Command::Phantom => stages::phantom(&run)?,
        Command::Preprocess => stages::preprocess(&run)?,
        Command::Synthesize { exclude_donors } => stages::synthesize(&run, &exclude_donors)?,
        Command::TrainDenoiser => stages::train_denoiser(&run)?,
        Command::Refine { lambda } => stages::refine(&run, lambda)?,
        Command::TrainSeg {
            mode,
            train_size,
            lambda,
        } => stages::train_seg(&run, mode, train_size, lambda)?,
        Command::Evaluate { exclude_donors } => stages::evaluate(&run, &exclude_donors)?,
        Command::Variability => stages::variability(&run)?,
        Command::Stats => stages::stats(&run)?,
        Command::Run => {
            stages::run_all(&run)?;
            eprintln!("pipeline complete in {}", run.root.display());
            return Ok(());
        }
        Command::ShowConfig => {
            let text = serde_json::to_string_pretty(&run.cfg).expect("config serializes");
            // A closed stdout, as under `| head`, is not an error.
            let _ = writeln!(std::io::stdout(), "{text}");
            return Ok(());
        }
    };
    eprintln!("{} done: {} outputs", manifest.stage, manifest.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
