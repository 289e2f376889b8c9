use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pdtune::config::ExperimentConfig;
use pdtune::experiments::{self, ExperimentError, RunOptions};

#[derive(Parser)]
#[command(name = "pdtune", version, about = "Multi-objective PD gain tuning for a simulated planar arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, or base seed for replicated studies.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace existing files whose content differs.
    #[arg(long)]
    overwrite: bool,
    /// Suppress per-generation progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tune gains on one trajectory.
    Tune {
        /// Trajectory id from the config.
        #[arg(long, default_value = "spiral")]
        trajectory: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the population size over replicated seeds.
    Popsweep(Common),
    /// Compare a generic controller with one tuned on the target trajectory.
    GenericVsSpecific(Common),
    /// Tune and cross-evaluate over trajectory durations.
    SpeedStudy(Common),
    /// Write rollouts of tuned front members as a dataset.
    EmitDataset(Common),
}

fn run(command: Command) -> Result<(), ExperimentError> {
    let common = match &command {
        Command::Tune { common, .. } => common,
        Command::Popsweep(c) | Command::GenericVsSpecific(c) | Command::SpeedStudy(c) | Command::EmitDataset(c) => c,
    };
    let config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let opts = RunOptions {
        out_dir: common.out.clone().unwrap_or_else(|| config.output_dir.clone()),
        overwrite: common.overwrite,
        seed: common.seed,
        verbose: !common.quiet,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Config(pdtune::config::ConfigError::Invalid(format!("--jobs: {e}"))))?;

    pool.install(|| match &command {
        Command::Tune { trajectory, .. } => {
            let out = experiments::cmd_tune(&config, trajectory, &opts)?;
            eprintln!("front of {} members written to {}", out.rows.len(), out.dir.display());
            Ok(())
        }
        Command::Popsweep(_) => {
            let out = experiments::cmd_popsweep(&config, &opts)?;
            eprintln!("{} runs summarized in {}", out.rows.len(), out.summary_path.display());
            Ok(())
        }
        Command::GenericVsSpecific(_) => {
            let out = experiments::cmd_generic_vs_specific(&config, &opts)?;
            eprintln!("{} seeds summarized in {}", out.rows.len(), out.summary_path.display());
            Ok(())
        }
        Command::SpeedStudy(_) => {
            let out = experiments::cmd_speed_study(&config, &opts)?;
            eprintln!("{} cells written to {}", out.cells.len(), out.matrix_path.display());
            Ok(())
        }
        Command::EmitDataset(_) => {
            let out = experiments::cmd_emit_dataset(&config, &opts)?;
            eprintln!("{} rollouts indexed in {}", out.rows.len(), out.index_path.display());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
