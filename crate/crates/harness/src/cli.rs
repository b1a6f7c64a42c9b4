//! Command-line front end of `croplab`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{cmd_attack, cmd_budget, cmd_crop_eval, cmd_report, cmd_solve, cmd_sweep, with_jobs};
use crate::{load_config, ConfigError, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "croplab", version, about = "Constrained policy randomization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed (overrides `[seeds] base`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the configured MDP and write the MDP and value tables.
    Solve,
    /// Loss bounds and test-time diversions over the CRoP grid.
    CropEval,
    /// Imitation attacks: learning curves and samples to threshold.
    Attack,
    /// Trajectory-collection budget, analytic and simulated.
    Budget,
    /// Run solve, crop-eval, attack, budget and report.
    Sweep,
    /// Plot-ready data files from existing CSVs.
    Report,
}

fn config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        HarnessError::Config(ConfigError::Missing { section: "cli".into(), key: "--config".into() })
    })?;
    let mut cfg = load_config(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, HarnessError> {
    if let Command::Report = cli.command {
        let dir = match (&cli.out, &cli.config) {
            (Some(out), _) => out.clone(),
            (None, Some(_)) => config(cli)?.output_dir,
            (None, None) => PathBuf::from("out"),
        };
        return cmd_report(&dir);
    }
    let cfg = config(cli)?;
    match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::CropEval => cmd_crop_eval(&cfg),
        Command::Attack => cmd_attack(&cfg),
        Command::Budget => cmd_budget(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Report => unreachable!(),
    }
}

/// Parse `args` (program name first), run the command and return the
/// process exit code. Written paths go to stdout, errors to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match with_jobs(cli.jobs, || run(&cli)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("croplab: {e}");
            e.exit_code()
        }
    }
}
