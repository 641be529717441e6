use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavecascade_cli::commands::{cmd_analyze, cmd_run, cmd_sweep, cmd_validate, Axis, RunOptions};
use wavecascade_cli::config::{read_document, RunConfig};
use wavecascade_cli::output::{write_report, REPORT_FILE};
use wavecascade_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "wavecascade", version, about = "Discrete wave-kinetic cascade solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the kernel parameters against the constraint set.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate one configuration and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to `output.dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Run even if the kernel parameters fail validation.
        #[arg(long)]
        allow_invalid: bool,
        /// Override the number of dyadic blocks per level.
        #[arg(long)]
        upsilon: Option<u32>,
    },
    /// Run the Cartesian product of parameter axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...` with a dotted config key; repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        allow_invalid: bool,
        #[arg(long)]
        upsilon: Option<u32>,
    },
    /// Recompute the cascade report of an existing run directory.
    Analyze {
        dir: PathBuf,
        /// Take the diagnostics section from this config instead of the run's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        upsilon: Option<u32>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            let (report, code) = cmd_validate(&cfg)?;
            print!("{}", report.render());
            Ok(code)
        }
        Command::Run { config, out, workers, allow_invalid, upsilon } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let summary = cmd_run(&cfg, &out, &RunOptions { workers, allow_invalid, upsilon })?;
            let l = &summary.manifest.ledger;
            println!(
                "{}: {} steps to t={:e}, grid energy {:e}, overflow energy {:e}",
                summary.dir.display(),
                l.steps,
                l.t_final,
                l.final_energy_grid,
                l.final_overflow_energy
            );
            if let Some(t) = summary.report.as_ref().and_then(|r| r.tstar) {
                println!("T* = {t:e}");
            }
            Ok(0)
        }
        Command::Sweep { config, axes, out, workers, allow_invalid, upsilon } => {
            let axes = axes.iter().map(|a| a.parse::<Axis>()).collect::<Result<Vec<_>, _>>()?;
            let template = read_document(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let out = out.unwrap_or_else(|| PathBuf::from("sweep"));
            let points = cmd_sweep(&template, base, &axes, &out, &RunOptions { workers, allow_invalid, upsilon })?;
            let failed = points.iter().filter(|p| p.status != "ok").count();
            println!("{}: {} points, {} failed", out.display(), points.len(), failed);
            Ok(0)
        }
        Command::Analyze { dir, config, upsilon, workers } => {
            let diagnostics = match config {
                Some(p) => Some(RunConfig::load(&p)?.diagnostics),
                None => None,
            };
            let report = cmd_analyze(&dir, diagnostics, upsilon, workers)?;
            write_report(&dir, &report)?;
            println!("{}", dir.join(REPORT_FILE).display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
