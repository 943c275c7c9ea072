//! `delayrl`: run experiment grids, summarize traces, dump and validate
//! instances.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 when a run or check
//! exceeds its state budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use delayrl_core::experiment::{load_instance_file, run_experiment, summarize_glob, ExperimentConfig, InstanceSource};
use delayrl_core::{optimal_delayed_value, Error};

#[derive(Parser)]
#[command(name = "delayrl", version, about = "Regret experiments for MDPs with delayed state observation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell and seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate trace CSVs into a JSON report.
    Summarize {
        #[arg(long)]
        glob: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Materialize an instance source (random, code, hard or file) as
    /// instance JSON.
    DumpInstance {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an instance file. With `--budget`, also solve the augmented
    /// MDP exactly within that many states.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run { config, jobs } => {
            let cfg = ExperimentConfig::from_json(&fs::read_to_string(&config)?)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let manifest = run_experiment(&cfg, base, jobs)?;
            for cell in &manifest.cells {
                for r in &cell.runs {
                    let msg = r.message.as_deref().unwrap_or("");
                    println!("{} seed {}: {:?} {msg}", cell.cell, r.seed, r.status);
                }
            }
            println!("manifest: {}", base.join(&cfg.output).join("manifest.json").display());
            Ok(if manifest.any_budget() {
                ExitCode::from(3)
            } else if manifest.all_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Summarize { glob, out } => {
            let report = summarize_glob(&glob)?;
            if report.cells.is_empty() {
                return Err(Error::Validation(format!("no trace files match {glob:?}")));
            }
            emit(&report.to_json(), out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpInstance { spec, out } => {
            let src: InstanceSource = serde_json::from_str(&fs::read_to_string(&spec)?)?;
            let inst = src.load(spec.parent().unwrap_or(Path::new(".")))?;
            emit(&inst.file.to_json(), out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { instance, budget } => {
            let inst = load_instance_file(&instance)?;
            let (m, d) = (&inst.mdp, &inst.delay);
            let solved = budget.map(|b| optimal_delayed_value(m, d, b)).transpose()?;
            print!(
                "ok: S={} A={} H={} B={} delta_max={} d_max={} known={}",
                m.num_states(),
                m.num_actions(),
                m.horizon(),
                m.branching(),
                d.delta_max(),
                d.d_max(),
                d.known()
            );
            if let Some(opt) = solved {
                print!(" optimal={} states={}", opt.value, opt.states);
            }
            println!();
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Budget { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
