use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use septrace::exec::with_jobs;
use septrace::harness::{ExperimentConfig, HarnessError, Pipeline};

#[derive(Debug, Parser)]
#[command(name = "septrace", version, about = "Separate model copies with tracers, attack them, trace the source")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Without it the built-in desk config is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; replaces every seed in the config with a derived one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Train the shared classifier.
    TrainClassifier,
    /// Train one tracer per copy and tabulate accuracy against alpha.
    TrainTracers,
    /// Attack the source copy for every alpha and attack.
    Attack,
    /// Trace adversarial examples back to their source copy.
    Trace,
    /// Assemble the report from the stage outputs.
    Report,
    /// Run every stage in order.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_default("runs/desk"),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.override_seeds(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load_config(cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let command = cli.command;
    with_jobs(jobs, move |exec| {
        let pipeline = Pipeline::new(cfg, exec);
        match command {
            Command::TrainClassifier => {
                let path = pipeline.train_classifier()?;
                println!("classifier written to {}", path.display());
            }
            Command::TrainTracers => {
                let dirs = pipeline.train_tracers()?;
                println!("{} tracer bundles written", dirs.len());
            }
            Command::Attack => {
                let cells = pipeline.attack()?;
                let records: usize = cells.iter().map(|c| c.records).sum();
                println!("{} cells, {records} adversarial records", cells.len());
            }
            Command::Trace => {
                let frag = pipeline.trace()?;
                for c in &frag.cells {
                    println!("{:<16} alpha {:<5} {:<9} accuracy {:.3}", c.variant, c.alpha, c.attack, c.accuracy);
                }
            }
            Command::Report | Command::All => {
                let report = if matches!(command, Command::All) {
                    pipeline.all()?
                } else {
                    pipeline.report()?
                };
                for r in &report.tracing {
                    println!("alpha {:<5} {:<9} tracing accuracy {:.3}", r.alpha, r.attack, r.accuracy);
                }
                for g in &report.gaps {
                    eprintln!("gap: {g}");
                }
                println!("report written to {}", pipeline.out_dir().join("report/report.json").display());
            }
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
