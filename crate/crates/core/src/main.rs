use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cfcp::dataset::save_csv;
use cfcp::harness::{
    noise_sweep, run_experiment_with_jobs, write_records, ExperimentConfig, OutputFormat, RESULT_HEADER, SWEEP_HEADER,
};
use cfcp::math::make_rng;
use cfcp::scm::{ClassificationScm, ScmKind};
use cfcp::{Error, Result};

#[derive(Parser)]
#[command(name = "cfcp", version, about = "Counterfactually fair conformal prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScmArg {
    Reg,
    Clf,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output file; overrides the config and defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat an experiment over counterfactual noise levels.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated noise levels, e.g. 0,0.2,0.4.
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a synthetic dataset to CSV.
    Gen {
        #[arg(long, value_enum)]
        scm: ScmArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sink(out: Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            format,
            jobs,
            out,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            let rows = run_experiment_with_jobs(&cfg, jobs)?;
            write_records(&rows, &RESULT_HEADER, sink(out.or(cfg.output.clone()))?, format.into())
        }
        Command::Sweep {
            config,
            sigmas,
            format,
            jobs,
            out,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            let rows = noise_sweep(&cfg, &sigmas, jobs)?;
            write_records(&rows, &SWEEP_HEADER, sink(out.or(cfg.output.clone()))?, format.into())
        }
        Command::Gen { scm, n, seed, out } => {
            let kind = match scm {
                ScmArg::Reg => ScmKind::regression(),
                ScmArg::Clf => ScmKind::SynthClassification(ClassificationScm::sample(&mut make_rng(seed, "scm/matrices"))?),
            };
            let ds = kind.generate(n, &mut make_rng(seed, "gen/data"))?;
            save_csv(&ds, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{record}");
    ExitCode::from(1)
}
