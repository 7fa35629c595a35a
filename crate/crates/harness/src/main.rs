//! `spectral-bench`: command-line front end for the experiment engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectral_harness::spec::{ExperimentKind, ExperimentSpec, Method, Precision};
use spectral_harness::trace::{emit_traces, TraceFormat};
use spectral_harness::{run_experiment, HarnessError};

#[derive(Parser)]
#[command(name = "spectral-bench", version, about = "Validation experiments for spectral curvature learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full-matrix fixed-point / iterate matching against the EMA scheme.
    ValidateFull(Common),
    /// Kronecker fixed-point / iterate matching against the EMA scheme.
    ValidateKron(Common),
    /// SPD matrix optimization (log-det or metric nearness).
    SpdOpt(Common),
    /// Gradient-free optimization of a test function.
    Nes(Common),
    /// Train the two-layer perceptron demo.
    TrainDemo(Common),
    /// Orthogonality, accuracy and timing of the Cayley maps.
    CayleyBench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON). Without it a default spec for the subcommand is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed (overrides the spec's seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Trace output path; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    format: TraceFormat,
    /// Overrides the spec's precision.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

fn default_spec(command: &Command) -> ExperimentSpec {
    use ExperimentKind::*;
    let (id, kind, methods) = match command {
        Command::ValidateFull(_) => ("fixed_point_full", FixedPointFull, vec![Method::Spectral, Method::DefaultEma]),
        Command::ValidateKron(_) => (
            "fixed_point_kron",
            FixedPointKron,
            vec![Method::KronExact, Method::KronProjection, Method::DefaultEma],
        ),
        Command::SpdOpt(_) => ("spd_opt", SpdOpt, vec![Method::Spectral]),
        Command::Nes(_) => ("nes", Nes, vec![Method::NesSpectral]),
        Command::TrainDemo(_) => ("train_demo", TrainDemo, vec![Method::KronTruncated]),
        Command::CayleyBench(_) => ("cayley_bench", CayleyBench, vec![Method::Spectral, Method::SpectralTruncated]),
    };
    let mut spec = ExperimentSpec::new(id, kind, methods);
    spec.w2_every = 50;
    spec.record_every = 10;
    if kind == TrainDemo {
        spec.steps = 100;
        spec.record_every = 1;
    }
    spec
}

fn allowed_kinds(command: &Command) -> &'static [ExperimentKind] {
    use ExperimentKind::*;
    match command {
        Command::ValidateFull(_) => &[FixedPointFull, IterateFull],
        Command::ValidateKron(_) => &[FixedPointKron, IterateKron],
        Command::SpdOpt(_) => &[SpdOpt],
        Command::Nes(_) => &[Nes],
        Command::TrainDemo(_) => &[TrainDemo],
        Command::CayleyBench(_) => &[CayleyBench],
    }
}

fn run(command: Command) -> Result<bool, HarnessError> {
    let common = match &command {
        Command::ValidateFull(c)
        | Command::ValidateKron(c)
        | Command::SpdOpt(c)
        | Command::Nes(c)
        | Command::TrainDemo(c)
        | Command::CayleyBench(c) => c,
    };
    let mut spec = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            ExperimentSpec::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        }
        None => default_spec(&command),
    };
    if !allowed_kinds(&command).contains(&spec.kind) {
        return Err(HarnessError::Config(format!("kind '{}' does not belong to this subcommand", spec.kind.name())));
    }
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    if let Some(p) = common.precision {
        spec.precision = p;
    }
    let out = run_experiment(&spec)?;
    emit_traces(&out.records, Some(&out.metadata), &common.out, common.format)?;
    for (method, seed) in &out.metadata.failed_cells {
        eprintln!("numerical failure: method {method}, seed {seed}");
    }
    Ok(!out.all_seeds_failed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("every seed hit a numerical failure");
            ExitCode::from(3)
        }
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
