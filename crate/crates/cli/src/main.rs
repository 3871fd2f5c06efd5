use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use opsynth::orchestrator::{write_outputs, Mode, RunConfig, Synthesizer};
use opsynth::rules::{Calibration, OpAmpKind, RuleLibrary};
use opsynth::sizing::optimizer::DEFAULT_BUDGET;
use opsynth::sizing::{SpecSet, TechnologyModel};

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TypeArg {
    So,
    Fd,
    Comp,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    First,
    All,
}

/// Synthesize and size op-amp topologies for a specification.
#[derive(Parser, Debug)]
#[command(name = "synth", version)]
struct Args {
    /// Specification file (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Technology file (TOML); the built-in generic process when omitted.
    #[arg(long)]
    tech: Option<PathBuf>,
    /// Op-amp type; must agree with the spec file when given.
    #[arg(long = "type", value_enum)]
    op_type: Option<TypeArg>,
    #[arg(long, value_enum, default_value = "first")]
    mode: ModeArg,
    /// Output directory for netlists and reports.
    #[arg(long)]
    out: PathBuf,
    /// Sizing evaluations per topology.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Block multiplicity calibration manifest; the built-in one when omitted.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

fn run(args: Args) -> Result<bool> {
    let spec = SpecSet::load(&args.spec).with_context(|| format!("loading {}", args.spec.display()))?;
    for w in &spec.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(t) = args.op_type {
        let kind = match t {
            TypeArg::So => OpAmpKind::SingleOutput,
            TypeArg::Fd => OpAmpKind::FullyDifferential,
            TypeArg::Comp => OpAmpKind::Complementary,
        };
        if kind != spec.op_amp {
            bail!("--type {} disagrees with the spec's op_amp_type {}", kind, spec.op_amp);
        }
    }
    let tech = match &args.tech {
        Some(p) => TechnologyModel::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => TechnologyModel::default(),
    };
    let cal = match &args.calibration {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Calibration::from_toml(&text)?
        }
        None => Calibration::builtin(),
    };
    let lib = RuleLibrary::build(&cal)?;
    let mode = match args.mode {
        ModeArg::First => Mode::First,
        ModeArg::All => Mode::All,
    };
    let cfg = RunConfig { mode, budget: args.budget, jobs: args.jobs, seed: args.seed };
    let synth = Synthesizer::new(lib, tech);
    let run = synth.synthesize(&spec, &cfg)?;
    let out = write_outputs(&run, &synth.tech, &args.out)?;
    eprintln!(
        "{}: created {}, pruned {}, accepted {} in {:.1} s; report at {}",
        spec.name,
        run.stats.created,
        run.stats.pruned_onestage,
        run.stats.accepted,
        run.stats.wall.as_secs_f64(),
        out.report.display()
    );
    Ok(mode == Mode::All || !run.accepted.is_empty())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
