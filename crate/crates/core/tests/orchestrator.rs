mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use opsynth::bias::lint_biased;
use opsynth::orchestrator::{render_netlist, write_outputs, Mode, RunConfig, SynthError, SynthesisRun, Synthesizer};
use opsynth::rules::{Calibration, OpAmpKind, RuleLibrary};
use opsynth::sizing::spec::Bound;
use opsynth::sizing::{Environment, Feature, SpecSet, Status, TechnologyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{grown, pruning_violations, random_spec, tighten};

const BUDGET: usize = 100;

fn synth() -> &'static Synthesizer {
    static S: OnceLock<Synthesizer> = OnceLock::new();
    S.get_or_init(|| Synthesizer::new(RuleLibrary::build(&Calibration::builtin()).unwrap(), TechnologyModel::default()))
}

fn env() -> Environment {
    Environment { bias_current: 10e-6, load_capacitance: 20e-12, supply_voltage: 5.0 }
}

fn cfg(mode: Mode) -> RunConfig {
    RunConfig { mode, budget: BUDGET, jobs: 0, seed: 0 }
}

fn run(spec: &SpecSet, mode: Mode) -> SynthesisRun {
    synth().synthesize(spec, &cfg(mode)).unwrap()
}

#[test]
fn pruning_and_tightening_over_random_specs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut specs = 0;
    let mut nonempty = 0;
    while specs < 50 {
        let loose = random_spec(&mut rng, OpAmpKind::SingleOutput, env());
        if loose.bounds.is_empty() {
            continue;
        }
        specs += 1;
        let tight = tighten(&loose, &mut rng);
        let a = run(&loose, Mode::All);
        let b = run(&tight, Mode::All);
        assert_eq!(pruning_violations(&a), Vec::<String>::new());
        assert_eq!(pruning_violations(&b), Vec::<String>::new());
        assert_eq!(grown(&a, &b), Vec::<String>::new(), "tightening grew the accepted set");
        let kept = a.created.iter().filter(|c| c.stages == 1 && c.outcome.status != Status::FailStart).count();
        assert_eq!(a.pruned_onestage.len() + kept, a.created.iter().filter(|c| c.stages == 1).count());
        let fail_start: HashSet<_> = a.created.iter().filter(|c| c.outcome.status == Status::FailStart).map(|c| c.digest).collect();
        for c in b.created.iter().filter(|c| fail_start.contains(&c.digest)) {
            assert_eq!(c.outcome.status, Status::FailStart, "{}", c.id);
        }
        nonempty += usize::from(!a.accepted.is_empty());
    }
    assert!(nonempty > 0, "every random spec was empty");
}

#[test]
fn impossible_start_bound_creates_no_two_stage_topology() {
    let spec = SpecSet::unconstrained(OpAmpKind::SingleOutput, env()).with_bound(Feature::GateArea, Bound::AtMost(1.0));
    let r = run(&spec, Mode::All);
    assert!(r.created.iter().all(|c| c.stages == 1));
    assert_eq!(r.created.len(), 420);
    assert_eq!(r.pruned_onestage.len(), 420);
    assert!(r.accepted.is_empty());
}

/// Without bounds only cores that admit no valid operating point fail the
/// start gate; every other core and every child of a kept core is created.
#[test]
fn unconstrained_runs_prune_only_unsizable_cores() {
    let so = run(&SpecSet::unconstrained(OpAmpKind::SingleOutput, env()), Mode::All);
    let pruned: HashSet<_> = so.created.iter().filter(|c| c.outcome.status == Status::FailStart).map(|c| c.digest).collect();
    for c in so.created.iter().filter(|c| c.outcome.status == Status::FailStart) {
        assert!(c.outcome.perf.is_none(), "{} failed the start gate with a valid sizing", c.id);
    }
    let children = synth()
        .topologies(opsynth::rules::OpAmpType::new(OpAmpKind::SingleOutput, opsynth::rules::Variant::TwoStage).unwrap())
        .unwrap();
    let kept = children.iter().filter(|p| !pruned.contains(&p.topology.parent.unwrap())).count();
    assert_eq!(so.created.len(), 420 + kept);
    assert!(so.created.len() <= 2940);
    let comp = run(&SpecSet::unconstrained(OpAmpKind::Complementary, env()), Mode::All);
    assert_eq!(comp.created.len(), 36);
    let first = run(&SpecSet::unconstrained(OpAmpKind::Complementary, env()), Mode::First);
    assert_eq!(first.created.len(), 36);
}

#[test]
fn mode_first_stops_at_first_acceptance() {
    let spec = SpecSet::unconstrained(OpAmpKind::SingleOutput, env());
    let r = run(&spec, Mode::First);
    assert_eq!(r.accepted.len(), 1);
    assert_eq!(r.created.last().unwrap().outcome.status, Status::PassAll);
    assert!(r.created.len() < 2940);
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = SpecSet::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs/specs6.toml"))).unwrap();
    let tech = TechnologyModel::default();
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (jobs, dir) in [1, 4].into_iter().zip(&dirs) {
        let own = Synthesizer::new(RuleLibrary::build(&Calibration::builtin()).unwrap(), tech.clone());
        let r = own.synthesize(&spec, &RunConfig { jobs, ..cfg(Mode::All) }).unwrap();
        write_outputs(&r, &tech, dir.path()).unwrap();
    }
    for name in ["summary.json", "report.txt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn outputs_hold_one_linted_netlist_per_accepted_topology() {
    let spec = SpecSet::unconstrained(OpAmpKind::Complementary, env());
    let r = run(&spec, Mode::All);
    let dir = tempfile::tempdir().unwrap();
    let out = write_outputs(&r, &synth().tech, dir.path()).unwrap();
    assert_eq!(out.netlists.len(), r.accepted.len());
    for c in r.created.iter().filter(|c| c.outcome.status == Status::PassAll) {
        let text = std::fs::read_to_string(dir.path().join("netlists").join(format!("{}.sp", c.digest.hex()))).unwrap();
        assert!(text.contains(&format!("* digest {}", c.digest.hex())));
        assert_eq!(text, render_netlist(c, &synth().tech).unwrap());
        lint_biased(&c.prepared.circuit.op).unwrap();
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out.summary).unwrap()).unwrap();
    assert_eq!(summary["counts"]["created"], 36);
    assert_eq!(summary["accepted"].as_array().unwrap().len(), r.accepted.len());
    let report = std::fs::read_to_string(&out.report).unwrap();
    assert!(report.contains("mode all"));
}

#[test]
fn zero_budget_is_rejected() {
    let spec = SpecSet::unconstrained(OpAmpKind::Complementary, env());
    let err = synth().synthesize(&spec, &RunConfig { budget: 0, ..cfg(Mode::All) }).unwrap_err();
    assert!(matches!(err, SynthError::Budget));
}
