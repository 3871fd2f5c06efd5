#![allow(dead_code)]
//! Helpers shared by the integration tests: a brute-force composer oracle
//! and random spec generation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, OnceLock};

use indexmap::IndexMap;
use itertools::Itertools;
use opsynth::composer::{apply_guards, compose, fulfilles_rules, ComposerTask, RaMode, Selector};
use opsynth::library::{cascode_cb_task, cascode_vb_task, dp_task, simple_cb_task, simple_vb_task};
use opsynth::netlist::{BlockInstance, DeviceKind, PinRef, SizingVector};
use opsynth::orchestrator::SynthesisRun;
use opsynth::rules::{enumerate_topologies, hl3, Calibration, OpAmpKind, OpAmpType, RuleLibrary, Topology, Variant};
use opsynth::sizing::optimizer::DesignSpace;
use opsynth::sizing::spec::Bound;
use opsynth::sizing::{evaluate, explore, Circuit, Environment, Feature, SpecSet, Status, TechnologyModel};
use opsynth::{Doping, ImplementationStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lib() -> &'static RuleLibrary {
    static LIB: OnceLock<RuleLibrary> = OnceLock::new();
    LIB.get_or_init(|| RuleLibrary::build(&Calibration::builtin()).unwrap())
}

pub const MAX_TRANSISTORS: usize = 4;

/// Canonical form by trying every device order: device labels, terminal nets
/// renumbered by first appearance, then the pin labels of each net.
pub fn brute_canon(inst: &BlockInstance) -> String {
    let flat = inst.flat();
    let n = flat.devices.len();
    let labels = flat.net_labels();
    let mut best: Option<String> = None;
    for perm in (0..n).permutations(n) {
        let mut renum: Vec<Option<usize>> = vec![None; flat.net_count];
        let mut next = 0;
        let mut s = String::new();
        for &i in &perm {
            let d = &flat.devices[i];
            let lab = match (d.kind, d.doping) {
                (DeviceKind::Capacitor, _) => "c".to_string(),
                (_, Some(p)) => format!("t{p}"),
                (_, None) => "t".to_string(),
            };
            s.push_str(&lab);
            let used = if d.is_transistor() { 3 } else { 2 };
            for k in 0..used {
                let net = flat.net(i, k) as usize;
                let id = *renum[net].get_or_insert_with(|| {
                    next += 1;
                    next - 1
                });
                s.push_str(&format!(".{id}"));
            }
            s.push('|');
        }
        let mut order: Vec<(usize, usize)> = renum.iter().enumerate().filter_map(|(net, r)| r.map(|r| (r, net))).collect();
        order.sort();
        for (_, net) in order {
            s.push_str(&format!("[{}]", labels[net].join(",")));
        }
        if best.as_ref().is_none_or(|b| s < *b) {
            best = Some(s);
        }
    }
    best.unwrap_or_default()
}

pub fn resolve(sel: &Selector, tuple: &[Arc<BlockInstance>]) -> Vec<PinRef> {
    sel.pins.iter().filter(|p| tuple[sel.set].has_pin(p)).map(|p| PinRef::child(sel.set, p)).collect()
}

/// All ways of realizing a list of connection specs on a tuple.
pub fn options(specs: &[opsynth::composer::ConnectionSpec], tuple: &[Arc<BlockInstance>]) -> Vec<Vec<(PinRef, PinRef)>> {
    let mut acc: Vec<Vec<(PinRef, PinRef)>> = vec![Vec::new()];
    for spec in specs {
        if spec.when.as_ref().is_some_and(|g| !g.holds(tuple)) {
            continue;
        }
        let pairs: Vec<(PinRef, PinRef)> =
            resolve(&spec.left, tuple).into_iter().flat_map(|l| resolve(&spec.right, tuple).into_iter().map(move |r| (l.clone(), r))).collect();
        let mut next = Vec::new();
        for a in &acc {
            for p in &pairs {
                let mut v = a.clone();
                v.push(p.clone());
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}

/// Independent enumeration of a task's implementations up to isomorphism.
pub fn oracle(task: &ComposerTask) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let n_add = task.additional.len();
    // Admissible subsets of additional sets: none or any single one when
    // independent; prefixes when cumulative.
    let subsets: Vec<Vec<usize>> = match task.ra_mode {
        RaMode::Independent => std::iter::once(vec![]).chain((0..n_add).map(|k| vec![k])).collect(),
        RaMode::Cumulative => (0..=n_add).map(|k| (0..k).collect()).collect(),
    };
    let mut idx = vec![0usize; task.sets.len()];
    loop {
        let tuple: Vec<Arc<BlockInstance>> = idx.iter().enumerate().map(|(j, &k)| task.sets[j][k].clone()).collect();
        let nt: usize = tuple.iter().map(|t| t.n_t()).sum();
        if nt <= MAX_TRANSISTORS && apply_guards(&tuple, &task.guards) {
            let mut pins = IndexMap::new();
            for (name, sel) in &task.pins {
                if let Some(r) = resolve(sel, &tuple).into_iter().next() {
                    pins.insert(name.clone(), r);
                }
            }
            for base in options(&task.characteristic, &tuple) {
                for subset in &subsets {
                    let mut combos = vec![base.clone()];
                    for &k in subset {
                        let extra = options(&task.additional[k], &tuple);
                        combos = combos.iter().flat_map(|c| extra.iter().map(move |e| [c.clone(), e.clone()].concat())).collect();
                    }
                    for conns in combos {
                        let name = match task.doping {
                            Some(d) => format!("{}_{}", task.result_type, d),
                            None => task.result_type.to_string(),
                        };
                        let cand = BlockInstance::composite(name, task.result_type, task.doping, tuple.clone(), conns, pins.clone());
                        if fulfilles_rules(&cand, &task.rules).is_ok() {
                            out.insert(brute_canon(&cand));
                        }
                    }
                }
            }
        }
        let mut j = 0;
        loop {
            if j == idx.len() {
                return out;
            }
            idx[j] += 1;
            if idx[j] < task.sets[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Compares compose's output on a task with the oracle; returns the number
/// of instances checked.
pub fn check_task(name: &str, task: &ComposerTask) -> Result<usize, String> {
    let composed: Vec<Arc<BlockInstance>> =
        compose(task).map_err(|e| format!("{name}: {e}"))?.into_iter().filter(|i| i.n_t() <= MAX_TRANSISTORS).collect();
    let forms: Vec<String> = composed.iter().map(|i| brute_canon(i)).collect();
    let distinct: BTreeSet<String> = forms.iter().cloned().collect();
    if distinct.len() != forms.len() {
        return Err(format!("{name}: composer kept {} isomorphic duplicates", forms.len() - distinct.len()));
    }
    let expected = oracle(task);
    if distinct != expected {
        let missing = expected.difference(&distinct).count();
        let extra = distinct.difference(&expected).count();
        return Err(format!("{name}: {missing} missing and {extra} extra implementations"));
    }
    Ok(forms.len())
}


pub fn hl2_tasks() -> Vec<(String, ComposerTask)> {
    let mut v = Vec::new();
    for d in Doping::BOTH {
        v.push((format!("vb_simple_{d}"), simple_vb_task(d)));
        v.push((format!("vb_cascode_{d}/independent"), cascode_vb_task(d, RaMode::Independent)));
        v.push((format!("vb_cascode_{d}/cumulative"), cascode_vb_task(d, RaMode::Cumulative)));
        v.push((format!("cb_simple_{d}"), simple_cb_task(d)));
        v.push((format!("cb_cascode_{d}"), cascode_cb_task(d, true)));
        v.push((format!("cb_cascode_{d}/no_diode"), cascode_cb_task(d, false)));
        v.push((format!("dp_{d}"), dp_task(d)));
    }
    v
}

pub fn hl3_tasks(s: &ImplementationStore) -> Vec<(String, ComposerTask)> {
    let mut v = Vec::new();
    for d in Doping::BOTH {
        for (name, task) in [
            ("lp_st", hl3::lp_st_task(s, d)),
            ("lp_cas", hl3::lp_cas_task(s, d)),
            ("lp_vb", hl3::lp_vb_task(s, d)),
            ("load_1", hl3::load1_task(s, d)),
            ("tc_s", hl3::tc_s_task(s, d)),
            ("b_s", hl3::b_s_task(s, d)),
            ("tc_inv", hl3::tc_inv_task(s, d)),
            ("tc_cmfb", hl3::tc_cmfb_task(s, d)),
            ("load_2_tel", hl3::load2_tel_task(s, d)),
            ("load_2_fc", hl3::load2_fc_task(s, d)),
        ] {
            v.push((format!("{name}_{d}"), task));
        }
    }
    v.push(("tc_c".into(), hl3::tc_c_task(s)));
    v.push(("load_2_c".into(), hl3::load2_c_task(s)));
    v
}

pub fn random_spec(rng: &mut ChaCha8Rng, kind: OpAmpKind, env: Environment) -> SpecSet {
    let mut s = SpecSet::unconstrained(kind, env);
    let log = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo * (hi / lo).powf(rng.gen::<f64>());
    for f in Feature::ALL {
        if rng.gen_bool(0.5) {
            continue;
        }
        let b = match f {
            Feature::GateArea => Bound::AtMost(log(rng, 50.0, 1e5)),
            Feature::Power => Bound::AtMost(log(rng, 1e-5, 1e-2)),
            Feature::PhaseMargin => Bound::AtLeast(rng.gen_range(30.0..89.0)),
            Feature::Cmrr => Bound::AtLeast(rng.gen_range(40.0..140.0)),
            Feature::Gain => Bound::AtLeast(rng.gen_range(30.0..110.0)),
            Feature::Gbw => Bound::AtLeast(log(rng, 1e4, 1e8)),
            Feature::SlewRate => Bound::AtLeast(log(rng, 1e5, 1e8)),
            Feature::Cmir | Feature::OutputSwing => {
                let mid = rng.gen_range(1.5..3.5);
                let half = rng.gen_range(0.0..1.5);
                Bound::Range(mid - half, mid + half)
            }
        };
        s = s.with_bound(f, b);
    }
    s
}

/// The same spec with one bound made strictly harder.
pub fn tighten(s: &SpecSet, rng: &mut ChaCha8Rng) -> SpecSet {
    let keys: Vec<Feature> = s.bounds.keys().copied().collect();
    let f = keys[rng.gen_range(0..keys.len())];
    let k = rng.gen_range(0.05..0.5);
    let b = match s.bounds[&f] {
        Bound::AtMost(v) => Bound::AtMost(v * (1.0 - k)),
        Bound::AtLeast(v) => Bound::AtLeast(if v > 0.0 { v * (1.0 + k) } else { v + 10.0 * k }),
        Bound::Range(lo, hi) => Bound::Range(lo - k, hi + k),
    };
    s.clone().with_bound(f, b)
}

/// Two-stage topologies created under a parent that failed the start gate
/// or was never sized.
pub fn pruning_violations(r: &SynthesisRun) -> Vec<String> {
    let status: HashMap<_, _> = r.created.iter().map(|c| (c.digest, c.outcome.status)).collect();
    r.created
        .iter()
        .filter(|c| c.stages == 2)
        .filter(|c| c.parent.is_none_or(|p| status.get(&p).is_none_or(|s| *s == Status::FailStart)))
        .map(|c| c.id.clone())
        .collect()
}

/// Ids accepted under `tight` but not under `loose`.
pub fn grown(loose: &SynthesisRun, tight: &SynthesisRun) -> Vec<String> {
    let a: HashSet<&String> = loose.accepted.iter().collect();
    tight.accepted.iter().filter(|id| !a.contains(id)).cloned().collect()
}

/// Feasible sizings found by short explorations of a spread of topologies.
pub fn feasible_points(n: usize, seed: u64, env: Environment) -> Vec<(Circuit, SizingVector)> {
    let tech = TechnologyModel::default();
    let mut all: Vec<Topology> = Vec::new();
    for (k, v) in [
        (OpAmpKind::SingleOutput, Variant::OneStage),
        (OpAmpKind::SingleOutput, Variant::TwoStage),
        (OpAmpKind::FullyDifferential, Variant::OneStage),
        (OpAmpKind::Complementary, Variant::OneStage),
    ] {
        all.extend(enumerate_topologies(lib(), OpAmpType::new(k, v).unwrap()).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let mut out = Vec::new();
    for top in all {
        if out.len() >= n {
            break;
        }
        let c = Circuit::prepare(&top, &lib().store).unwrap();
        let exp = explore(&c, &tech, &env, 200, seed);
        let Some(cand) = exp.candidates.first() else { continue };
        let s = DesignSpace::new(&c).realize(&c, &cand.x, &tech, &env).unwrap();
        if evaluate(&c, &s, &tech, &env).is_ok() {
            out.push((c, s));
        }
    }
    assert_eq!(out.len(), n, "not enough feasible points");
    out
}
