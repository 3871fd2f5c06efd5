use std::sync::OnceLock;

use opsynth::rules::{enumerate_topologies, Calibration, OpAmpKind, OpAmpType, RuleLibrary, Topology, Variant};
use opsynth::sizing::optimizer::{early_abort, lower_bounds};
use opsynth::sizing::spec::Bound;
use opsynth::sizing::{explore, select, size, Circuit, Environment, Feature, SpecSet, Status, TechnologyModel};
use proptest::prelude::*;

fn lib() -> &'static RuleLibrary {
    static LIB: OnceLock<RuleLibrary> = OnceLock::new();
    LIB.get_or_init(|| RuleLibrary::build(&Calibration::builtin()).unwrap())
}

fn so1() -> &'static Vec<Topology> {
    static T: OnceLock<Vec<Topology>> = OnceLock::new();
    T.get_or_init(|| enumerate_topologies(lib(), OpAmpType::new(OpAmpKind::SingleOutput, Variant::OneStage).unwrap()).unwrap())
}

fn env() -> Environment {
    Environment { bias_current: 10e-6, load_capacitance: 20e-12, supply_voltage: 5.0 }
}

fn trivial() -> SpecSet {
    SpecSet::unconstrained(OpAmpKind::SingleOutput, env())
}

/// Simple-stage amplifier with a diode-connected current-mirror load.
const MIRROR_AMP: &str = "op_so_1(a_s_p(tc_s_p(dp_p(nt,nt)),b_s_p(cb_simple_p(nt)),load_1_n(l_p_st_n(vb_simple_n(dt),cb_simple_n(nt)))))";

fn plain_mirror_amp() -> Circuit {
    let top = so1().iter().find(|t| t.core.decomposition() == MIRROR_AMP).expect("mirror-loaded amplifier is enumerated");
    Circuit::prepare(top, &lib().store).unwrap()
}

#[test]
fn unconstrained_spec_passes() {
    let tech = TechnologyModel::default();
    let c = plain_mirror_amp();
    let exp = explore(&c, &tech, &env(), 600, 0);
    let out = select(&c, &trivial(), &tech, &exp);
    assert_eq!(out.status, Status::PassAll);
    let first = exp.first_feasible.expect("a feasible point exists");
    assert!(out.first_pass.unwrap() >= first);
    assert!(out.sizing.is_some() && out.perf.is_some());
}

#[test]
fn impossible_area_aborts_before_sizing() {
    let tech = TechnologyModel::default();
    let c = plain_mirror_amp();
    let (area, power) = lower_bounds(&c, &tech, &env());
    // Oracle: every transistor at minimum W and L.
    let min_area = c.flat.transistors().count() as f64 * tech.w_min * tech.l_min;
    assert_eq!(area, min_area);
    let tight = trivial().with_bound(Feature::GateArea, Bound::AtMost(0.5 * min_area));
    let out = size(&c, &tight, &tech, 600, 0);
    assert_eq!((out.status, out.evaluations_used), (Status::FailStart, 0));
    let tight = trivial().with_bound(Feature::Power, Bound::AtMost(0.5 * power));
    assert_eq!(size(&c, &tight, &tech, 600, 0).status, Status::FailStart);
    let loose = trivial().with_bound(Feature::GateArea, Bound::AtMost(2.0 * min_area));
    assert!(!early_abort(&c, &loose, &tech));
}

/// Exact low-frequency gain of a mirror-loaded pair with a finite tail,
/// from a three-node solve (tail source, diode node, output). Every
/// conductance scales with the branch current, so the gain does not.
fn mirror_pair_gain(tech: &TechnologyModel, vov_in: f64, vov_load: f64, l_in: f64, l_load: f64, l_tail: f64) -> f64 {
    let i = 1.0;
    let (gm1, gds1) = (2.0 * i / vov_in, i / (tech.p.va_per_um * l_in));
    let (gm3, gds3) = (2.0 * i / vov_load, i / (tech.n.va_per_um * l_load));
    let g5 = 2.0 * i / (tech.p.va_per_um * l_tail);
    // Unknowns: s (sources), a (diode), o (output); gates of the pair held.
    let g = nalgebra::Matrix3::new(
        2.0 * (gm1 + gds1) + g5, -gds1, -gds1,
        -(gm1 + gds1), gds1 + gm3 + gds3, 0.0,
        -(gm1 + gds1), gm3, gds1 + gds3,
    );
    let v = g.lu().solve(&nalgebra::Vector3::new(0.0, 0.0, 1.0)).expect("nonsingular");
    gm1 * v[2]
}

#[test]
fn short_channels_cannot_reach_high_gain() {
    let tech = TechnologyModel { l_max: 0.6, ..TechnologyModel::default() };
    let grid = |lo: f64, hi: f64, n: u32| (0..=n).map(move |k| lo + (hi - lo) * f64::from(k) / f64::from(n));
    let mut best: f64 = 0.0;
    for vi in grid(tech.vov_min, tech.vov_max, 24) {
        for vl in grid(tech.vov_min, tech.vov_max, 8) {
            for li in grid(tech.l_min, tech.l_max, 4) {
                for ll in grid(tech.l_min, tech.l_max, 4) {
                    for lt in grid(tech.l_min, tech.l_max, 4) {
                        best = best.max(mirror_pair_gain(&tech, vi, vl, li, ll, lt));
                    }
                }
            }
        }
    }
    let best_db = 20.0 * best.log10();
    assert!(best_db < 80.0);
    let c = plain_mirror_amp();
    let spec = trivial().with_bound(Feature::Gain, Bound::AtLeast(80.0));
    let out = size(&c, &spec, &tech, 4000, 0);
    assert_eq!(out.status, Status::FailEnd);
    let got = out.perf.unwrap().gain;
    assert!(got <= best_db + 1e-6, "{got} > {best_db}");
}

#[test]
fn sizing_is_deterministic() {
    let tech = TechnologyModel::default();
    let spec = SpecSet::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs/specs1.toml"))).unwrap();
    for top in so1().iter().step_by(21) {
        let c = Circuit::prepare(top, &lib().store).unwrap();
        assert_eq!(size(&c, &spec, &tech, 300, 4), size(&c, &spec, &tech, 300, 4), "{}", top.id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The closed-form extrema behind early abort are true lower bounds, so
    /// an aborted topology has no sizing meeting the bound.
    #[test]
    fn early_abort_bounds_are_sound(pick in any::<prop::sample::Index>(), seed in 0u64..1000) {
        let tech = TechnologyModel::default();
        let top = &so1()[pick.index(so1().len())];
        let c = Circuit::prepare(top, &lib().store).unwrap();
        let (area, power) = lower_bounds(&c, &tech, &env());
        let exp = explore(&c, &tech, &env(), 150, seed);
        for k in &exp.candidates {
            prop_assert!(k.perf.gate_area >= area * (1.0 - 1e-12));
            prop_assert!(k.perf.power >= power * (1.0 - 1e-12));
        }
    }
}
