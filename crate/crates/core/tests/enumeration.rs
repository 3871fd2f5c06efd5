use std::collections::HashSet;
use std::time::{Duration, Instant};

use opsynth::bias::{lint_biased, synthesize_bias, VbKind, VbRole};
use opsynth::rules::{enumerate_topologies, Calibration, OpAmpKind, OpAmpType, RuleLibrary, Variant};
use opsynth::{BlockType, Doping};

#[test]
fn structural_counts_hold_together() {
    let t0 = Instant::now();
    let cal = Calibration::builtin();
    let lib = RuleLibrary::build(&cal).unwrap();
    let count = |k, v| enumerate_topologies(&lib, OpAmpType::new(k, v).unwrap()).unwrap().len();
    let so1 = count(OpAmpKind::SingleOutput, Variant::OneStage);
    let so2 = count(OpAmpKind::SingleOutput, Variant::TwoStage);
    let sosym = count(OpAmpKind::SingleOutput, Variant::Symmetrical);
    let fd1 = count(OpAmpKind::FullyDifferential, Variant::OneStage);
    let fd2 = count(OpAmpKind::FullyDifferential, Variant::TwoStage);
    let comp = count(OpAmpKind::Complementary, Variant::OneStage);
    assert_eq!(lib.load_part_count(), 24);
    // First-stage count: one-stage cores of the three kinds.
    assert_eq!(so1 + fd1 + comp, 318);
    assert_eq!(so1, 210);
    assert_eq!(so1 + so2 + sosym, 2940);
    assert_eq!(fd1, 72);
    assert_eq!(fd2, 864);
    assert_eq!(fd1 + fd2, 936);
    assert_eq!(comp, 36);
    let e = &cal.expected;
    assert_eq!(
        (e.load_parts, e.first_stages, e.so_one_stage, e.so_total, e.fd_one_stage, e.fd_two_stage, e.comp),
        (24, 318, 210, 2940, 72, 864, 36)
    );
    assert!(t0.elapsed() < Duration::from_secs(300));
}

#[test]
fn shipped_calibration_file_matches_builtin() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/calibration.toml")).unwrap();
    assert_eq!(Calibration::from_toml(&text).unwrap(), Calibration::builtin());
    assert!(Calibration::from_toml("[hl2]\nunknown = 1\n").is_err());
}

#[test]
fn calibration_choices_change_the_library() {
    let mut cal = Calibration::builtin();
    cal.hl2.cascode_cb_diode_lower = false;
    let lib = RuleLibrary::build(&cal).unwrap();
    assert_eq!(lib.store.count(BlockType::CbCascode), 2);
    assert!(lib.load_part_count() < 24);
}

#[test]
fn topologies_are_unique_and_two_stage_parents_exist() {
    let lib = RuleLibrary::build(&Calibration::builtin()).unwrap();
    for t in OpAmpType::all() {
        let tops = enumerate_topologies(&lib, t).unwrap();
        let digests: HashSet<_> = tops.iter().map(|t| t.digest).collect();
        assert_eq!(digests.len(), tops.len(), "{t}");
        if t.has_parent() {
            let one = enumerate_topologies(&lib, OpAmpType::new(t.kind, Variant::OneStage).unwrap()).unwrap();
            let parents: HashSet<_> = one.iter().map(|t| t.digest).collect();
            for top in &tops {
                assert!(top.parent.is_some_and(|p| parents.contains(&p)), "{}", top.id);
            }
        }
    }
}

#[test]
fn every_topology_gets_a_complete_bias() {
    let lib = RuleLibrary::build(&Calibration::builtin()).unwrap();
    let mut n = 0;
    for t in OpAmpType::all() {
        for top in enumerate_topologies(&lib, t).unwrap() {
            let (op, plan) = synthesize_bias(&top.core, &lib.store).unwrap();
            assert_eq!(plan.cb_count() + 1, plan.vb_count(), "{}", top.id);
            lint_biased(&op).unwrap_or_else(|e| panic!("{}: {e}", top.id));
            n += 1;
        }
    }
    assert_eq!(n, 2940 + 936 + 36);
}

/// Folded-cascode fully-differential core with cascode-mirror loads, a
/// simple tail and a diode-biased CMFB stage.
const WALKTHROUGH: &str = "op_fd_1(a_fc_p(tc_s_p(dp_p(nt,nt)),b_s_p(cb_simple_p(nt)),load_2_p(l_p_st_p(cb_cascode_p(nt,nt),cb_cascode_p(nt,nt)),l_p_st_n(cb_cascode_n(nt,nt),cb_cascode_n(nt,nt)))),a_cmfb_p(tc_cmfb_p(dp_p(nt,nt),dp_p(nt,nt)),b_s_p(cb_simple_p(nt)),b_s_p(cb_simple_p(nt)),l_p_vb_n(vb_simple_n(dt),vb_simple_n(dt))))";

#[test]
fn folded_cascode_walkthrough_bias() {
    let lib = RuleLibrary::build(&Calibration::builtin()).unwrap();
    let tops = enumerate_topologies(&lib, OpAmpType::new(OpAmpKind::FullyDifferential, Variant::OneStage).unwrap()).unwrap();
    let top = tops.iter().find(|t| t.core.decomposition() == WALKTHROUGH).expect("walk-through core is enumerated");
    let (op, plan) = synthesize_bias(&top.core, &lib.store).unwrap();

    let core_vbs: Vec<_> = plan.vbs.iter().filter(|v| v.role == VbRole::Core).collect();
    let dis: Vec<_> = plan.vbs.iter().enumerate().filter(|(_, v)| v.role == VbRole::Distributor).collect();
    assert_eq!(core_vbs.len(), 3);
    assert_eq!(dis.len(), 1);
    assert_eq!(plan.vb_dis, vec![dis[0].0]);
    assert_eq!(plan.cb_count(), 3);
    assert!(plan.vbs.iter().all(|v| v.kind == VbKind::Simple));

    let pin = &plan.vbs[plan.vb_bias];
    assert_eq!((pin.kind, pin.doping, pin.at_rail, pin.role), (VbKind::Simple, Doping::P, true, VbRole::Core));
    // The bias-pin vb supplies the tail and the two CMFB tails.
    assert_eq!(pin.out1.len(), 5);

    let core_dopings: Vec<Doping> = core_vbs.iter().map(|v| v.doping).collect();
    assert_eq!(core_dopings.iter().filter(|&&d| d == Doping::P).count(), 2);
    assert_eq!(core_dopings.iter().filter(|&&d| d == Doping::N).count(), 1);
    // Every vb other than the bias-pin one is fed by exactly one cb.
    let mut fed: Vec<usize> = plan.cbs.iter().map(|c| c.feeds).collect();
    fed.sort();
    let mut others: Vec<usize> = (0..plan.vb_count()).filter(|&i| i != plan.vb_bias).collect();
    others.sort();
    assert_eq!(fed, others);
    lint_biased(&op).unwrap();
    assert_eq!(
        op.children[1].decomposition(),
        "b_O(vb_simple_p(dt),vb_simple_p(dt),vb_simple_n(dt),vb_simple_n(dt),cb_simple_n(nt),cb_simple_p(nt),cb_simple_p(nt))"
    );
}
