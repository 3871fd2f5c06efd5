//! Amplification stages: first stages, inverting second stages, the
//! symmetrical and CMFB stages, and the complementary stage.

use std::sync::Arc;

use crate::composer::{compose, ComposeError, ComposerTask, ConnectionSpec, Guard, Selector};
use crate::library::{BlockType, ImplementationStore, Impls};
use crate::netlist::{BlockInstance, Doping};

use super::hl3::{is_telescopic, load_parts, voltage_biases};
use super::{Calibration, OpAmpKind};

fn sel(set: usize, pin: &'static str) -> Selector {
    Selector::pin(set, pin)
}

fn conn(a: Selector, b: Selector) -> ConnectionSpec {
    ConnectionSpec::new(a, b)
}

fn rail(d: Doping) -> &'static str {
    match d {
        Doping::N => "rail_n",
        Doping::P => "rail_p",
    }
}

/// The load child of a first stage.
pub fn stage_load(stage: &BlockInstance) -> &BlockInstance {
    &stage.children[2]
}

fn load_guard(cal: &Calibration, kinds: &'static [OpAmpKind]) -> Guard {
    let rules: Vec<_> = kinds.iter().map(|&k| cal.load_rule(k).clone()).collect();
    Guard::custom("load rule", move |t| {
        let parts = load_parts(&t[2]);
        rules.iter().any(|r| r.admits(&parts))
    })
}

const FIRST_STAGE_KINDS: &[OpAmpKind] = &[OpAmpKind::SingleOutput, OpAmpKind::FullyDifferential];

/// Simple first stage: differential pair, stage bias, one-part load of the
/// other doping.
pub fn a_s_task(store: &ImplementationStore, cal: &Calibration, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::AS,
        Some(d),
        vec![store.of(BlockType::TcS, d).clone(), store.of(BlockType::Bs, d).clone(), store.of(BlockType::Load1, o).clone()],
    )
    .guards(vec![load_guard(cal, FIRST_STAGE_KINDS)])
    .characteristic(vec![
        conn(sel(0, "source"), sel(1, "out")),
        conn(sel(0, "out1"), sel(2, "out1")),
        conn(sel(0, "out2"), sel(2, "out2")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out1", sel(2, "out1")),
        ("out2", sel(2, "out2")),
        ("cmfb_in", sel(2, "in1")),
        (rail(d), sel(1, "source")),
        (rail(o), sel(2, "source")),
    ])
}

fn load2_flavour(store: &ImplementationStore, d: Doping, telescopic: bool) -> Impls {
    store.of(BlockType::Load2, d).iter().filter(|l| is_telescopic(l) == telescopic).cloned().collect()
}

/// Telescopic first stage: pair outputs drive the sources of the cascode part.
pub fn a_tel_task(store: &ImplementationStore, cal: &Calibration, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::ATel,
        Some(d),
        vec![store.of(BlockType::TcS, d).clone(), store.of(BlockType::Bs, d).clone(), load2_flavour(store, d, true)],
    )
    .guards(vec![load_guard(cal, FIRST_STAGE_KINDS)])
    .characteristic(vec![
        conn(sel(0, "source"), sel(1, "out")),
        conn(sel(0, "out1"), sel(2, "source1_lp1")),
        conn(sel(0, "out2"), sel(2, "source2_lp1")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out1", sel(2, "out1")),
        ("out2", sel(2, "out2")),
        ("cmfb_in", sel(2, "in1_lp2")),
        (rail(d), sel(1, "source")),
        (rail(o), sel(2, "source_lp2")),
    ])
}

/// Folded-cascode first stage: pair outputs fold into the inner nodes of the
/// other-doping part.
pub fn a_fc_task(store: &ImplementationStore, cal: &Calibration, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::AFc,
        Some(d),
        vec![store.of(BlockType::TcS, d).clone(), store.of(BlockType::Bs, d).clone(), load2_flavour(store, d, false)],
    )
    .guards(vec![load_guard(cal, FIRST_STAGE_KINDS)])
    .characteristic(vec![
        conn(sel(0, "source"), sel(1, "out")),
        conn(sel(0, "out1"), sel(2, "inner1_lp2")),
        conn(sel(0, "out2"), sel(2, "inner2_lp2")),
        conn(sel(1, "source"), sel(2, "source_lp1")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out1", sel(2, "out1")),
        ("out2", sel(2, "out2")),
        ("cmfb_in", sel(2, "in1_lp2")),
        (rail(d), sel(1, "source")),
        (rail(o), sel(2, "source_lp2")),
    ])
}

/// Inverting stage: inverting transconductance loaded by a stage bias of the
/// other doping.
pub fn a_inv_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::AInv,
        Some(d),
        vec![store.of(BlockType::TcInv, d).clone(), store.of(BlockType::Bs, o).clone()],
    )
    .characteristic(vec![conn(sel(0, "out"), sel(1, "out"))])
    .pins(&[
        ("in_tc1", sel(0, "in1")),
        ("out", sel(0, "out")),
        ("in_bs1", sel(1, "in1")),
        (rail(d), sel(0, "source")),
        (rail(o), sel(1, "source")),
        ("in_tc2", sel(0, "in2")),
        ("in_bs2", sel(1, "in2")),
    ])
}

/// Inverting stage loaded by a voltage bias, the diode side of a mirror.
pub fn a_inv_vb_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(BlockType::AInvVb, Some(d), vec![store.of(BlockType::TcInv, d).clone(), voltage_biases(store, o)])
        .characteristic(vec![conn(sel(0, "out"), sel(1, "in"))])
        .pins(&[
            ("in_tc1", sel(0, "in1")),
            ("out", sel(0, "out")),
            ("out_bs1", sel(1, "out1")),
            (rail(d), sel(0, "source")),
            (rail(o), sel(1, "source")),
            ("in_tc2", sel(0, "in2")),
            ("out_bs2", sel(1, "out2")),
        ])
}

/// First stage of the symmetrical op-amp: pair outputs into the inputs of a
/// two-vb load.
pub fn a_sym_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::ASym,
        Some(d),
        vec![store.of(BlockType::TcS, d).clone(), store.of(BlockType::Bs, d).clone(), store.of(BlockType::LpVb, o).clone()],
    )
    .characteristic(vec![
        conn(sel(0, "source"), sel(1, "out")),
        conn(sel(0, "out1"), sel(2, "in1")),
        conn(sel(0, "out2"), sel(2, "in2")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out11", sel(2, "out11")),
        ("out21", sel(2, "out21")),
        (rail(d), sel(1, "source")),
        (rail(o), sel(2, "source")),
        ("out12", sel(2, "out12")),
        ("out22", sel(2, "out22")),
    ])
}

/// CMFB stage: cross-coupled pairs, two identical stage biases, and a
/// two-transistor vb load whose first output is the control voltage.
pub fn a_cmfb_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    let bs = store.of(BlockType::Bs, d).clone();
    ComposerTask::new(
        BlockType::ACmfb,
        Some(d),
        vec![store.of(BlockType::TcCmfb, d).clone(), bs.clone(), bs, store.of(BlockType::LpVb, o).clone()],
    )
    .guards(vec![Guard::Identical(1, 2), Guard::TransistorCount(3, 2)])
    .characteristic(vec![
        conn(sel(0, "source1"), sel(1, "out")),
        conn(sel(0, "source2"), sel(2, "out")),
        conn(sel(0, "out1"), sel(3, "in1")),
        conn(sel(0, "out2"), sel(3, "in2")),
        conn(sel(1, "source"), sel(2, "source")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("vref", sel(0, "vref")),
        ("out", sel(3, "out11")),
        (rail(d), sel(1, "source")),
        (rail(o), sel(3, "source")),
    ])
}

/// Complementary stage: both pairs fold into the opposite-doping part of an
/// eight-transistor load; stage biases are doping mirrors of each other.
pub fn a_c_task(store: &ImplementationStore, cal: &Calibration) -> ComposerTask {
    let rule = cal.load_rule(OpAmpKind::Complementary).clone();
    ComposerTask::new(
        BlockType::AC,
        None,
        vec![
            store.get(BlockType::TcC, None).expect("tc_c built").clone(),
            store.of(BlockType::Bs, Doping::N).clone(),
            store.of(BlockType::Bs, Doping::P).clone(),
            store.get(BlockType::Load2, None).expect("complementary loads built").clone(),
        ],
    )
    .guards(vec![
        Guard::Sym(1, 2),
        Guard::custom("load rule", move |t| rule.admits(&load_parts(&t[3]))),
    ])
    .characteristic(vec![
        conn(sel(0, "source_n"), sel(1, "out")),
        conn(sel(0, "source_p"), sel(2, "out")),
        conn(sel(0, "out1_n"), sel(3, "inner1_lp2")),
        conn(sel(0, "out2_n"), sel(3, "inner2_lp2")),
        conn(sel(0, "out1_p"), sel(3, "inner1_lp1")),
        conn(sel(0, "out2_p"), sel(3, "inner2_lp1")),
        conn(sel(1, "source"), sel(3, "source_lp1")),
        conn(sel(2, "source"), sel(3, "source_lp2")),
    ])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out1", sel(3, "out1")),
        ("out2", sel(3, "out2")),
        ("rail_n", sel(1, "source")),
        ("rail_p", sel(2, "source")),
    ])
}

/// Builds every HL4 list. First stages hold the union admitted by the
/// single-output and fully-differential load rules.
pub fn enumerate_first_stages(store: &mut ImplementationStore, cal: &Calibration) -> Result<(), ComposeError> {
    for d in Doping::BOTH {
        let tasks = [
            (BlockType::AS, a_s_task(store, cal, d)),
            (BlockType::ATel, a_tel_task(store, cal, d)),
            (BlockType::AFc, a_fc_task(store, cal, d)),
            (BlockType::AInv, a_inv_task(store, d)),
            (BlockType::AInvVb, a_inv_vb_task(store, d)),
            (BlockType::ASym, a_sym_task(store, d)),
            (BlockType::ACmfb, a_cmfb_task(store, d)),
        ];
        for (t, task) in tasks {
            let v = compose(&task)?;
            store.insert(t, Some(d), v);
        }
    }
    let ac = compose(&a_c_task(store, cal))?;
    store.insert(BlockType::AC, None, ac);
    Ok(())
}

/// Non-inverting first stages whose load satisfies the rule of `kind`, in
/// store order (doping, then stage type, then digest).
pub fn first_stages_for(store: &ImplementationStore, cal: &Calibration, kind: OpAmpKind) -> Vec<Arc<BlockInstance>> {
    if kind == OpAmpKind::Complementary {
        return store.get(BlockType::AC, None).cloned().unwrap_or_default();
    }
    let rule = cal.load_rule(kind);
    let mut out = Vec::new();
    for d in Doping::BOTH {
        for t in [BlockType::AS, BlockType::ATel, BlockType::AFc] {
            out.extend(store.of(t, d).iter().filter(|s| rule.admits(&load_parts(stage_load(s)))).cloned());
        }
    }
    out
}
