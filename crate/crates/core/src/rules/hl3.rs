//! Load parts, loads, transconductances and stage biases.

use crate::composer::{compose, ComposeError, ComposerTask, ConnectionSpec, Expr, Guard, Rule, Selector};
use crate::library::{BlockType, ImplementationStore, Impls};
use crate::netlist::{BlockInstance, Doping};

fn sel(set: usize, pin: &'static str) -> Selector {
    Selector::pin(set, pin)
}

fn conn(a: Selector, b: Selector) -> ConnectionSpec {
    ConnectionSpec::new(a, b)
}

/// Current biases of one doping, simple then cascode.
pub fn current_biases(store: &ImplementationStore, d: Doping) -> Impls {
    let mut v = store.of(BlockType::CbSimple, d).clone();
    v.extend(store.of(BlockType::CbCascode, d).iter().cloned());
    v
}

pub fn voltage_biases(store: &ImplementationStore, d: Doping) -> Impls {
    let mut v = store.of(BlockType::VbSimple, d).clone();
    v.extend(store.of(BlockType::VbCascode, d).iter().cloned());
    v
}

/// Load part from two biases with tied sources: either two current biases
/// joined at their inputs, or a voltage bias whose input or output feeds a
/// current bias.
pub fn lp_st_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let mut s1 = current_biases(store, d);
    s1.extend(voltage_biases(store, d));
    let s2 = current_biases(store, d);
    ComposerTask::new(BlockType::LpSt, Some(d), vec![s1, s2])
        .guards(vec![
            Guard::SameTransistorCount(0, 1),
            Guard::custom("current-bias s1 equals s2", |t| {
                !t[0].block_type.is_current_bias() || (t[0].digest() == t[1].digest())
            }),
        ])
        .characteristic(vec![
            conn(sel(0, "source"), sel(1, "source")),
            conn(Selector::any(0, &["in1", "in", "out1"]), sel(1, "in1")),
            conn(Selector::any(0, &["in2", "out2"]), sel(1, "in2")).when(Guard::TransistorCount(1, 2)),
        ])
        .pins(&[
            ("in1", sel(1, "in1")),
            ("out1", Selector::any(0, &["in", "out"])),
            ("out2", sel(1, "out")),
            ("source", sel(0, "source")),
            ("in2", sel(1, "in2")),
            ("inner1", sel(0, "inner")),
            ("inner2", sel(1, "inner")),
        ])
}

/// Two simple current biases joined only at their inputs.
pub fn lp_cas_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let cb = store.of(BlockType::CbSimple, d).clone();
    ComposerTask::new(BlockType::LpCas, Some(d), vec![cb.clone(), cb])
        .guards(vec![Guard::Identical(0, 1)])
        .characteristic(vec![conn(sel(0, "in1"), sel(1, "in1"))])
        .pins(&[
            ("in1", sel(0, "in1")),
            ("out1", sel(0, "out")),
            ("out2", sel(1, "out")),
            ("source1", sel(0, "source")),
            ("source2", sel(1, "source")),
        ])
}

/// Two identical voltage biases with tied sources whose first output is
/// driven inside the bias.
pub fn lp_vb_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let vb = voltage_biases(store, d);
    ComposerTask::new(BlockType::LpVb, Some(d), vec![vb.clone(), vb])
        .guards(vec![Guard::Identical(0, 1)])
        .characteristic(vec![conn(sel(0, "source"), sel(1, "source"))])
        .rules(vec![Rule::required("out11 driven", Expr::Driven(sel(0, "out1")))])
        .pins(&[
            ("in1", sel(0, "in")),
            ("in2", sel(1, "in")),
            ("out11", sel(0, "out1")),
            ("out21", sel(1, "out1")),
            ("source", sel(0, "source")),
            ("out12", sel(0, "out2")),
            ("out22", sel(1, "out2")),
        ])
}

fn pass_through(result: BlockType, d: Doping, set: Impls, pins: &[&'static str]) -> ComposerTask {
    let sels: Vec<(&str, Selector)> = pins.iter().map(|&p| (p, sel(0, p))).collect();
    ComposerTask::new(result, Some(d), vec![set]).pins(&sels)
}

pub fn load1_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    pass_through(BlockType::Load1, d, store.of(BlockType::LpSt, d).clone(), BlockType::LpSt.pin_vocabulary())
}

pub fn tc_s_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    pass_through(BlockType::TcS, d, store.of(BlockType::Dp, d).clone(), BlockType::Dp.pin_vocabulary())
}

pub fn b_s_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    pass_through(BlockType::Bs, d, current_biases(store, d), BlockType::Bs.pin_vocabulary())
}

/// Inverting transconductance: a current bias whose input is not its inner
/// node.
pub fn tc_inv_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    pass_through(BlockType::TcInv, d, current_biases(store, d), BlockType::TcInv.pin_vocabulary())
        .rules(vec![Rule::forbidden("in1 joined to inner", Expr::connected(sel(0, "in1"), sel(0, "inner")))])
}

/// Two same-doping differential pairs sharing the reference input, with
/// cross-coupled outputs.
pub fn tc_cmfb_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let dp = store.of(BlockType::Dp, d).clone();
    ComposerTask::new(BlockType::TcCmfb, Some(d), vec![dp.clone(), dp])
        .characteristic(vec![
            conn(sel(0, "in2"), sel(1, "in1")),
            conn(sel(0, "out1"), sel(1, "out2")),
            conn(sel(0, "out2"), sel(1, "out1")),
        ])
        .pins(&[
            ("in1", sel(0, "in1")),
            ("in2", sel(1, "in2")),
            ("vref", sel(0, "in2")),
            ("out1", sel(0, "out1")),
            ("out2", sel(0, "out2")),
            ("source1", sel(0, "source")),
            ("source2", sel(1, "source")),
        ])
}

/// Complementary transconductance: an n and a p pair with tied inputs.
pub fn tc_c_task(store: &ImplementationStore) -> ComposerTask {
    ComposerTask::new(
        BlockType::TcC,
        None,
        vec![store.of(BlockType::Dp, Doping::N).clone(), store.of(BlockType::Dp, Doping::P).clone()],
    )
    .characteristic(vec![conn(sel(0, "in1"), sel(1, "in1")), conn(sel(0, "in2"), sel(1, "in2"))])
    .pins(&[
        ("in1", sel(0, "in1")),
        ("in2", sel(0, "in2")),
        ("out1_n", sel(0, "out1")),
        ("out2_n", sel(0, "out2")),
        ("out1_p", sel(1, "out1")),
        ("out2_p", sel(1, "out2")),
        ("source_n", sel(0, "source")),
        ("source_p", sel(1, "source")),
    ])
}

/// Telescopic load: the cascode part of the transconductance doping `d`
/// stacked on a load part of the other doping.
pub fn load2_tel_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    ComposerTask::new(
        BlockType::Load2,
        Some(d),
        vec![store.of(BlockType::LpCas, d).clone(), store.of(BlockType::LpSt, o).clone()],
    )
    .characteristic(vec![conn(sel(0, "out1"), sel(1, "out1")), conn(sel(0, "out2"), sel(1, "out2"))])
    .pins(&[
        ("out1", sel(1, "out1")),
        ("out2", sel(1, "out2")),
        ("in1_lp2", sel(1, "in1")),
        ("source_lp2", sel(1, "source")),
        ("in2_lp2", sel(1, "in2")),
        ("inner1_lp2", sel(1, "inner1")),
        ("inner2_lp2", sel(1, "inner2")),
        ("source1_lp1", sel(0, "source1")),
        ("source2_lp1", sel(0, "source2")),
        ("in1_lp1", sel(0, "in1")),
    ])
}

/// Folded-cascode load: a part of doping `d` whose outputs meet a
/// four-transistor part of the other doping with an undriven input.
pub fn load2_fc_task(store: &ImplementationStore, d: Doping) -> ComposerTask {
    let o = d.complement();
    load2_pair(BlockType::Load2, Some(d), store.of(BlockType::LpSt, d).clone(), store.of(BlockType::LpSt, o).clone())
        .guards(vec![Guard::TransistorCount(1, 4)])
        .rules(vec![Rule::forbidden("folding part input driven", Expr::Driven(sel(1, "in1")))])
}

/// Load of the complementary stage: an n part and a p part, both with four
/// transistors, outputs tied.
pub fn load2_c_task(store: &ImplementationStore) -> ComposerTask {
    load2_pair(
        BlockType::Load2,
        None,
        store.of(BlockType::LpSt, Doping::N).clone(),
        store.of(BlockType::LpSt, Doping::P).clone(),
    )
    .guards(vec![Guard::TransistorCount(0, 4), Guard::TransistorCount(1, 4)])
}

fn load2_pair(t: BlockType, d: Option<Doping>, s1: Impls, s2: Impls) -> ComposerTask {
    ComposerTask::new(t, d, vec![s1, s2])
        .characteristic(vec![conn(sel(0, "out1"), sel(1, "out1")), conn(sel(0, "out2"), sel(1, "out2"))])
        .pins(&[
            ("out1", sel(1, "out1")),
            ("out2", sel(1, "out2")),
            ("in1_lp2", sel(1, "in1")),
            ("source_lp2", sel(1, "source")),
            ("in2_lp2", sel(1, "in2")),
            ("inner1_lp2", sel(1, "inner1")),
            ("inner2_lp2", sel(1, "inner2")),
            ("source_lp1", sel(0, "source")),
            ("in1_lp1", sel(0, "in1")),
            ("in2_lp1", sel(0, "in2")),
            ("inner1_lp1", sel(0, "inner1")),
            ("inner2_lp1", sel(0, "inner2")),
        ])
}

/// Builds every HL3 list into the store. Mixed-doping lists use `None`;
/// both load-2 flavours of a doping share one list.
pub fn enumerate_hl3(store: &mut ImplementationStore) -> Result<(), ComposeError> {
    for d in Doping::BOTH {
        let lp = compose(&lp_st_task(store, d))?;
        store.insert(BlockType::LpSt, Some(d), lp);
        let cas = compose(&lp_cas_task(store, d))?;
        store.insert(BlockType::LpCas, Some(d), cas);
        let vb = compose(&lp_vb_task(store, d))?;
        store.insert(BlockType::LpVb, Some(d), vb);
        let l1 = compose(&load1_task(store, d))?;
        store.insert(BlockType::Load1, Some(d), l1);
        for (t, task) in [
            (BlockType::TcS, tc_s_task(store, d)),
            (BlockType::Bs, b_s_task(store, d)),
            (BlockType::TcInv, tc_inv_task(store, d)),
            (BlockType::TcCmfb, tc_cmfb_task(store, d)),
        ] {
            let v = compose(&task)?;
            store.insert(t, Some(d), v);
        }
    }
    for d in Doping::BOTH {
        let mut l2 = compose(&load2_tel_task(store, d))?;
        l2.extend(compose(&load2_fc_task(store, d))?);
        store.insert(BlockType::Load2, Some(d), l2);
    }
    let tc = compose(&tc_c_task(store))?;
    store.insert(BlockType::TcC, None, tc);
    let l2c = compose(&load2_c_task(store))?;
    store.insert(BlockType::Load2, None, l2c);
    Ok(())
}

/// Load parts of a load (one for load 1, two for load 2).
pub fn load_parts(load: &BlockInstance) -> Vec<&BlockInstance> {
    match load.block_type {
        BlockType::Load1 => vec![&*load.children[0]],
        BlockType::Load2 => load.children.iter().map(|c| &**c).collect(),
        BlockType::LpSt | BlockType::LpCas => vec![load],
        _ => Vec::new(),
    }
}

/// The part's first bias is a voltage bias.
pub fn is_vb_based(part: &BlockInstance) -> bool {
    part.block_type == BlockType::LpSt && part.children[0].block_type.is_voltage_bias()
}

/// The part's input carries a drain, i.e. it works as a current mirror.
pub fn is_mirror(part: &BlockInstance) -> bool {
    let f = part.flat();
    f.pin_net("in1").is_some_and(|n| f.has_drain(n))
}

/// Whether a load-2 implementation is the telescopic flavour.
pub fn is_telescopic(load: &BlockInstance) -> bool {
    load.block_type == BlockType::Load2 && load.children[0].block_type == BlockType::LpCas
}
