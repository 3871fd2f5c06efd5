//! Op-amp core assembly from amplification stages.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::composer::{compose, ComposerTask, ConnectionSpec, Expr, Guard, Rule, Selector};
use crate::library::{BlockType, Impls};
use crate::netlist::{BlockInstance, CanonicalDigest, Doping, PinRef};

use super::{OpAmpKind, OpAmpType, RuleLibrary, RulesError, Variant};

fn sel(set: usize, pin: &'static str) -> Selector {
    Selector::pin(set, pin)
}

fn conn(a: Selector, b: Selector) -> ConnectionSpec {
    ConnectionSpec::new(a, b)
}

/// An enumerated op-amp core without its bias.
#[derive(Clone, Debug, Serialize)]
pub struct Topology {
    pub id: String,
    pub op_type: OpAmpType,
    /// Type of the non-inverting first stage (a_s, a_tel, a_fc, a_sym or a_c).
    pub first_stage: BlockType,
    /// Doping of the first-stage transconductance; `None` for complementary.
    pub first_doping: Option<Doping>,
    #[serde(skip)]
    pub core: Arc<BlockInstance>,
    pub digest: CanonicalDigest,
    /// Digest of the one-stage core this topology extends.
    pub parent: Option<CanonicalDigest>,
    /// Output of each gain stage along the signal path, first stage first.
    #[serde(skip)]
    pub stage_outputs: Vec<PinRef>,
}

impl Topology {
    fn new(op_type: OpAmpType, core: Arc<BlockInstance>, parent: Option<CanonicalDigest>) -> Topology {
        let first = &core.children[0];
        let digest = core.digest();
        let stage_outputs = match (op_type.kind, op_type.variant) {
            (OpAmpKind::SingleOutput, Variant::OneStage) | (OpAmpKind::Complementary, _) => vec![PinRef::own("out")],
            (OpAmpKind::SingleOutput, Variant::TwoStage) => vec![PinRef::child(0, "out2"), PinRef::own("out")],
            (OpAmpKind::SingleOutput, Variant::Symmetrical) => vec![PinRef::child(0, "out21"), PinRef::own("out")],
            (OpAmpKind::FullyDifferential, Variant::OneStage) => vec![PinRef::own("outp")],
            (OpAmpKind::FullyDifferential, _) => vec![PinRef::child(0, "out2"), PinRef::own("outp")],
        };
        Topology {
            id: format!("{}-{}", op_type, digest.short()),
            op_type,
            first_stage: first.block_type,
            first_doping: first.doping,
            core,
            digest,
            parent,
            stage_outputs,
        }
    }

    pub fn is_single_output(&self) -> bool {
        self.op_type.kind != OpAmpKind::FullyDifferential
    }

    /// Output pin names of the core.
    pub fn outputs(&self) -> &'static [&'static str] {
        if self.is_single_output() {
            &["out"]
        } else {
            &["outp", "outn"]
        }
    }
}

fn rail_conns(sets: &[usize]) -> Vec<ConnectionSpec> {
    sets.iter()
        .flat_map(|&s| [conn(sel(0, "rail_n"), sel(s, "rail_n")), conn(sel(0, "rail_p"), sel(s, "rail_p"))])
        .collect()
}



fn so_one_task(stages: Impls) -> ComposerTask {

    ComposerTask::new(BlockType::OpSo1, None, vec![stages]).pins(&[
        ("inp", sel(0, "in1")),
        ("inn", sel(0, "in2")),
        ("out", sel(0, "out2")),
        ("vdd", sel(0, "rail_p")),
        ("vss", sel(0, "rail_n")),
    ])
}

fn so_two_task(stages: Impls, cap: Impls, inv: Impls) -> ComposerTask {
    let mut c = vec![
        conn(sel(0, "out2"), sel(2, "in_tc1")),
        conn(sel(0, "out2"), sel(1, "plus")),
        conn(sel(1, "minus"), sel(2, "out")),
    ];
    c.extend(rail_conns(&[2]));
    ComposerTask::new(BlockType::OpSo2, None, vec![stages, cap, inv]).characteristic(c).pins(&[
        ("inp", sel(0, "in1")),
        ("inn", sel(0, "in2")),
        ("out", sel(2, "out")),
        ("vdd", sel(0, "rail_p")),
        ("vss", sel(0, "rail_n")),
    ])
}

fn tc_n(t: &[Arc<BlockInstance>], s: usize) -> usize {
    t[s].children[0].n_t()
}

/// Symmetrical op-amp: the two vb outputs of the first stage drive two
/// inverting stages whose loads form a current mirror.
fn so_sym_task(sym: Impls, inv: Impls, inv_vb: Impls) -> ComposerTask {
    let lp_n = |t: &[Arc<BlockInstance>]| t[0].children[2].n_t();
    let mut c = vec![
        conn(sel(0, "out11"), sel(1, "in_tc1")),
        conn(sel(0, "out21"), sel(2, "in_tc1")),
        conn(sel(1, "in_bs1"), sel(2, "out_bs1")),
        conn(sel(1, "in_tc2"), sel(2, "in_tc2"))
            .when(Guard::custom("two-transistor load, cascode tc", move |t| lp_n(t) == 2 && tc_n(t, 1) == 2)),
        conn(sel(0, "out12"), sel(1, "in_tc2"))
            .when(Guard::custom("four-transistor load, cascode tc", move |t| lp_n(t) == 4 && tc_n(t, 1) == 2)),
        conn(sel(0, "out22"), sel(2, "in_tc2"))
            .when(Guard::custom("four-transistor load, cascode tc", move |t| lp_n(t) == 4 && tc_n(t, 1) == 2)),
        conn(sel(1, "in_bs2"), sel(2, "out_bs2")).when(Guard::custom("cascode vb", |t| t[2].children[1].n_t() == 2)),
    ];
    c.extend(rail_conns(&[1, 2]));
    ComposerTask::new(BlockType::OpSoSym, None, vec![sym, inv, inv_vb])
        .guards(vec![
            Guard::custom("n_T(tc_inv) equal", |t| tc_n(t, 1) == tc_n(t, 2)),
            Guard::custom("n_T(load) <= n_T(tc_inv) + n_T(tc_inv,vb)", move |t| lp_n(t) <= tc_n(t, 1) + tc_n(t, 2)),
            Guard::custom("n_T(b_s,inv) >= n_T(vb)", |t| t[1].children[1].n_t() >= t[2].children[1].n_t()),
        ])
        .characteristic(c)
        .rules(vec![Rule::required("stage biases form a current mirror", Expr::Driven(sel(1, "in_bs1")))])
        .pins(&[
            ("inp", sel(0, "in1")),
            ("inn", sel(0, "in2")),
            ("out", sel(1, "out")),
            ("vdd", sel(0, "rail_p")),
            ("vss", sel(0, "rail_n")),
        ])
}

fn fd_one_task(stages: Impls, cmfb: Impls) -> ComposerTask {
    let mut c = vec![
        conn(sel(0, "out1"), sel(1, "in1")),
        conn(sel(0, "out2"), sel(1, "in2")),
        conn(sel(1, "out"), sel(0, "cmfb_in")),
    ];
    c.extend(rail_conns(&[1]));
    ComposerTask::new(BlockType::OpFd1, None, vec![stages, cmfb]).characteristic(c).pins(&[
        ("inp", sel(0, "in1")),
        ("inn", sel(0, "in2")),
        ("outp", sel(0, "out2")),
        ("outn", sel(0, "out1")),
        ("v_cm_ref", sel(1, "vref")),
        ("vdd", sel(0, "rail_p")),
        ("vss", sel(0, "rail_n")),
    ])
}

fn fd_two_task(stages: Impls, cmfb: Impls, cap: Impls, inv: Impls) -> ComposerTask {
    let mut c = vec![
        conn(sel(0, "out1"), sel(4, "in_tc1")),
        conn(sel(0, "out2"), sel(5, "in_tc1")),
        conn(sel(0, "out1"), sel(2, "plus")),
        conn(sel(2, "minus"), sel(4, "out")),
        conn(sel(0, "out2"), sel(3, "plus")),
        conn(sel(3, "minus"), sel(5, "out")),
        conn(sel(4, "out"), sel(1, "in1")),
        conn(sel(5, "out"), sel(1, "in2")),
        conn(sel(1, "out"), sel(0, "cmfb_in")),
    ];
    c.extend(rail_conns(&[1, 4, 5]));
    ComposerTask::new(BlockType::OpFd2, None, vec![stages, cmfb, cap.clone(), cap, inv.clone(), inv])
        .guards(vec![Guard::Identical(4, 5)])
        .characteristic(c)
        .pins(&[
            ("inp", sel(0, "in1")),
            ("inn", sel(0, "in2")),
            ("outp", sel(5, "out")),
            ("outn", sel(4, "out")),
            ("v_cm_ref", sel(1, "vref")),
            ("vdd", sel(0, "rail_p")),
            ("vss", sel(0, "rail_n")),
        ])
}

fn comp_task(stages: Impls) -> ComposerTask {
    ComposerTask::new(BlockType::OpComp, None, vec![stages]).pins(&[
        ("inp", sel(0, "in1")),
        ("inn", sel(0, "in2")),
        ("out", sel(0, "out2")),
        ("vdd", sel(0, "rail_p")),
        ("vss", sel(0, "rail_n")),
    ])
}

fn of_doping(v: &[Arc<BlockInstance>], d: Doping) -> Impls {
    v.iter().filter(|s| s.doping == Some(d)).cloned().collect()
}

fn both(lib: &RuleLibrary, t: BlockType) -> Impls {
    Doping::BOTH.iter().flat_map(|&d| lib.store.of(t, d).iter().cloned()).collect()
}

fn cap(lib: &RuleLibrary) -> Impls {
    lib.store.get(BlockType::Cap, None).expect("capacitor prototype").clone()
}

/// Every core of one op-amp type, ordered by transistor count then digest.
pub fn enumerate_topologies(lib: &RuleLibrary, t: OpAmpType) -> Result<Vec<Topology>, RulesError> {
    let t = OpAmpType::new(t.kind, t.variant)?;
    let mut out: Vec<Topology> = match (t.kind, t.variant) {
        (OpAmpKind::SingleOutput, Variant::OneStage) => {
            compose(&so_one_task(lib.first_stages(t.kind)))?.into_iter().map(|c| Topology::new(t, c, None)).collect()
        }
        (OpAmpKind::SingleOutput, Variant::TwoStage) => {
            let parents = parents_by_first(lib, OpAmpType { kind: t.kind, variant: Variant::OneStage }, 1)?;
            let task = so_two_task(lib.first_stages(t.kind), cap(lib), both(lib, BlockType::AInv));
            compose(&task)?.into_iter().map(|c| with_parent(t, c, &parents, 1)).collect()
        }
        (OpAmpKind::SingleOutput, Variant::Symmetrical) => {
            let mut v = Vec::new();
            for d in Doping::BOTH {
                let o = d.complement();
                let task = so_sym_task(
                    lib.store.of(BlockType::ASym, d).clone(),
                    lib.store.of(BlockType::AInv, o).clone(),
                    lib.store.of(BlockType::AInvVb, o).clone(),
                );
                v.extend(compose(&task)?.into_iter().map(|c| Topology::new(t, c, None)));
            }
            v
        }
        (OpAmpKind::FullyDifferential, Variant::OneStage) => {
            let stages = lib.first_stages(t.kind);
            let mut v = Vec::new();
            for d in Doping::BOTH {
                let task = fd_one_task(of_doping(&stages, d), lib.store.of(BlockType::ACmfb, d).clone());
                v.extend(compose(&task)?.into_iter().map(|c| Topology::new(t, c, None)));
            }
            v
        }
        (OpAmpKind::FullyDifferential, _) => {
            let parents = parents_by_first(lib, OpAmpType { kind: t.kind, variant: Variant::OneStage }, 2)?;
            let stages = lib.first_stages(t.kind);
            let mut v = Vec::new();
            for d in Doping::BOTH {
                let task = fd_two_task(
                    of_doping(&stages, d),
                    lib.store.of(BlockType::ACmfb, d).clone(),
                    cap(lib),
                    both(lib, BlockType::AInv),
                );
                v.extend(compose(&task)?.into_iter().map(|c| with_parent(t, c, &parents, 2)));
            }
            v
        }
        (OpAmpKind::Complementary, _) => {
            compose(&comp_task(lib.first_stages(t.kind)))?.into_iter().map(|c| Topology::new(t, c, None)).collect()
        }
    };
    out.sort_by_key(|a| (a.core.n_t(), a.digest));
    Ok(out)
}

type ParentKey = Vec<CanonicalDigest>;

fn key(core: &BlockInstance, shared: usize) -> ParentKey {
    core.children[..shared].iter().map(|c| c.digest()).collect()
}

/// One-stage cores keyed by the digests of their first `shared` children.
fn parents_by_first(lib: &RuleLibrary, one: OpAmpType, shared: usize) -> Result<HashMap<ParentKey, CanonicalDigest>, RulesError> {
    Ok(enumerate_topologies(lib, one)?.into_iter().map(|p| (key(&p.core, shared), p.digest)).collect())
}

fn with_parent(t: OpAmpType, core: Arc<BlockInstance>, parents: &HashMap<ParentKey, CanonicalDigest>, shared: usize) -> Topology {
    let parent = parents.get(&key(&core, shared)).copied();
    debug_assert!(parent.is_some(), "two-stage core without one-stage parent");
    Topology::new(t, core, parent)
}
