//! Op-amp bias synthesis: classify the core transistors lacking a gate
//! supply, create voltage biases for them, pick the bias-pin voltage bias,
//! and feed every other voltage bias through a current bias.

use std::collections::BTreeSet;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::library::{BlockType, ImplementationStore};
use crate::netlist::{BlockInstance, Doping, FlatNetlist, NetlistError, PinRef, DRAIN, GATE, SOURCE};

/// Pins whose nets count as externally driven gate inputs.
pub const INPUT_PINS: [&str; 4] = ["inp", "inn", "v_cm_ref", "p_bias"];

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PositionClass {
    ImprovedWilsonCb,
    CascodeCb,
    SimpleCbAtRail,
    SimpleCbFloating,
}

/// A core transistor without a gate supply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Unbiased {
    pub device: usize,
    pub doping: Doping,
    /// Source on a supply rail (position 1) or not (position 2).
    pub at_rail: bool,
    pub class: PositionClass,
    /// Device index of the other transistor of its cascode current bias.
    pub partner: Option<usize>,
}

/// Partition of the unbiased core transistors by doping and position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BiasContext {
    pub t_un: Vec<Unbiased>,
}

impl BiasContext {
    /// Device indices of one partition cell; `position` is 1 or 2.
    pub fn cell(&self, d: Doping, position: u8) -> Vec<usize> {
        self.t_un.iter().filter(|u| u.doping == d && u.at_rail == (position == 1)).map(|u| u.device).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.t_un.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("core already carries a bias input")]
    AlreadyBiased,
    #[error("core lacks supply pin `{0}`")]
    MissingRail(&'static str),
    #[error("no voltage bias implementation matching `{0}` in the library")]
    MissingImplementation(&'static str),
    #[error("voltage-bias set is empty")]
    EmptySet,
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

fn rail_nets(flat: &FlatNetlist) -> Result<(u32, u32), BiasError> {
    let vdd = flat.pin_net("vdd").ok_or(BiasError::MissingRail("vdd"))?;
    let vss = flat.pin_net("vss").ok_or(BiasError::MissingRail("vss"))?;
    Ok((vdd, vss))
}

/// Whether some drain or external input drives the net.
pub fn gate_supplied(flat: &FlatNetlist, net: u32) -> bool {
    flat.has_drain(net) || INPUT_PINS.iter().any(|p| flat.pin_net(p) == Some(net))
}

/// Current bias enclosing a device and the device's index within it.
fn enclosing_cb<'a>(core: &'a BlockInstance, flat: &FlatNetlist, dev: usize) -> Option<(&'a BlockInstance, u16)> {
    let d = &flat.devices[dev];
    let k = d.ancestry.iter().rposition(|t| t.is_current_bias())?;
    Some((core.at(&d.path[..k])?, d.path[k]))
}

fn device_index(flat: &FlatNetlist, path: &[u16]) -> Option<usize> {
    flat.devices.iter().position(|d| d.path == path)
}

pub fn classify_unbiased(core: &BlockInstance) -> Result<BiasContext, BiasError> {
    let flat = core.flatten()?;
    if flat.pin_net("p_bias").is_some() {
        return Err(BiasError::AlreadyBiased);
    }
    let (vdd, vss) = rail_nets(&flat)?;
    let mut t_un = Vec::new();
    for (i, d) in flat.transistors() {
        if gate_supplied(&flat, flat.net(i, GATE)) {
            continue;
        }
        let doping = d.doping.expect("transistors carry a doping");
        let src = flat.net(i, SOURCE);
        let at_rail = src == vdd || src == vss;
        let (class, partner) = match enclosing_cb(core, &flat, i) {
            Some((cb, pos)) if cb.block_type == BlockType::CbCascode => {
                let mut p = flat.devices[i].path.clone();
                *p.last_mut().unwrap() = 1 - pos;
                let partner = device_index(&flat, &p);
                let wilson = cb.children[0].block_type == BlockType::Dt;
                (if wilson { PositionClass::ImprovedWilsonCb } else { PositionClass::CascodeCb }, partner)
            }
            _ if at_rail => (PositionClass::SimpleCbAtRail, None),
            _ => (PositionClass::SimpleCbFloating, None),
        };
        t_un.push(Unbiased { device: i, doping, at_rail, class, partner });
    }
    Ok(BiasContext { t_un })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum VbKind {
    Simple,
    Cascode,
    ImprovedWilson,
}

/// Why a voltage bias exists.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum VbRole {
    /// Supplies core gates.
    Core,
    /// Created only to feed current biases or carry stacked vbs.
    Distributor,
}

/// A voltage bias of the op-amp bias and the core gates it drives.
#[derive(Clone, Debug, Serialize)]
pub struct BiasVb {
    pub kind: VbKind,
    pub doping: Doping,
    pub role: VbRole,
    /// Source on the rail; otherwise stacked on `stacked_on`.
    pub at_rail: bool,
    pub stacked_on: Option<usize>,
    /// Core devices whose gates hang on out1 and (cascode kinds) out2.
    pub out1: Vec<usize>,
    pub out2: Vec<usize>,
    #[serde(skip)]
    pub instance: Arc<BlockInstance>,
}

/// A current bias of the op-amp bias feeding one voltage bias.
#[derive(Clone, Debug, Serialize)]
pub struct BiasCb {
    pub doping: Doping,
    /// Index of the voltage bias whose input it feeds.
    pub feeds: usize,
    /// Index of the distributor driving its gate.
    pub gate_from: usize,
    #[serde(skip)]
    pub instance: Arc<BlockInstance>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasPlan {
    pub vbs: Vec<BiasVb>,
    pub cbs: Vec<BiasCb>,
    /// Voltage bias carrying the bias-input pin.
    pub vb_bias: usize,
    /// Distributors created in the current-bias step.
    pub vb_dis: Vec<usize>,
}

impl BiasPlan {
    pub fn vb_count(&self) -> usize {
        self.vbs.len()
    }

    pub fn cb_count(&self) -> usize {
        self.cbs.len()
    }

    pub fn bias_doping(&self) -> Doping {
        self.vbs[self.vb_bias].doping
    }
}

/// Library implementations the bias is built from: a simple diode vb, the
/// cascode diode pair, the improved Wilson vb and a simple cb per doping.
pub struct BiasParts {
    simple: [Arc<BlockInstance>; 2],
    diode_pair: [Arc<BlockInstance>; 2],
    wilson: [Arc<BlockInstance>; 2],
    cb: [Arc<BlockInstance>; 2],
}

fn di(d: Doping) -> usize {
    match d {
        Doping::N => 0,
        Doping::P => 1,
    }
}

fn kinds(i: &BlockInstance) -> Vec<BlockType> {
    i.children.iter().map(|c| c.block_type).collect()
}

impl BiasParts {
    pub fn from_store(store: &ImplementationStore) -> Result<BiasParts, BiasError> {
        let pick = |t: BlockType, d: Doping, want: &[BlockType], name: &'static str| -> Result<Arc<BlockInstance>, BiasError> {
            store
                .get(t, Some(d))
                .ok()
                .and_then(|v| {
                    v.iter()
                        .find(|i| {
                            if i.children.is_empty() {
                                want.len() == 1 && want[0] == i.block_type
                            } else {
                                kinds(i) == want && i.connections.len() == 1
                            }
                        })
                        .or_else(|| v.iter().find(|i| i.children.len() == 1 && kinds(i) == want))
                })
                .cloned()
                .ok_or(BiasError::MissingImplementation(name))
        };
        let both = |t, want: &[BlockType], name| -> Result<[Arc<BlockInstance>; 2], BiasError> {
            Ok([pick(t, Doping::N, want, name)?, pick(t, Doping::P, want, name)?])
        };
        Ok(BiasParts {
            simple: both(BlockType::VbSimple, &[BlockType::Dt], "simple diode vb")?,
            diode_pair: both(BlockType::VbCascode, &[BlockType::Dt, BlockType::Dt], "cascode diode pair")?,
            wilson: both(BlockType::VbCascode, &[BlockType::Nt, BlockType::Dt], "improved Wilson vb")?,
            cb: both(BlockType::CbSimple, &[BlockType::Nt], "simple cb")?,
        })
    }
}

fn new_vb(parts: &BiasParts, kind: VbKind, d: Doping, role: VbRole, at_rail: bool, out1: Vec<usize>, out2: Vec<usize>) -> BiasVb {
    let instance = match kind {
        VbKind::Simple => parts.simple[di(d)].clone(),
        VbKind::Cascode => parts.diode_pair[di(d)].clone(),
        VbKind::ImprovedWilson => parts.wilson[di(d)].clone(),
    };
    BiasVb { kind, doping: d, role, at_rail, stacked_on: None, out1, out2, instance }
}

/// Voltage biases for the improved Wilson current biases: one per distinct
/// upper-gate net, its first output on the shared lower gates.
pub fn create_improved_wilson_voltage_biases(ctx: &BiasContext, flat: &FlatNetlist, d: Doping, parts: &BiasParts) -> Vec<BiasVb> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for u in ctx.t_un.iter().filter(|u| u.doping == d && u.class == PositionClass::ImprovedWilsonCb) {
        if !seen.insert(flat.net(u.device, GATE)) {
            continue;
        }
        let lower = u.partner.expect("cascode current bias has two transistors");
        out.push(new_vb(parts, VbKind::ImprovedWilson, d, VbRole::Core, true, vec![lower], vec![u.device]));
    }
    out
}

/// Remaining transistors of one doping: a cascode diode pair when they form
/// complete two-transistor current biases, otherwise one simple vb per
/// non-empty position set.
pub fn create_additional_voltage_biases(t1: &[&Unbiased], t2: &[&Unbiased], d: Doping, parts: &BiasParts) -> Vec<BiasVb> {
    let all: Vec<&Unbiased> = t1.iter().chain(t2).copied().collect();
    if all.is_empty() {
        return Vec::new();
    }
    let members: BTreeSet<usize> = all.iter().map(|u| u.device).collect();
    let complete_cascodes = all
        .iter()
        .all(|u| u.class == PositionClass::CascodeCb && u.partner.is_some_and(|p| members.contains(&p)));
    if complete_cascodes {
        let lower: Vec<usize> = t1.iter().map(|u| u.device).collect();
        let upper: Vec<usize> = t2.iter().map(|u| u.device).collect();
        return vec![new_vb(parts, VbKind::Cascode, d, VbRole::Core, true, lower, upper)];
    }
    let mut out = Vec::new();
    if !t1.is_empty() {
        out.push(new_vb(parts, VbKind::Simple, d, VbRole::Core, true, t1.iter().map(|u| u.device).collect(), vec![]));
    }
    if !t2.is_empty() {
        out.push(new_vb(parts, VbKind::Simple, d, VbRole::Core, false, t2.iter().map(|u| u.device).collect(), vec![]));
    }
    out
}

/// Preference key for the bias-pin and distributor choice.
fn preference(v: &BiasVb) -> (VbKind, bool) {
    (v.kind, !v.at_rail)
}

/// Best rail-connected vb of a set: simple before cascode before Wilson.
pub fn select_bias_pin(vbs: &[BiasVb]) -> Result<usize, BiasError> {
    vbs.iter()
        .enumerate()
        .filter(|(_, v)| v.at_rail)
        .min_by_key(|(i, v)| (preference(v), *i))
        .map(|(i, _)| i)
        .ok_or(BiasError::EmptySet)
}

fn rail_simple(vbs: &[BiasVb], d: Doping) -> Option<usize> {
    vbs.iter().position(|v| v.doping == d && v.at_rail && v.kind == VbKind::Simple)
}

/// Runs the full bias synthesis on a core and returns the plan.
pub fn plan_bias(core: &BlockInstance, store: &ImplementationStore) -> Result<BiasPlan, BiasError> {
    let ctx = classify_unbiased(core)?;
    let flat = core.flat();
    let parts = BiasParts::from_store(store)?;
    let mut sides: [Vec<BiasVb>; 2] = [Vec::new(), Vec::new()];
    for d in Doping::BOTH {
        let mut v = create_improved_wilson_voltage_biases(&ctx, &flat, d, &parts);
        let rest = |pos1: bool| -> Vec<&Unbiased> {
            ctx.t_un
                .iter()
                .filter(|u| u.doping == d && u.class != PositionClass::ImprovedWilsonCb && u.at_rail == pos1)
                .collect()
        };
        v.extend(create_additional_voltage_biases(&rest(true), &rest(false), d, &parts));
        sides[di(d)] = v;
    }
    // Bias-pin doping: the side holding the preferred rail-connected vb;
    // ties go to the side with more vbs, then to P.
    let best = |d: Doping| select_bias_pin(&sides[di(d)]).ok().map(|i| preference(&sides[di(d)][i]));
    let phi_bias = match (best(Doping::N), best(Doping::P)) {
        (Some(n), Some(p)) if n < p => Doping::N,
        (Some(n), Some(p)) if n == p && sides[0].len() > sides[1].len() => Doping::N,
        (Some(_), None) => Doping::N,
        _ => Doping::P,
    };
    let phi_other = phi_bias.complement();
    let mut bias_side = std::mem::take(&mut sides[di(phi_bias)]);
    let mut other_side = std::mem::take(&mut sides[di(phi_other)]);
    let mut created: Vec<(bool, usize)> = Vec::new();
    let vb_bias = match select_bias_pin(&bias_side) {
        Ok(i) => i,
        Err(_) => {
            bias_side.push(new_vb(&parts, VbKind::Simple, phi_bias, VbRole::Distributor, true, vec![], vec![]));
            created.push((true, bias_side.len() - 1));
            bias_side.len() - 1
        }
    };
    // Floating vbs sit on a rail-connected simple vb of their doping.
    if bias_side.iter().any(|v| !v.at_rail) && rail_simple(&bias_side, phi_bias).is_none() {
        bias_side.push(new_vb(&parts, VbKind::Simple, phi_bias, VbRole::Distributor, true, vec![], vec![]));
        created.push((true, bias_side.len() - 1));
    }

    // Distributor of the other doping, needed to feed the extra bias-side
    // vbs or to carry floating vbs.
    let other_floating = other_side.iter().any(|v| !v.at_rail);
    let mut vb_dis_other = None;
    if bias_side.len() > 1 || other_floating {
        let reuse = if other_floating { rail_simple(&other_side, phi_other) } else { select_bias_pin(&other_side).ok() };
        vb_dis_other = Some(match reuse {
            Some(i) => i,
            None => {
                other_side.push(new_vb(&parts, VbKind::Simple, phi_other, VbRole::Distributor, true, vec![], vec![]));
                created.push((false, other_side.len() - 1));
                other_side.len() - 1
            }
        });
    }

    let nb = bias_side.len();
    let mut vbs = bias_side;
    vbs.extend(other_side);
    let dis_other = vb_dis_other.map(|i| i + nb);
    for i in 0..vbs.len() {
        if !vbs[i].at_rail {
            vbs[i].stacked_on = rail_simple(&vbs, vbs[i].doping);
        }
    }
    let mut cbs = Vec::new();
    if nb > 1 {
        let g = dis_other.expect("distributor chosen when the bias side has several vbs");
        for i in (0..nb).filter(|&i| i != vb_bias) {
            cbs.push(BiasCb { doping: phi_other, feeds: i, gate_from: g, instance: parts.cb[di(phi_other)].clone() });
        }
    }
    for i in nb..vbs.len() {
        cbs.push(BiasCb { doping: phi_bias, feeds: i, gate_from: vb_bias, instance: parts.cb[di(phi_bias)].clone() });
    }
    let vb_dis = created.into_iter().map(|(bias, i)| if bias { i } else { i + nb }).collect();
    Ok(BiasPlan { vbs, cbs, vb_bias, vb_dis })
}

fn rail_pin(d: Doping) -> &'static str {
    match d {
        Doping::N => "vss",
        Doping::P => "vdd",
    }
}

/// Attaches a planned bias to the core: the result has children
/// `[core, b_O]` and the core pins plus `p_bias`.
pub fn attach_bias(core: &Arc<BlockInstance>, plan: &BiasPlan) -> Result<BlockInstance, BiasError> {
    let flat = core.flat();
    let nv = plan.vbs.len();
    let mut children: Vec<Arc<BlockInstance>> = plan.vbs.iter().map(|v| v.instance.clone()).collect();
    children.extend(plan.cbs.iter().map(|c| c.instance.clone()));
    let mut inner = Vec::new();
    for (k, c) in plan.cbs.iter().enumerate() {
        let ci = nv + k;
        inner.push((PinRef::child(ci, "in1"), PinRef::child(c.gate_from, "out1")));
        inner.push((PinRef::child(ci, "out"), PinRef::child(c.feeds, "in")));
    }
    for (i, v) in plan.vbs.iter().enumerate() {
        if let Some(base) = v.stacked_on {
            inner.push((PinRef::child(i, "source"), PinRef::child(base, "in")));
        }
    }
    let mut bias_pins = IndexMap::new();
    bias_pins.insert("p_bias".to_string(), PinRef::child(plan.vb_bias, "in"));
    let bias = BlockInstance::composite("b_O".into(), BlockType::BiasO, None, children, inner, bias_pins);

    let mut conns = Vec::new();
    let at = |i: usize, pin: &str| PinRef::new(vec![1, i as u16], pin);
    let gate = |dev: usize| {
        let mut p = vec![0u16];
        p.extend(&flat.devices[dev].path);
        PinRef::new(p, "gate")
    };
    for (i, v) in plan.vbs.iter().enumerate() {
        if v.at_rail {
            conns.push((at(i, "source"), PinRef::child(0, rail_pin(v.doping))));
        }
        for &d in &v.out1 {
            conns.push((at(i, "out1"), gate(d)));
        }
        for &d in &v.out2 {
            conns.push((at(i, "out2"), gate(d)));
        }
    }
    for (k, c) in plan.cbs.iter().enumerate() {
        conns.push((at(nv + k, "source"), PinRef::child(0, rail_pin(c.doping))));
    }
    let mut pins: IndexMap<String, PinRef> = core.pin_map.keys().map(|k| (k.clone(), PinRef::child(0, k))).collect();
    pins.insert("p_bias".into(), PinRef::child(1, "p_bias"));
    let out = BlockInstance::composite(
        format!("{}_biased", core.name),
        core.block_type,
        None,
        vec![core.clone(), Arc::new(bias)],
        conns,
        pins,
    );
    out.flatten()?;
    Ok(out)
}

/// Biased op-amp and its plan.
pub fn synthesize_bias(core: &Arc<BlockInstance>, store: &ImplementationStore) -> Result<(BlockInstance, BiasPlan), BiasError> {
    let plan = plan_bias(core, store)?;
    let op = attach_bias(core, &plan)?;
    Ok((op, plan))
}

/// Structural lint of a biased op-amp: every gate driven, exactly one bias
/// input touching one vb input, no same-doping drain conflict.
pub fn lint_biased(op: &BlockInstance) -> Result<(), String> {
    let flat = op.flatten().map_err(|e| e.to_string())?;
    for (i, _) in flat.transistors() {
        if !gate_supplied(&flat, flat.net(i, GATE)) {
            return Err(format!("gate of device {i} is not supplied"));
        }
    }
    let pb = flat.pin_net("p_bias").ok_or("no bias input")?;
    let drains = flat.transistors().filter(|(i, _)| flat.net(*i, DRAIN) == pb).count();
    if drains != 1 {
        return Err(format!("bias input carries {drains} drains"));
    }
    if let Some((a, b)) = crate::composer::drain_conflict(&flat) {
        return Err(format!("devices {a} and {b} share a drain"));
    }
    Ok(())
}
