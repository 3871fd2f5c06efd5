//! A topology prepared for evaluation: biased netlist, branch roles,
//! matched groups and the gain-stage chain.

use std::sync::Arc;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::bias::{synthesize_bias, BiasError, BiasPlan};
use crate::library::{BlockType, ImplementationStore};
use crate::netlist::{BlockInstance, DeviceKind, Doping, FlatNetlist, PinRef, GATE, SOURCE};
use crate::rules::{OpAmpKind, OpAmpType, Topology, Variant};

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error("topology has no signal path: {0}")]
    Structure(String),
}

/// Which branch current a device carries.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub enum Role {
    /// Half the first-stage tail current.
    TailHalf,
    /// The first-stage tail current.
    Tail,
    /// Folding-branch current.
    Fold,
    /// Folding-branch current plus half the tail, at the rail of a folded load.
    FoldPlusHalf,
    /// Output-stage current.
    Second,
    CmfbHalf,
    Cmfb,
    /// Bias network device carrying this many reference currents.
    Reference(f64),
    Capacitor,
}

/// Branch currents a sizing chooses, in amperes.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize)]
pub struct Branches {
    pub reference: f64,
    pub tail: f64,
    pub fold: f64,
    pub second: f64,
    pub cmfb: f64,
}

impl Role {
    pub fn current(self, b: &Branches) -> f64 {
        match self {
            Role::TailHalf => b.tail / 2.0,
            Role::Tail => b.tail,
            Role::Fold => b.fold,
            Role::FoldPlusHalf => b.fold + b.tail / 2.0,
            Role::Second => b.second,
            Role::CmfbHalf => b.cmfb / 2.0,
            Role::Cmfb => b.cmfb,
            Role::Reference(k) => k * b.reference,
            Role::Capacitor => 0.0,
        }
    }
}

/// One gain stage of the signal path.
#[derive(Clone, Debug)]
pub struct Stage {
    /// Output net; for fully-differential stages the positive side.
    pub out: u32,
    pub out_neg: Option<u32>,
    /// Transistors whose transconductance drives the stage.
    pub input_devices: Vec<usize>,
    /// Nets held at AC ground when the output resistance is taken.
    pub grounded: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Nets {
    pub vdd: u32,
    pub vss: u32,
    pub inp: u32,
    pub inn: u32,
    pub vref: Option<u32>,
    pub outp: u32,
    pub outn: Option<u32>,
}

/// Prepared topology.
#[derive(Clone, Debug)]
pub struct Circuit {
    pub id: String,
    pub op_type: OpAmpType,
    pub first_stage: BlockType,
    pub op: Arc<BlockInstance>,
    pub flat: Arc<FlatNetlist>,
    pub plan: BiasPlan,
    pub roles: Vec<Role>,
    /// Matched transistor groups: equal W/L scaling, shared overdrive and length.
    pub groups: Vec<Vec<usize>>,
    /// Capacitors sized together.
    pub cap_groups: Vec<Vec<usize>>,
    pub nets: Nets,
    pub stages: Vec<Stage>,
    /// Two-stage with Miller compensation.
    pub miller: bool,
}

const STAGES: [BlockType; 8] = [
    BlockType::AS,
    BlockType::ATel,
    BlockType::AFc,
    BlockType::ASym,
    BlockType::AC,
    BlockType::AInv,
    BlockType::AInvVb,
    BlockType::ACmfb,
];

fn core_role(flat: &FlatNetlist, i: usize, rails: [u32; 2]) -> Role {
    let d = &flat.devices[i];
    let anc = &d.ancestry;
    let Some(k) = anc.iter().position(|t| STAGES.contains(t)) else {
        return Role::Tail;
    };
    let inner = &anc[k..];
    let has = |t: BlockType| inner.contains(&t);
    match anc[k] {
        BlockType::ACmfb => {
            if has(BlockType::TcCmfb) {
                Role::CmfbHalf
            } else {
                Role::Cmfb
            }
        }
        BlockType::AInv | BlockType::AInvVb => Role::Second,
        first => {
            if has(BlockType::Bs) {
                Role::Tail
            } else if has(BlockType::Load2) && first != BlockType::ATel {
                let at = anc.iter().position(|t| *t == BlockType::Load2).expect("load present");
                let part = d.path[at];
                let s = flat.net(i, SOURCE);
                if first == BlockType::AFc && part == 0 {
                    Role::Fold
                } else if rails.contains(&s) {
                    Role::FoldPlusHalf
                } else {
                    Role::Fold
                }
            } else {
                Role::TailHalf
            }
        }
    }
}

/// Reference multiples carried by each bias vb: its own feed plus every vb
/// stacked on it.
fn vb_loads(plan: &BiasPlan) -> Vec<f64> {
    let n = plan.vbs.len();
    let mut load = vec![1.0; n];
    for i in 0..n {
        let mut at = plan.vbs[i].stacked_on;
        let mut guard = 0;
        while let Some(b) = at {
            load[b] += 1.0;
            at = plan.vbs[b].stacked_on;
            guard += 1;
            if guard > n {
                break;
            }
        }
    }
    load
}

struct Uf(Vec<usize>);

impl Uf {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Unions corresponding devices of structurally identical siblings.
fn match_siblings(inst: &BlockInstance, offset: usize, uf: &mut Uf) {
    if inst.is_leaf() || inst.block_type == BlockType::BiasO {
        return;
    }
    let mut offs = Vec::with_capacity(inst.children.len());
    let mut o = offset;
    for c in &inst.children {
        offs.push(o);
        o += c.device_count();
    }
    for (i, j) in (0..inst.children.len()).tuple_combinations() {
        let (a, b) = (&inst.children[i], &inst.children[j]);
        let same = Arc::ptr_eq(a, b)
            || (a.block_type == b.block_type
                && a.doping == b.doping
                && a.device_count() == b.device_count()
                && a.decomposition() == b.decomposition()
                && a.digest() == b.digest());
        if same {
            for t in 0..a.device_count() {
                uf.union(offs[i] + t, offs[j] + t);
            }
        }
    }
    for (c, &o) in inst.children.iter().zip(&offs) {
        match_siblings(c, o, uf);
    }
}

fn groups_from(uf: &mut Uf, members: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut by_root: indexmap::IndexMap<usize, Vec<usize>> = indexmap::IndexMap::new();
    for i in members {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    by_root.into_values().collect()
}

impl Circuit {
    /// Biases the topology core and extracts everything evaluation needs.
    pub fn prepare(top: &Topology, store: &ImplementationStore) -> Result<Circuit, CircuitError> {
        let (op, plan) = synthesize_bias(&top.core, store)?;
        let op = Arc::new(op);
        let flat = op.flat();
        let pin = |p: &str| flat.pin_net(p).ok_or_else(|| CircuitError::Structure(format!("missing pin {p}")));
        let single = top.is_single_output();
        let nets = Nets {
            vdd: pin("vdd")?,
            vss: pin("vss")?,
            inp: pin("inp")?,
            inn: pin("inn")?,
            vref: flat.pin_net("v_cm_ref"),
            outp: if single { pin("out")? } else { pin("outp")? },
            outn: if single { None } else { Some(pin("outn")?) },
        };
        let rails = [nets.vdd, nets.vss];
        let loads = vb_loads(&plan);
        let nv = plan.vbs.len();
        let roles: Vec<Role> = (0..flat.devices.len())
            .map(|i| {
                let d = &flat.devices[i];
                if d.kind == DeviceKind::Capacitor {
                    Role::Capacitor
                } else if d.path[0] == 1 {
                    let child = d.path[1] as usize;
                    Role::Reference(if child < nv { loads[child] } else { 1.0 })
                } else {
                    core_role(&flat, i, rails)
                }
            })
            .collect();

        let n = flat.devices.len();
        let mut uf = Uf((0..n).collect());
        let mut by_key: indexmap::IndexMap<(Option<Doping>, u32, u32), usize> = indexmap::IndexMap::new();
        for (i, d) in flat.transistors() {
            let key = (d.doping, flat.net(i, GATE), flat.net(i, SOURCE));
            match by_key.get(&key) {
                Some(&j) => uf.union(i, j),
                None => {
                    by_key.insert(key, i);
                }
            }
        }
        match_siblings(&op, 0, &mut uf);
        let groups = groups_from(&mut uf, flat.transistors().map(|(i, _)| i));
        let cap_groups = groups_from(&mut uf, (0..n).filter(|&i| !flat.devices[i].is_transistor()));

        let resolve = |p: PinRef| -> Result<u32, CircuitError> {
            let mut path = vec![0u16];
            path.extend(&p.path);
            let t = op.resolve(&PinRef::new(path, &p.pin)).map_err(|e| CircuitError::Structure(e.to_string()))?;
            Ok(flat.terminal_net[t])
        };
        let gated = |net: u32| -> Vec<usize> {
            flat.transistors()
                .filter(|(i, d)| flat.net(*i, GATE) == net && d.kind == DeviceKind::NormalTransistor)
                .map(|(i, _)| i)
                .collect()
        };
        let mut inputs = vec![nets.inp, nets.inn];
        inputs.extend(nets.vref);
        let first_in = gated(nets.inp);
        let t = top.op_type;
        let (stages, miller) = match (t.kind, t.variant) {
            (OpAmpKind::SingleOutput, Variant::OneStage) | (OpAmpKind::Complementary, _) | (OpAmpKind::FullyDifferential, Variant::OneStage) => (
                vec![Stage { out: nets.outp, out_neg: nets.outn, input_devices: first_in, grounded: inputs.clone() }],
                false,
            ),
            (OpAmpKind::SingleOutput, v) => {
                let s1 = resolve(PinRef::child(0, if v == Variant::Symmetrical { "out21" } else { "out2" }))?;
                let mut g2 = inputs.clone();
                g2.push(s1);
                (
                    vec![
                        Stage { out: s1, out_neg: None, input_devices: first_in, grounded: inputs.clone() },
                        Stage { out: nets.outp, out_neg: None, input_devices: gated(s1), grounded: g2 },
                    ],
                    v == Variant::TwoStage,
                )
            }
            (OpAmpKind::FullyDifferential, _) => {
                let a = resolve(PinRef::child(0, "out2"))?;
                let b = resolve(PinRef::child(0, "out1"))?;
                let mut g2 = inputs.clone();
                g2.extend([a, b]);
                (
                    vec![
                        Stage { out: a, out_neg: Some(b), input_devices: first_in, grounded: inputs.clone() },
                        Stage { out: nets.outp, out_neg: nets.outn, input_devices: gated(a), grounded: g2 },
                    ],
                    true,
                )
            }
        };
        if let Some(s) = stages.iter().find(|s| s.input_devices.is_empty()) {
            return Err(CircuitError::Structure(format!("stage driving net {} has no input transistor", s.out)));
        }
        Ok(Circuit {
            id: top.id.clone(),
            op_type: t,
            first_stage: top.first_stage,
            op,
            flat,
            plan,
            roles,
            groups,
            cap_groups,
            nets,
            stages,
            miller,
        })
    }

    /// Per-device currents for the given branch currents.
    pub fn currents(&self, b: &Branches) -> Vec<f64> {
        self.roles.iter().map(|r| r.current(b)).collect()
    }

    pub fn has_role(&self, pred: impl Fn(Role) -> bool) -> bool {
        self.roles.iter().any(|r| pred(*r))
    }

    pub fn transistor_count(&self) -> usize {
        self.flat.transistor_count()
    }
}
