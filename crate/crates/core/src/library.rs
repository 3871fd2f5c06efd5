//! Functional block types, their pin vocabularies, and the store of
//! implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composer::{compose, ComposeError, ComposerTask, ConnectionSpec, Expr, RaMode, Rule, Selector};
use crate::netlist::{BlockInstance, DeviceKind, Doping};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    Nt,
    Dt,
    Cap,
    VbSimple,
    VbCascode,
    CbSimple,
    CbCascode,
    Dp,
    LpSt,
    LpCas,
    LpVb,
    Load1,
    Load2,
    TcS,
    TcC,
    TcCmfb,
    TcInv,
    Bs,
    AS,
    AFc,
    ATel,
    ASym,
    AInv,
    AInvVb,
    ACmfb,
    AC,
    OpSo1,
    OpSo2,
    OpSoSym,
    OpFd1,
    OpFd2,
    OpComp,
    BiasO,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct HierarchyLevel(pub u8);

impl BlockType {
    pub const ALL: [BlockType; 33] = [
        BlockType::Nt,
        BlockType::Dt,
        BlockType::Cap,
        BlockType::VbSimple,
        BlockType::VbCascode,
        BlockType::CbSimple,
        BlockType::CbCascode,
        BlockType::Dp,
        BlockType::LpSt,
        BlockType::LpCas,
        BlockType::LpVb,
        BlockType::Load1,
        BlockType::Load2,
        BlockType::TcS,
        BlockType::TcC,
        BlockType::TcCmfb,
        BlockType::TcInv,
        BlockType::Bs,
        BlockType::AS,
        BlockType::AFc,
        BlockType::ATel,
        BlockType::ASym,
        BlockType::AInv,
        BlockType::AInvVb,
        BlockType::ACmfb,
        BlockType::AC,
        BlockType::OpSo1,
        BlockType::OpSo2,
        BlockType::OpSoSym,
        BlockType::OpFd1,
        BlockType::OpFd2,
        BlockType::OpComp,
        BlockType::BiasO,
    ];

    pub fn name(self) -> &'static str {
        use BlockType::*;
        match self {
            Nt => "nt",
            Dt => "dt",
            Cap => "cap",
            VbSimple => "vb_simple",
            VbCascode => "vb_cascode",
            CbSimple => "cb_simple",
            CbCascode => "cb_cascode",
            Dp => "dp",
            LpSt => "l_p_st",
            LpCas => "l_p_cas",
            LpVb => "l_p_vb",
            Load1 => "load_1",
            Load2 => "load_2",
            TcS => "tc_s",
            TcC => "tc_c",
            TcCmfb => "tc_cmfb",
            TcInv => "tc_inv",
            Bs => "b_s",
            AS => "a_s",
            AFc => "a_fc",
            ATel => "a_tel",
            ASym => "a_sym",
            AInv => "a_inv",
            AInvVb => "a_inv_vb",
            ACmfb => "a_cmfb",
            AC => "a_c",
            OpSo1 => "op_so_1",
            OpSo2 => "op_so_2",
            OpSoSym => "op_so_sym",
            OpFd1 => "op_fd_1",
            OpFd2 => "op_fd_2",
            OpComp => "op_comp",
            BiasO => "b_O",
        }
    }

    pub fn from_name(name: &str) -> Option<BlockType> {
        BlockType::ALL.iter().copied().find(|t| t.name() == name)
    }

    pub fn level(self) -> HierarchyLevel {
        use BlockType::*;
        HierarchyLevel(match self {
            Nt | Dt | Cap => 1,
            VbSimple | VbCascode | CbSimple | CbCascode | Dp => 2,
            LpSt | LpCas | LpVb | Load1 | Load2 | TcS | TcC | TcCmfb | TcInv | Bs => 3,
            AS | AFc | ATel | ASym | AInv | AInvVb | ACmfb | AC | BiasO => 4,
            OpSo1 | OpSo2 | OpSoSym | OpFd1 | OpFd2 | OpComp => 5,
        })
    }

    /// Full generic pin set. Pins listed by [`BlockType::optional_pins`]
    /// exist only on the larger implementations.
    pub fn pin_vocabulary(self) -> &'static [&'static str] {
        use BlockType::*;
        match self {
            Nt | Dt => &["gate", "drain", "source"],
            Cap => &["plus", "minus"],
            VbSimple => &["in", "out1", "source"],
            VbCascode => &["in", "out1", "out2", "inner", "source"],
            CbSimple => &["in1", "out", "source"],
            CbCascode => &["in1", "in2", "inner", "out", "source"],
            Dp | TcS => &["in1", "in2", "out1", "out2", "source"],
            LpSt | Load1 => &["in1", "out1", "out2", "source", "in2", "inner1", "inner2"],
            LpCas => &["in1", "out1", "out2", "source1", "source2"],
            LpVb => &["in1", "in2", "out11", "out21", "source", "out12", "out22"],
            Load2 => &[
                "out1",
                "out2",
                "in1_lp2",
                "source_lp2",
                "in2_lp2",
                "inner1_lp2",
                "inner2_lp2",
                "source_lp1",
                "source1_lp1",
                "source2_lp1",
                "in1_lp1",
                "in2_lp1",
                "inner1_lp1",
                "inner2_lp1",
            ],
            TcC => &["in1", "in2", "out1_n", "out2_n", "out1_p", "out2_p", "source_n", "source_p"],
            TcCmfb => &["in1", "in2", "vref", "out1", "out2", "source1", "source2"],
            TcInv | Bs => &["in1", "out", "source", "in2", "inner"],
            AS | AFc | ATel => &["in1", "in2", "out1", "out2", "cmfb_in", "rail_n", "rail_p"],
            ASym => &["in1", "in2", "out11", "out21", "rail_n", "rail_p", "out12", "out22"],
            AInv => &["in_tc1", "out", "in_bs1", "rail_n", "rail_p", "in_tc2", "in_bs2"],
            AInvVb => &["in_tc1", "out", "out_bs1", "rail_n", "rail_p", "in_tc2", "out_bs2"],
            ACmfb => &["in1", "in2", "vref", "out", "rail_n", "rail_p"],
            AC => &["in1", "in2", "out1", "out2", "rail_n", "rail_p"],
            OpSo1 | OpSo2 | OpSoSym | OpComp => &["inp", "inn", "out", "vdd", "vss", "p_bias"],
            OpFd1 | OpFd2 => &["inp", "inn", "outp", "outn", "v_cm_ref", "vdd", "vss", "p_bias"],
            BiasO => &["p_bias", "rail_n", "rail_p"],
        }
    }

    /// Pins that only some implementations carry.
    pub fn optional_pins(self) -> &'static [&'static str] {
        use BlockType::*;
        match self {
            LpSt | Load1 => &["in2", "inner1", "inner2"],
            LpVb => &["out12", "out22"],
            Load2 => &[
                "in2_lp2",
                "inner1_lp2",
                "inner2_lp2",
                "source_lp1",
                "source1_lp1",
                "source2_lp1",
                "in1_lp1",
                "in2_lp1",
                "inner1_lp1",
                "inner2_lp1",
            ],
            TcInv | Bs => &["in2", "inner"],
            ASym => &["out12", "out22"],
            AInv => &["in_tc2", "in_bs2"],
            AInvVb => &["in_tc2", "out_bs2"],
            OpSo1 | OpSo2 | OpSoSym | OpComp | OpFd1 | OpFd2 => &["p_bias"],
            BiasO => &["rail_n", "rail_p"],
            _ => &[],
        }
    }

    pub fn required_pins(self) -> impl Iterator<Item = &'static str> {
        let opt = self.optional_pins();
        self.pin_vocabulary().iter().copied().filter(move |p| !opt.contains(p))
    }

    /// Fixed transistor count where the type has one.
    pub fn transistor_count_class(self) -> Option<usize> {
        use BlockType::*;
        match self {
            Nt | Dt | VbSimple | CbSimple => Some(1),
            VbCascode | CbCascode | Dp | TcS | LpCas => Some(2),
            TcC | TcCmfb => Some(4),
            Cap => Some(0),
            _ => None,
        }
    }

    pub fn is_voltage_bias(self) -> bool {
        matches!(self, BlockType::VbSimple | BlockType::VbCascode)
    }

    pub fn is_current_bias(self) -> bool {
        matches!(self, BlockType::CbSimple | BlockType::CbCascode)
    }

    pub fn is_op_amp(self) -> bool {
        self.level() == HierarchyLevel(5)
    }

    /// Whether implementations are built eagerly into the store.
    pub fn build_phase(self) -> BuildPhase {
        use BlockType::*;
        match self {
            Nt | Dt | Cap | VbSimple | VbCascode | CbSimple | CbCascode | Dp | TcS | TcC | TcCmfb
            | TcInv | Bs | LpVb | AInv | AInvVb | ACmfb | ASym => BuildPhase::Upfront,
            _ => BuildPhase::OnDemand,
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum BuildPhase {
    Upfront,
    OnDemand,
}

pub type Impls = Vec<Arc<BlockInstance>>;

/// Leaf prototypes of one doping: nt, dt and a capacitor.
pub struct DevicePrototypes {
    pub nt: Arc<BlockInstance>,
    pub dt: Arc<BlockInstance>,
    pub cap: Arc<BlockInstance>,
}

pub fn device_prototypes(d: Doping) -> DevicePrototypes {
    DevicePrototypes {
        nt: Arc::new(BlockInstance::leaf("nt", DeviceKind::NormalTransistor, Some(d))),
        dt: Arc::new(BlockInstance::leaf("dt", DeviceKind::DiodeTransistor, Some(d))),
        cap: Arc::new(BlockInstance::leaf("cap", DeviceKind::Capacitor, None)),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("block type `{0}` has no stored implementations")]
    UnknownType(BlockType),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

/// Implementations keyed by block type and doping (`None` for blocks that
/// mix dopings), each list in digest order.
#[derive(Default, Clone)]
pub struct ImplementationStore {
    map: BTreeMap<(BlockType, Option<Doping>), Impls>,
}

impl ImplementationStore {
    pub fn insert(&mut self, t: BlockType, d: Option<Doping>, mut impls: Impls) {
        impls.sort_by_key(|i| i.digest());
        self.map.insert((t, d), impls);
    }

    pub fn get(&self, t: BlockType, d: Option<Doping>) -> Result<&Impls, LibraryError> {
        self.map.get(&(t, d)).ok_or(LibraryError::UnknownType(t))
    }

    /// Shorthand for a doped block type.
    pub fn of(&self, t: BlockType, d: Doping) -> &Impls {
        self.map.get(&(t, Some(d))).unwrap_or_else(|| panic!("{t}/{d} not built"))
    }

    pub fn contains(&self, t: BlockType, d: Option<Doping>) -> bool {
        self.map.contains_key(&(t, d))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(BlockType, Option<Doping>), &Impls)> {
        self.map.iter()
    }

    /// Implementations of a type summed over both dopings.
    pub fn count(&self, t: BlockType) -> usize {
        self.map.iter().filter(|((k, _), _)| *k == t).map(|(_, v)| v.len()).sum()
    }
}

fn drain_source() -> ConnectionSpec {
    ConnectionSpec::new(Selector::pin(0, "drain"), Selector::pin(1, "source"))
}

/// Voltage-bias task over the two-transistor cascode with the given
/// additional-connection semantics.
pub fn cascode_vb_task(d: Doping, mode: RaMode) -> ComposerTask {
    let p = device_prototypes(d);
    let set = vec![p.nt.clone(), p.dt.clone()];
    ComposerTask::new(BlockType::VbCascode, Some(d), vec![set.clone(), set])
        .characteristic(vec![drain_source()])
        .rules(vec![Rule::required(
            "in tied to a gate",
            Expr::or(vec![
                Expr::connected(Selector::pin(1, "drain"), Selector::pin(0, "gate")),
                Expr::connected(Selector::pin(1, "drain"), Selector::pin(1, "gate")),
            ]),
        )])
        .additional(
            vec![
                vec![ConnectionSpec::new(Selector::pin(0, "gate"), Selector::pin(1, "gate"))],
                vec![ConnectionSpec::new(Selector::pin(1, "drain"), Selector::pin(0, "gate"))],
            ],
            mode,
        )
        .pins(&[
            ("in", Selector::pin(1, "drain")),
            ("out1", Selector::pin(0, "gate")),
            ("out2", Selector::pin(1, "gate")),
            ("inner", Selector::pin(0, "drain")),
            ("source", Selector::pin(0, "source")),
        ])
}

/// Cascode current bias with a normal output transistor; `diode_lower`
/// admits a diode transistor at the source position.
pub fn cascode_cb_task(d: Doping, diode_lower: bool) -> ComposerTask {
    let p = device_prototypes(d);
    let lower = if diode_lower { vec![p.nt.clone(), p.dt.clone()] } else { vec![p.nt.clone()] };
    cascode_cb_task_over(d, lower, vec![p.nt])
}

fn cascode_cb_task_over(d: Doping, lower: Impls, upper: Impls) -> ComposerTask {
    ComposerTask::new(BlockType::CbCascode, Some(d), vec![lower, upper])
        .characteristic(vec![drain_source()])
        .pins(&[
            ("in1", Selector::pin(0, "gate")),
            ("in2", Selector::pin(1, "gate")),
            ("inner", Selector::pin(0, "drain")),
            ("out", Selector::pin(1, "drain")),
            ("source", Selector::pin(0, "source")),
        ])
}

pub fn simple_vb_task(d: Doping) -> ComposerTask {
    let p = device_prototypes(d);
    ComposerTask::new(BlockType::VbSimple, Some(d), vec![vec![p.nt, p.dt]]).pins(&[
        ("in", Selector::pin(0, "drain")),
        ("out1", Selector::pin(0, "gate")),
        ("source", Selector::pin(0, "source")),
    ])
}

pub fn simple_cb_task(d: Doping) -> ComposerTask {
    let p = device_prototypes(d);
    ComposerTask::new(BlockType::CbSimple, Some(d), vec![vec![p.nt]]).pins(&[
        ("in1", Selector::pin(0, "gate")),
        ("out", Selector::pin(0, "drain")),
        ("source", Selector::pin(0, "source")),
    ])
}

pub fn dp_task(d: Doping) -> ComposerTask {
    let p = device_prototypes(d);
    let set = vec![p.nt];
    ComposerTask::new(BlockType::Dp, Some(d), vec![set.clone(), set])
        .characteristic(vec![ConnectionSpec::new(Selector::pin(0, "source"), Selector::pin(1, "source"))])
        .pins(&[
            ("in1", Selector::pin(0, "gate")),
            ("in2", Selector::pin(1, "gate")),
            ("out1", Selector::pin(0, "drain")),
            ("out2", Selector::pin(1, "drain")),
            ("source", Selector::pin(0, "source")),
        ])
}

/// Builds every HL1-HL2 block for both dopings.
pub fn build_basic_library() -> Result<ImplementationStore, LibraryError> {
    build_basic_library_with(RaMode::Independent, true)
}

pub fn build_basic_library_with(vb_mode: RaMode, cb_diode_lower: bool) -> Result<ImplementationStore, LibraryError> {
    let mut store = ImplementationStore::default();
    for d in Doping::BOTH {
        let p = device_prototypes(d);
        store.insert(BlockType::Nt, Some(d), vec![p.nt]);
        store.insert(BlockType::Dt, Some(d), vec![p.dt]);
        store.insert(BlockType::VbSimple, Some(d), compose(&simple_vb_task(d))?);
        store.insert(BlockType::VbCascode, Some(d), compose(&cascode_vb_task(d, vb_mode))?);
        store.insert(BlockType::CbSimple, Some(d), compose(&simple_cb_task(d))?);
        store.insert(BlockType::CbCascode, Some(d), compose(&cascode_cb_task(d, cb_diode_lower))?);
        store.insert(BlockType::Dp, Some(d), compose(&dp_task(d))?);
    }
    store.insert(BlockType::Cap, None, vec![device_prototypes(Doping::N).cap]);
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in BlockType::ALL {
            assert_eq!(BlockType::from_name(t.name()), Some(t));
        }
    }

    #[test]
    fn voltage_bias_vocabularies() {
        assert_eq!(BlockType::VbSimple.pin_vocabulary(), &["in", "out1", "source"]);
        let cascode: Vec<_> = BlockType::VbCascode.pin_vocabulary().to_vec();
        for p in ["in", "out1", "source", "inner", "out2"] {
            assert!(cascode.contains(&p));
        }
        assert_eq!(cascode.len(), 5);
    }

    #[test]
    fn prototypes() {
        let p = device_prototypes(Doping::N);
        assert_eq!(p.nt.pin_names(), vec!["gate", "drain", "source"]);
        let f = p.dt.flat();
        assert!(f.same_net((0, crate::netlist::GATE), (0, crate::netlist::DRAIN)));
        assert_eq!(p.cap.n_t(), 0);
    }

    #[test]
    fn basic_counts() {
        let s = build_basic_library().unwrap();
        for d in Doping::BOTH {
            assert_eq!(s.of(BlockType::VbSimple, d).len(), 2);
            assert_eq!(s.of(BlockType::VbCascode, d).len(), 4);
            assert_eq!(s.of(BlockType::CbSimple, d).len(), 1);
            assert_eq!(s.of(BlockType::CbCascode, d).len(), 2);
            assert_eq!(s.of(BlockType::Dp, d).len(), 1);
        }
    }
}
