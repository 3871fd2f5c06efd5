//! Composition rules above the basic library: load parts, loads,
//! transconductances and stage biases, amplification stages, and op-amp
//! assembly, plus the per-type enumeration plans.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{ComposeError, RaMode};
use crate::library::{BlockType, LibraryError};
use crate::netlist::BlockInstance;

pub mod assembly;
pub mod hl3;
pub mod hl4;

pub use assembly::{enumerate_topologies, Topology};
pub use hl3::{enumerate_hl3, is_mirror, is_vb_based, load_parts};
pub use hl4::enumerate_first_stages;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpAmpKind {
    SingleOutput,
    FullyDifferential,
    Complementary,
}

impl OpAmpKind {
    pub const ALL: [OpAmpKind; 3] = [OpAmpKind::SingleOutput, OpAmpKind::FullyDifferential, OpAmpKind::Complementary];

    pub fn short(self) -> &'static str {
        match self {
            OpAmpKind::SingleOutput => "so",
            OpAmpKind::FullyDifferential => "fd",
            OpAmpKind::Complementary => "comp",
        }
    }

    pub fn from_short(s: &str) -> Option<OpAmpKind> {
        OpAmpKind::ALL.into_iter().find(|k| k.short() == s)
    }

    /// Variants enumerated for this kind.
    pub fn variants(self) -> &'static [Variant] {
        match self {
            OpAmpKind::SingleOutput => &[Variant::OneStage, Variant::TwoStage, Variant::Symmetrical],
            OpAmpKind::FullyDifferential => &[Variant::OneStage, Variant::TwoStage],
            OpAmpKind::Complementary => &[Variant::OneStage],
        }
    }
}

impl fmt::Display for OpAmpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    OneStage,
    TwoStage,
    Symmetrical,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpAmpType {
    pub kind: OpAmpKind,
    pub variant: Variant,
}

impl OpAmpType {
    pub fn new(kind: OpAmpKind, variant: Variant) -> Result<OpAmpType, RulesError> {
        if !kind.variants().contains(&variant) {
            return Err(RulesError::Unsupported { kind, variant });
        }
        Ok(OpAmpType { kind, variant })
    }

    pub fn all() -> Vec<OpAmpType> {
        OpAmpKind::ALL
            .into_iter()
            .flat_map(|k| k.variants().iter().map(move |&v| OpAmpType { kind: k, variant: v }))
            .collect()
    }

    /// Block type of the assembled core.
    pub fn block_type(self) -> BlockType {
        match (self.kind, self.variant) {
            (OpAmpKind::SingleOutput, Variant::OneStage) => BlockType::OpSo1,
            (OpAmpKind::SingleOutput, Variant::TwoStage) => BlockType::OpSo2,
            (OpAmpKind::SingleOutput, Variant::Symmetrical) => BlockType::OpSoSym,
            (OpAmpKind::FullyDifferential, Variant::OneStage) => BlockType::OpFd1,
            (OpAmpKind::FullyDifferential, Variant::TwoStage) => BlockType::OpFd2,
            _ => BlockType::OpComp,
        }
    }

    /// Whether a pruned one-stage parent exists for this variant.
    pub fn has_parent(self) -> bool {
        self.variant == Variant::TwoStage
    }
}

impl fmt::Display for OpAmpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            Variant::OneStage => "1",
            Variant::TwoStage => "2",
            Variant::Symmetrical => "sym",
        };
        write!(f, "{}{}", self.kind.short(), v)
    }
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("{kind} op-amps have no {variant:?} variant")]
    Unsupported { kind: OpAmpKind, variant: Variant },
    #[error("calibration manifest: {0}")]
    Calibration(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

/// Load-part admissibility for one op-amp kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRule {
    #[serde(default)]
    pub min_vb_parts: usize,
    pub max_vb_parts: usize,
    /// Transistor count required of the last load part.
    pub control_part_transistors: Option<usize>,
    /// Transistor count required of every load part.
    pub part_transistors: Option<usize>,
    /// vb-based parts must have a driven input (current-mirror parts).
    #[serde(default)]
    pub vb_parts_mirror: bool,
}

impl LoadRule {
    pub fn admits(&self, parts: &[&BlockInstance]) -> bool {
        let vb: Vec<_> = parts.iter().filter(|p| is_vb_based(p)).collect();
        if vb.len() < self.min_vb_parts || vb.len() > self.max_vb_parts {
            return false;
        }
        if let Some(n) = self.control_part_transistors {
            if parts.last().is_none_or(|p| p.n_t() != n) {
                return false;
            }
        }
        if let Some(n) = self.part_transistors {
            if parts.iter().any(|p| p.n_t() != n) {
                return false;
            }
        }
        !self.vb_parts_mirror || vb.iter().all(|p| is_mirror(p))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hl2Choices {
    pub cascode_vb_additional: RaMode,
    pub cascode_cb_diode_lower: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRules {
    pub single_output: LoadRule,
    pub fully_differential: LoadRule,
    pub complementary: LoadRule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCounts {
    pub load_parts: usize,
    pub first_stages: usize,
    pub so_one_stage: usize,
    pub so_total: usize,
    pub fd_one_stage: usize,
    pub fd_two_stage: usize,
    pub comp: usize,
}

/// Contents of `calibration.toml`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub hl2: Hl2Choices,
    pub load_rules: LoadRules,
    pub expected: ExpectedCounts,
}

pub const CALIBRATION_TOML: &str = include_str!("../../calibration.toml");

impl Calibration {
    pub fn from_toml(text: &str) -> Result<Calibration, RulesError> {
        toml::from_str(text).map_err(|e| RulesError::Calibration(e.to_string()))
    }

    /// The manifest shipped with the crate.
    pub fn builtin() -> Calibration {
        Calibration::from_toml(CALIBRATION_TOML).expect("shipped calibration parses")
    }

    pub fn load_rule(&self, kind: OpAmpKind) -> &LoadRule {
        match kind {
            OpAmpKind::SingleOutput => &self.load_rules.single_output,
            OpAmpKind::FullyDifferential => &self.load_rules.fully_differential,
            OpAmpKind::Complementary => &self.load_rules.complementary,
        }
    }
}

/// One step of an enumeration plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PlanStep {
    Compose(BlockType),
    Assemble(BlockType),
    Bias,
}

/// Block types composed, in order, to enumerate one op-amp type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CompositionPlan {
    pub op_type: OpAmpType,
    pub steps: Vec<PlanStep>,
}

impl CompositionPlan {
    pub fn blocks(&self) -> impl Iterator<Item = BlockType> + '_ {
        self.steps.iter().filter_map(|s| match s {
            PlanStep::Compose(t) | PlanStep::Assemble(t) => Some(*t),
            PlanStep::Bias => None,
        })
    }

    pub fn includes(&self, t: BlockType) -> bool {
        self.blocks().any(|b| b == t)
    }
}

pub fn plan_for(t: OpAmpType) -> Result<CompositionPlan, RulesError> {
    use BlockType::*;
    let t = OpAmpType::new(t.kind, t.variant)?;
    let mut steps: Vec<PlanStep> = Vec::new();
    let hl3: &[BlockType] = match (t.kind, t.variant) {
        (OpAmpKind::SingleOutput, Variant::Symmetrical) => &[LpVb, TcS, Bs, TcInv],
        (OpAmpKind::SingleOutput, Variant::OneStage) => &[LpSt, LpCas, Load1, Load2, TcS, Bs],
        (OpAmpKind::SingleOutput, Variant::TwoStage) => &[LpSt, LpCas, Load1, Load2, TcS, Bs, TcInv],
        (OpAmpKind::FullyDifferential, Variant::OneStage) => &[LpSt, LpCas, LpVb, Load1, Load2, TcS, TcCmfb, Bs],
        (OpAmpKind::FullyDifferential, _) => &[LpSt, LpCas, LpVb, Load1, Load2, TcS, TcCmfb, Bs, TcInv],
        (OpAmpKind::Complementary, _) => &[LpSt, Load2, TcC, Bs],
    };
    let hl4: &[BlockType] = match (t.kind, t.variant) {
        (OpAmpKind::SingleOutput, Variant::Symmetrical) => &[ASym, AInv, AInvVb],
        (OpAmpKind::SingleOutput, Variant::OneStage) => &[AS, AFc, ATel],
        (OpAmpKind::SingleOutput, Variant::TwoStage) => &[AS, AFc, ATel, AInv],
        (OpAmpKind::FullyDifferential, Variant::OneStage) => &[AS, AFc, ATel, ACmfb],
        (OpAmpKind::FullyDifferential, _) => &[AS, AFc, ATel, ACmfb, AInv],
        (OpAmpKind::Complementary, _) => &[AC],
    };
    steps.extend(hl3.iter().chain(hl4).map(|&b| PlanStep::Compose(b)));
    steps.push(PlanStep::Assemble(t.block_type()));
    steps.push(PlanStep::Bias);
    Ok(CompositionPlan { op_type: t, steps })
}

/// Topology counts of one op-amp kind, from structure only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SupportedCounts {
    pub one_stage: usize,
    pub two_stage: usize,
    pub symmetrical: usize,
    pub total: usize,
}

/// Enumerates every op-amp core of a kind (no sizing) and counts them.
pub fn count_supported(kind: OpAmpKind) -> Result<SupportedCounts, RulesError> {
    let lib = crate::rules::RuleLibrary::build(&Calibration::builtin())?;
    let mut c = SupportedCounts::default();
    for &v in kind.variants() {
        let n = enumerate_topologies(&lib, OpAmpType { kind, variant: v })?.len();
        match v {
            Variant::OneStage => c.one_stage = n,
            Variant::TwoStage => c.two_stage = n,
            Variant::Symmetrical => c.symmetrical = n,
        }
        c.total += n;
    }
    Ok(c)
}

/// Basic library plus every HL3 and HL4 list, built once and shared.
pub struct RuleLibrary {
    pub store: crate::library::ImplementationStore,
    pub calibration: Calibration,
}

impl RuleLibrary {
    pub fn build(cal: &Calibration) -> Result<RuleLibrary, RulesError> {
        let mut store =
            crate::library::build_basic_library_with(cal.hl2.cascode_vb_additional, cal.hl2.cascode_cb_diode_lower)?;
        enumerate_hl3(&mut store)?;
        enumerate_first_stages(&mut store, cal)?;
        Ok(RuleLibrary { store, calibration: cal.clone() })
    }

    /// Load parts: every l_p_st and l_p_cas of both dopings.
    pub fn load_part_count(&self) -> usize {
        self.store.count(BlockType::LpSt) + self.store.count(BlockType::LpCas)
    }

    /// First stages admitted for one op-amp kind.
    pub fn first_stages(&self, kind: OpAmpKind) -> Vec<Arc<BlockInstance>> {
        hl4::first_stages_for(&self.store, &self.calibration, kind)
    }
}
