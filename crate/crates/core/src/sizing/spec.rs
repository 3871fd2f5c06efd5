//! Specification sets: environment constants and performance bounds.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::PerformanceVector;
use super::units::{parse_quantity, UnitError};
use crate::rules::OpAmpKind;

/// Relative tolerance of every pass/fail comparison.
pub const EPS_SPEC: f64 = 1e-6;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Reference current into the bias input, A.
    pub bias_current: f64,
    /// Load capacitance on each output, F.
    pub load_capacitance: f64,
    /// Supply voltage, V.
    pub supply_voltage: f64,
}

impl Environment {
    /// Bit pattern used to key cached explorations.
    pub fn key(&self) -> [u64; 3] {
        [self.bias_current.to_bits(), self.load_capacitance.to_bits(), self.supply_voltage.to_bits()]
    }
}

/// Bounded performance features in report order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    GateArea,
    Power,
    PhaseMargin,
    Cmrr,
    Cmir,
    Gain,
    Gbw,
    SlewRate,
    OutputSwing,
}

/// Direction a bound may take for a feature.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Shape {
    Upper,
    Lower,
    Range,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::GateArea,
        Feature::Power,
        Feature::PhaseMargin,
        Feature::Cmrr,
        Feature::Cmir,
        Feature::Gain,
        Feature::Gbw,
        Feature::SlewRate,
        Feature::OutputSwing,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Feature::GateArea => "gate_area",
            Feature::Power => "power",
            Feature::PhaseMargin => "phase_margin",
            Feature::Cmrr => "cmrr",
            Feature::Cmir => "cmir",
            Feature::Gain => "gain",
            Feature::Gbw => "gbw",
            Feature::SlewRate => "slew_rate",
            Feature::OutputSwing => "output_swing",
        }
    }

    pub fn from_key(k: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.key() == k)
    }

    /// Base unit of values in spec files and in [`PerformanceVector`].
    pub fn unit(self) -> &'static str {
        match self {
            Feature::GateArea => "um^2",
            Feature::Power => "W",
            Feature::PhaseMargin => "deg",
            Feature::Cmrr | Feature::Gain => "dB",
            Feature::Gbw => "Hz",
            Feature::SlewRate => "V/s",
            Feature::Cmir | Feature::OutputSwing => "V",
        }
    }

    fn shape(self) -> Shape {
        match self {
            Feature::GateArea | Feature::Power => Shape::Upper,
            Feature::Cmir | Feature::OutputSwing => Shape::Range,
            _ => Shape::Lower,
        }
    }

    /// Features that only degrade or stay fixed when a second stage is added.
    pub fn is_start(self) -> bool {
        matches!(self, Feature::GateArea | Feature::Power | Feature::PhaseMargin | Feature::Cmrr | Feature::Cmir)
    }

    /// Scale used to normalize margins: ratios for positive quantities,
    /// absolute differences for dB, degrees and volts.
    fn margin(self, value: f64, bound: f64) -> f64 {
        match self {
            Feature::GateArea | Feature::Power | Feature::Gbw | Feature::SlewRate => {
                if value > 0.0 && bound > 0.0 {
                    (value / bound).ln()
                } else {
                    value - bound
                }
            }
            Feature::PhaseMargin | Feature::Cmrr | Feature::Gain => (value - bound) / 10.0,
            Feature::Cmir | Feature::OutputSwing => (value - bound) / 0.5,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtLeast(f64),
    AtMost(f64),
    /// The capability range must contain `[lo, hi]`.
    Range(f64, f64),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtLeast(v) => write!(f, ">= {v}"),
            Bound::AtMost(v) => write!(f, "<= {v}"),
            Bound::Range(a, b) => write!(f, "{a} .. {b}"),
        }
    }
}

fn at_least(v: f64, b: f64) -> bool {
    v >= b - EPS_SPEC * b.abs()
}

fn at_most(v: f64, b: f64) -> bool {
    v <= b + EPS_SPEC * b.abs()
}

impl Bound {
    /// Pass test and normalized margin (negative when violated).
    fn judge(&self, feature: Feature, perf: &PerformanceVector) -> (bool, f64) {
        let (lo, hi) = match feature {
            Feature::Cmir => (perf.vcm_min, perf.vcm_max),
            Feature::OutputSwing => (perf.vout_min, perf.vout_max),
            _ => {
                let v = perf.get(feature);
                (v, v)
            }
        };
        match *self {
            Bound::AtLeast(b) => (at_least(lo, b), feature.margin(lo, b)),
            Bound::AtMost(b) => (at_most(lo, b), -feature.margin(lo, b)),
            Bound::Range(a, b) => {
                let ok = at_most(lo, a) && at_least(hi, b);
                (ok, feature.margin(a, lo).min(feature.margin(hi, b)))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read spec file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed spec file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown op-amp type `{0}` (expected so, fd or comp)")]
    OpAmpType(String),
    #[error("unknown bound `{0}`")]
    UnknownFeature(String),
    #[error("bound `{feature}`: {source}")]
    Unit { feature: String, source: UnitError },
    #[error("environment `{field}`: {source}")]
    EnvUnit { field: String, source: UnitError },
    #[error("bound `{feature}` must be written `{expected}`")]
    Direction { feature: String, expected: &'static str },
    #[error("environment `{0}` must be positive")]
    Environment(String),
}

/// User specification: op-amp kind, environment and bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecSet {
    pub name: String,
    pub op_amp: OpAmpKind,
    pub env: Environment,
    pub bounds: IndexMap<Feature, Bound>,
    /// Validation notes, e.g. ignored bounds.
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    name: Option<String>,
    op_amp_type: String,
    environment: RawEnv,
    #[serde(default)]
    bounds: IndexMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    bias_current: String,
    load_capacitance: String,
    supply_voltage: String,
}

fn env_q(field: &str, text: &str, unit: &str) -> Result<f64, SpecError> {
    let v = parse_quantity(text, unit).map_err(|source| SpecError::EnvUnit { field: field.to_string(), source })?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(SpecError::Environment(field.to_string()));
    }
    Ok(v)
}

fn parse_bound(feature: Feature, text: &str) -> Result<Bound, SpecError> {
    let q = |s: &str| parse_quantity(s, feature.unit()).map_err(|source| SpecError::Unit { feature: feature.key().into(), source });
    let t = text.trim();
    let direction = |expected| SpecError::Direction { feature: feature.key().into(), expected };
    match feature.shape() {
        Shape::Range => {
            let (a, b) = t.split_once("..").ok_or_else(|| direction("<lo> .. <hi>"))?;
            let (a, b) = (q(a)?, q(b)?);
            if a > b {
                return Err(direction("<lo> .. <hi> with lo <= hi"));
            }
            Ok(Bound::Range(a, b))
        }
        Shape::Lower => t.strip_prefix(">=").map(|r| q(r).map(Bound::AtLeast)).unwrap_or_else(|| Err(direction(">= <value>"))),
        Shape::Upper => t.strip_prefix("<=").map(|r| q(r).map(Bound::AtMost)).unwrap_or_else(|| Err(direction("<= <value>"))),
    }
}

impl SpecSet {
    pub fn from_toml(text: &str) -> Result<SpecSet, SpecError> {
        let raw: RawSpec = toml::from_str(text)?;
        let op_amp = OpAmpKind::from_short(&raw.op_amp_type).ok_or_else(|| SpecError::OpAmpType(raw.op_amp_type.clone()))?;
        let env = Environment {
            bias_current: env_q("bias_current", &raw.environment.bias_current, "A")?,
            load_capacitance: env_q("load_capacitance", &raw.environment.load_capacitance, "F")?,
            supply_voltage: env_q("supply_voltage", &raw.environment.supply_voltage, "V")?,
        };
        let mut bounds = IndexMap::new();
        let mut warnings = Vec::new();
        for (k, v) in &raw.bounds {
            let f = Feature::from_key(k).ok_or_else(|| SpecError::UnknownFeature(k.clone()))?;
            let b = parse_bound(f, v)?;
            if f == Feature::Cmir && op_amp == OpAmpKind::Complementary {
                warnings.push("cmir bound ignored for complementary op-amps".to_string());
                continue;
            }
            bounds.insert(f, b);
        }
        bounds.sort_keys();
        Ok(SpecSet { name: raw.name.unwrap_or_default(), op_amp, env, bounds, warnings })
    }

    pub fn load(path: &Path) -> Result<SpecSet, SpecError> {
        let mut s = SpecSet::from_toml(&std::fs::read_to_string(path)?)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    /// A spec with no bounds.
    pub fn unconstrained(op_amp: OpAmpKind, env: Environment) -> SpecSet {
        SpecSet { name: "unconstrained".into(), op_amp, env, bounds: IndexMap::new(), warnings: Vec::new() }
    }

    pub fn with_bound(mut self, f: Feature, b: Bound) -> SpecSet {
        self.bounds.insert(f, b);
        self.bounds.sort_keys();
        self
    }

    pub fn bound(&self, f: Feature) -> Option<Bound> {
        self.bounds.get(&f).copied()
    }
}

/// Result of comparing a performance vector against a spec.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecCheck {
    /// Per bounded feature: pass flag and normalized margin.
    pub features: IndexMap<Feature, (bool, f64)>,
    pub pass: bool,
}

impl SpecCheck {
    pub fn pass_start(&self) -> bool {
        self.features.iter().all(|(f, (ok, _))| !f.is_start() || *ok)
    }

    pub fn pass_end(&self) -> bool {
        self.features.iter().all(|(f, (ok, _))| f.is_start() || *ok)
    }

    /// Sum of violated margins over the selected group.
    pub fn violation(&self, start: bool) -> f64 {
        self.features.iter().filter(|(f, _)| f.is_start() == start).map(|(_, (_, m))| (-m).max(0.0)).sum()
    }

    /// Smallest margin over all bounds; infinite for an empty spec.
    pub fn min_margin(&self) -> f64 {
        self.features.values().map(|(_, m)| *m).fold(f64::INFINITY, f64::min)
    }
}

/// Compares `perf` with every bound of `spec`.
pub fn check_spec(perf: &PerformanceVector, spec: &SpecSet) -> SpecCheck {
    let features: IndexMap<Feature, (bool, f64)> = spec.bounds.iter().map(|(&f, b)| (f, b.judge(f, perf))).collect();
    let pass = features.values().all(|(ok, _)| *ok);
    SpecCheck { features, pass }
}
