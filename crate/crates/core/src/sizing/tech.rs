//! Technology parameters for the square-law device model.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::units::{parse_quantity, UnitError};
use crate::netlist::Doping;

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceParams {
    pub model: String,
    /// Mobility times oxide capacitance, A/V^2.
    pub kp: f64,
    /// Threshold magnitude, V.
    pub vth: f64,
    /// Early voltage per channel length, V/um.
    pub va_per_um: f64,
    /// Gate oxide capacitance per area, F/um^2.
    pub cox: f64,
    /// Overlap and junction capacitance per width, F/um.
    pub cov: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TechnologyModel {
    pub n: DeviceParams,
    pub p: DeviceParams,
    pub w_min: f64,
    pub w_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Overdrive range explored by the sizer, V.
    pub vov_min: f64,
    pub vov_max: f64,
}

impl Default for TechnologyModel {
    /// A generic 5 V, 0.35 um class process.
    fn default() -> Self {
        TechnologyModel {
            n: DeviceParams { model: "nmos".into(), kp: 170e-6, vth: 0.5, va_per_um: 10.0, cox: 4.5e-15, cov: 0.3e-15 },
            p: DeviceParams { model: "pmos".into(), kp: 58e-6, vth: 0.65, va_per_um: 15.0, cox: 4.5e-15, cov: 0.3e-15 },
            w_min: 1.0,
            w_max: 1000.0,
            l_min: 0.5,
            l_max: 10.0,
            vov_min: 0.08,
            vov_max: 0.8,
        }
    }
}

#[derive(Debug, Error)]
pub enum TechError {
    #[error("cannot read technology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed technology file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("technology field `{field}`: {source}")]
    Unit { field: String, source: UnitError },
    #[error("technology field `{0}` must be positive with min < max")]
    Range(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    model: String,
    kp: String,
    vth: String,
    early_voltage_per_length: String,
    cox: String,
    cov: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGlobal {
    w_min: String,
    w_max: String,
    l_min: String,
    l_max: String,
    vov_min: String,
    vov_max: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTech {
    global: RawGlobal,
    nmos: RawDevice,
    pmos: RawDevice,
}

fn q(field: &str, text: &str, unit: &str) -> Result<f64, TechError> {
    parse_quantity(text, unit).map_err(|source| TechError::Unit { field: field.to_string(), source })
}

impl DeviceParams {
    fn from_raw(prefix: &str, r: &RawDevice) -> Result<DeviceParams, TechError> {
        let f = |k: &str| format!("{prefix}.{k}");
        Ok(DeviceParams {
            model: r.model.clone(),
            kp: q(&f("kp"), &r.kp, "A/V^2")?,
            vth: q(&f("vth"), &r.vth, "V")?,
            va_per_um: q(&f("early_voltage_per_length"), &r.early_voltage_per_length, "V/um")?,
            cox: q(&f("cox"), &r.cox, "F/um^2")?,
            cov: q(&f("cov"), &r.cov, "F/um")?,
        })
    }
}

impl TechnologyModel {
    pub fn params(&self, d: Doping) -> &DeviceParams {
        match d {
            Doping::N => &self.n,
            Doping::P => &self.p,
        }
    }

    pub fn model_name(&self, d: Doping) -> &str {
        &self.params(d).model
    }

    pub fn from_toml(text: &str) -> Result<TechnologyModel, TechError> {
        let raw: RawTech = toml::from_str(text)?;
        let g = &raw.global;
        let t = TechnologyModel {
            n: DeviceParams::from_raw("nmos", &raw.nmos)?,
            p: DeviceParams::from_raw("pmos", &raw.pmos)?,
            w_min: q("global.w_min", &g.w_min, "um")?,
            w_max: q("global.w_max", &g.w_max, "um")?,
            l_min: q("global.l_min", &g.l_min, "um")?,
            l_max: q("global.l_max", &g.l_max, "um")?,
            vov_min: q("global.vov_min", &g.vov_min, "V")?,
            vov_max: q("global.vov_max", &g.vov_max, "V")?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<TechnologyModel, TechError> {
        TechnologyModel::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TechError> {
        let pairs = [("w", self.w_min, self.w_max), ("l", self.l_min, self.l_max), ("vov", self.vov_min, self.vov_max)];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && hi > lo) {
                return Err(TechError::Range(name.to_string()));
            }
        }
        for (name, d) in [("nmos", &self.n), ("pmos", &self.p)] {
            if [d.kp, d.vth, d.va_per_um, d.cox, d.cov].iter().any(|v| !(*v > 0.0)) {
                return Err(TechError::Range(name.to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SAMPLE: &str = r#"
[global]
w_min = "1 um"
w_max = "1000 um"
l_min = "0.5 um"
l_max = "10 um"
vov_min = "80 mV"
vov_max = "800 mV"

[nmos]
model = "nmos"
kp = "170 uA/V^2"
vth = "0.5 V"
early_voltage_per_length = "10 V/um"
cox = "4.5 fF/um^2"
cov = "0.3 fF/um"

[pmos]
model = "pmos"
kp = "58 uA/V^2"
vth = "0.65 V"
early_voltage_per_length = "15 V/um"
cox = "4.5 fF/um^2"
cov = "0.3 fF/um"
"#;

    #[test]
    fn parses_sample_equal_to_default() {
        let t = TechnologyModel::from_toml(SAMPLE).unwrap();
        let d = TechnologyModel::default();
        assert_eq!(t.n.model, d.n.model);
        assert!((t.n.kp - d.n.kp).abs() < 1e-12);
        assert!((t.p.cox - d.p.cox).abs() < 1e-24);
        assert!((t.vov_min - 0.08).abs() < 1e-12);
    }

    #[test]
    fn unitless_value_rejected() {
        let bad = SAMPLE.replace("\"0.5 V\"", "\"0.5\"");
        assert!(matches!(TechnologyModel::from_toml(&bad), Err(TechError::Unit { .. })));
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = SAMPLE.replace("[nmos]", "[nmos]\nbogus = \"1 V\"");
        assert!(TechnologyModel::from_toml(&bad).is_err());
    }
}
