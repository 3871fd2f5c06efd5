//! SPICE subcircuit serialization of flattened netlists.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DeviceKind, Doping, FlatNetlist, DRAIN, GATE, SOURCE};
use crate::sizing::TechnologyModel;

/// Size of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeviceSize {
    /// Width and length in micrometres.
    Mos { w: f64, l: f64 },
    /// Capacitance in farads.
    Cap { c: f64 },
}

/// Sizing of a flattened netlist, indexed like its device list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SizingVector {
    pub devices: Vec<Option<DeviceSize>>,
    /// Drain current of each device in amperes; zero for capacitors.
    pub currents: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpiceError {
    #[error("no sizing entry for device {0}")]
    MissingSize(String),
    #[error("sizing entry for device {0} has the wrong kind")]
    WrongKind(String),
}

/// Element names in netlist order: MN1.., MP1.., C1...
pub fn device_names(flat: &FlatNetlist) -> Vec<String> {
    let (mut n, mut p, mut c) = (0, 0, 0);
    flat.devices
        .iter()
        .map(|d| match (d.kind, d.doping) {
            (DeviceKind::Capacitor, _) => {
                c += 1;
                format!("C{c}")
            }
            (_, Some(Doping::P)) => {
                p += 1;
                format!("MP{p}")
            }
            _ => {
                n += 1;
                format!("MN{n}")
            }
        })
        .collect()
}

/// Node names: top-level pins keep their names, other nets become `n<id>`.
pub fn node_names(flat: &FlatNetlist) -> Vec<String> {
    let mut names: Vec<Option<String>> = vec![None; flat.net_count];
    for (pin, &net) in &flat.pins {
        let slot = &mut names[net as usize];
        if slot.is_none() {
            *slot = Some(pin.clone());
        }
    }
    names.into_iter().enumerate().map(|(i, n)| n.unwrap_or_else(|| format!("n{i}"))).collect()
}

pub fn format_si(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn format_cap(c: f64) -> String {
    let (scale, unit) = if c < 1e-12 {
        (1e15, "f")
    } else if c < 1e-9 {
        (1e12, "p")
    } else if c < 1e-6 {
        (1e9, "n")
    } else {
        (1e6, "u")
    };
    format!("{}{}", format_si(c * scale), unit)
}

pub fn export_spice(name: &str, flat: &FlatNetlist, tech: &TechnologyModel, sizing: &SizingVector) -> Result<String, SpiceError> {
    let dev_names = device_names(flat);
    let nodes = node_names(flat);
    let rail = |name: &str| -> String {
        flat.pin_net(name).map(|n| nodes[n as usize].clone()).unwrap_or_else(|| name.to_string())
    };
    let (vdd, vss) = (rail("vdd"), rail("vss"));
    let mut out = String::new();
    let ports: Vec<&str> = flat.pins.keys().map(|s| s.as_str()).collect();
    writeln!(out, ".SUBCKT {} {}", name, ports.join(" ")).unwrap();
    for (i, d) in flat.devices.iter().enumerate() {
        let size = sizing.devices.get(i).copied().flatten().ok_or_else(|| SpiceError::MissingSize(dev_names[i].clone()))?;
        match (d.kind, size) {
            (DeviceKind::Capacitor, DeviceSize::Cap { c }) => {
                let (p, m) = (flat.net(i, 0), flat.net(i, 1));
                writeln!(out, "{} {} {} {}", dev_names[i], nodes[p as usize], nodes[m as usize], format_cap(c)).unwrap();
            }
            (DeviceKind::Capacitor, _) | (_, DeviceSize::Cap { .. }) => {
                return Err(SpiceError::WrongKind(dev_names[i].clone()));
            }
            (_, DeviceSize::Mos { w, l }) => {
                let dop = d.doping.unwrap_or(Doping::N);
                let (bulk, model) = match dop {
                    Doping::N => (&vss, tech.model_name(Doping::N)),
                    Doping::P => (&vdd, tech.model_name(Doping::P)),
                };
                writeln!(
                    out,
                    "{} {} {} {} {} {} W={}u L={}u",
                    dev_names[i],
                    nodes[flat.net(i, DRAIN) as usize],
                    nodes[flat.net(i, GATE) as usize],
                    nodes[flat.net(i, SOURCE) as usize],
                    bulk,
                    model,
                    format_si(w),
                    format_si(l)
                )
                .unwrap();
            }
        }
    }
    writeln!(out, ".ENDS {name}").unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::BlockInstance;

    #[test]
    fn single_nmos_line() {
        let nt = BlockInstance::leaf("m", DeviceKind::NormalTransistor, Some(Doping::N));
        let flat = nt.flat();
        let sizing = SizingVector { devices: vec![Some(DeviceSize::Mos { w: 6.0, l: 3.0 })], currents: vec![0.0] };
        let text = export_spice("x", &flat, &TechnologyModel::default(), &sizing).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "MN1 drain gate source vss nmos W=6u L=3u");
    }

    #[test]
    fn capacitor_line() {
        let c = BlockInstance::leaf("c", DeviceKind::Capacitor, None);
        let flat = c.flat();
        let sizing = SizingVector { devices: vec![Some(DeviceSize::Cap { c: 100e-15 })], currents: vec![0.0] };
        let text = export_spice("x", &flat, &TechnologyModel::default(), &sizing).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "C1 plus minus 100f");
    }

    #[test]
    fn missing_size_names_device() {
        let nt = BlockInstance::leaf("m", DeviceKind::NormalTransistor, Some(Doping::P));
        let err = export_spice("x", &nt.flat(), &TechnologyModel::default(), &SizingVector::default()).unwrap_err();
        assert_eq!(err, SpiceError::MissingSize("MP1".into()));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_si(6.0), "6");
        assert_eq!(format_si(2.25), "2.25");
        assert_eq!(format_cap(20e-12), "20p");
    }
}
