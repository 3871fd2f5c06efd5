//! First-order performance model.
//!
//! Devices follow the square law with channel-length modulation:
//! `V_ov = sqrt(2 I L / (kp W))`, `gm = 2 I / V_ov`, `r_o = V_A L / I`.
//! Node voltages come from stacking gate-source drops out of the rails and
//! the inputs; small-signal quantities come from a nodal conductance solve
//! with capacitors open.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::circuit::{Circuit, Role};
use super::spec::{Environment, Feature};
use super::tech::TechnologyModel;
use crate::netlist::{DeviceSize, Doping, SizingVector, DRAIN, GATE, SOURCE};

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    /// Sum of W*L over all transistors, um^2.
    pub gate_area: f64,
    /// Quiescent power, W.
    pub power: f64,
    pub vcm_max: f64,
    pub vcm_min: f64,
    /// dB.
    pub cmrr: f64,
    /// Degrees.
    pub phase_margin: f64,
    /// Open-loop gain, dB.
    pub gain: f64,
    /// V/s.
    pub slew_rate: f64,
    /// Hz.
    pub gbw: f64,
    pub vout_max: f64,
    pub vout_min: f64,
}

impl PerformanceVector {
    /// Scalar value of a single-sided feature; ranges report their width.
    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::GateArea => self.gate_area,
            Feature::Power => self.power,
            Feature::PhaseMargin => self.phase_margin,
            Feature::Cmrr => self.cmrr,
            Feature::Cmir => self.vcm_max - self.vcm_min,
            Feature::Gain => self.gain,
            Feature::Gbw => self.gbw,
            Feature::SlewRate => self.slew_rate,
            Feature::OutputSwing => self.vout_max - self.vout_min,
        }
    }

    /// Components oriented so that larger is better for every bound.
    pub fn oriented(&self) -> [f64; 11] {
        [
            -self.gate_area,
            -self.power,
            self.vcm_max,
            -self.vcm_min,
            self.cmrr,
            self.phase_margin,
            self.gain,
            self.slew_rate,
            self.gbw,
            self.vout_max,
            -self.vout_min,
        ]
    }

    /// Whether `self` is at least as good as `other` in every component.
    pub fn dominates(&self, other: &PerformanceVector) -> bool {
        self.oriented().iter().zip(other.oriented()).all(|(a, b)| *a >= b)
    }

    pub fn is_finite(&self) -> bool {
        self.oriented().iter().all(|v| v.is_finite())
    }
}

/// Gain stage intermediates: transconductance and output resistance.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct StageGain {
    pub gm: f64,
    pub r_out: f64,
}

impl StageGain {
    pub fn gain(&self) -> f64 {
        self.gm * self.r_out
    }
}

/// Open-loop gain of a stage chain in dB: the product of `gm_i * R_out,i`.
pub fn chain_gain_db(stages: &[StageGain]) -> f64 {
    20.0 * stages.iter().map(StageGain::gain).product::<f64>().log10()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub perf: PerformanceVector,
    pub stages: Vec<StageGain>,
}

/// Sizing outside the model's validity; `violation` grows with the distance
/// to feasibility.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Infeasible {
    pub violation: f64,
    pub reason: String,
}

fn infeasible(violation: f64, reason: impl Into<String>) -> Infeasible {
    Infeasible { violation: violation.max(1e-12), reason: reason.into() }
}

/// Per-transistor small-signal and bias quantities.
#[derive(Clone, Copy, Debug, Default)]
struct Dev {
    vov: f64,
    vgs: f64,
    gm: f64,
    gds: f64,
    cgate: f64,
    cjunc: f64,
}

/// A node voltage affine in the input common-mode level, tagged with the
/// doping of the input transistor it was derived through.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Aff {
    c: f64,
    k: f64,
    tag: Option<Doping>,
}

impl Aff {
    fn at(&self, vcm: f64) -> f64 {
        self.c + self.k * vcm
    }

    fn shift(&self, dv: f64) -> Aff {
        Aff { c: self.c + dv, ..*self }
    }
}

fn device_table(c: &Circuit, s: &SizingVector, tech: &TechnologyModel) -> Result<Vec<Dev>, Infeasible> {
    let flat = &c.flat;
    if s.devices.len() != flat.devices.len() || s.currents.len() != flat.devices.len() {
        return Err(infeasible(1e6, "sizing vector does not match the netlist"));
    }
    let mut out = vec![Dev::default(); flat.devices.len()];
    for (i, d) in flat.transistors() {
        let Some(DeviceSize::Mos { w, l }) = s.devices[i] else {
            return Err(infeasible(1e6, format!("device {i} lacks W/L")));
        };
        let id = s.currents[i];
        if !(id > 0.0 && w > 0.0 && l > 0.0) {
            return Err(infeasible(1e6, format!("device {i} has no bias current")));
        }
        let p = tech.params(d.doping.unwrap_or(Doping::N));
        let vov = (2.0 * id * l / (p.kp * w)).sqrt();
        out[i] = Dev {
            vov,
            vgs: p.vth + vov,
            gm: 2.0 * id / vov,
            gds: id / (p.va_per_um * l),
            cgate: 2.0 / 3.0 * p.cox * w * l + p.cov * w,
            cjunc: p.cov * w,
        };
    }
    Ok(out)
}

/// Gate-area of a sizing in um^2.
pub fn gate_area(s: &SizingVector) -> f64 {
    s.devices
        .iter()
        .map(|d| match d {
            Some(DeviceSize::Mos { w, l }) => w * l,
            _ => 0.0,
        })
        .sum()
}

/// Quiescent power from device currents alone: current leaving the positive
/// rail, plus the reference current when it is drawn into an n bias diode.
pub fn supply_power(c: &Circuit, currents: &[f64], env: &Environment) -> f64 {
    let flat = &c.flat;
    let mut i_supply: f64 = flat
        .transistors()
        .filter(|(i, _)| flat.net(*i, SOURCE) == c.nets.vdd || flat.net(*i, DRAIN) == c.nets.vdd)
        .map(|(i, _)| currents[i])
        .sum();
    if c.plan.bias_doping() == Doping::N {
        i_supply += env.bias_current;
    }
    env.supply_voltage * i_supply
}

/// Saturation headroom of a transistor: drain-source voltage beyond the
/// overdrive, oriented for its doping.
fn headroom(doping: Option<Doping>, d: Aff, s: Aff, vov: f64) -> Aff {
    let sign = if doping == Some(Doping::P) { -1.0 } else { 1.0 };
    Aff { c: sign * (d.c - s.c) - vov, k: sign * (d.k - s.k), tag: d.tag.or(s.tag) }
}

struct OperatingPoint {
    v: Vec<Option<Aff>>,
}

/// Window of drain voltages that keeps every transistor draining into `net`
/// saturated, at input level `vcm`.
fn drain_window(c: &Circuit, devs: &[Dev], op: &OperatingPoint, net: u32, vcm: f64, vdd: f64) -> (f64, f64) {
    let flat = &c.flat;
    let (mut lo, mut hi) = (0.0f64, vdd);
    for (i, d) in flat.transistors() {
        if flat.net(i, DRAIN) != net || flat.net(i, GATE) == net {
            continue;
        }
        let Some(s) = op.v[flat.net(i, SOURCE) as usize] else { continue };
        let s = s.at(vcm);
        match d.doping {
            Some(Doping::P) => hi = hi.min(s - devs[i].vov),
            _ => lo = lo.max(s + devs[i].vov),
        }
    }
    (lo, hi)
}

/// Upper device of each self-cascode pair, indexed by the lower one: a
/// transistor sharing its gate with a device of the same doping stacked on its
/// drain. The lower device runs in triode; the pair conducts as one device
/// whose squared overdrive is the sum of both.
fn self_cascodes(c: &Circuit) -> Vec<Option<usize>> {
    let flat = &c.flat;
    let mut out = vec![None; flat.devices.len()];
    for (a, da) in flat.transistors() {
        let g = flat.net(a, GATE);
        if flat.net(a, DRAIN) == g {
            continue;
        }
        out[a] = flat.transistors().find_map(|(b, db)| {
            (b != a && flat.net(b, GATE) == g && db.doping == da.doping && flat.net(b, SOURCE) == flat.net(a, DRAIN)).then_some(b)
        });
    }
    out
}

/// Resolves node voltages by Vgs drops. Gates are inferred from sources only
/// through diode-connected devices; other gates (mirror or next-stage inputs)
/// are taken one at a time once nothing else resolves.
fn propagate(c: &Circuit, devs: &[Dev], pairs: &[Option<usize>], v: &mut [Option<Aff>]) {
    let flat = &c.flat;
    loop {
        let mut changed = false;
        let mut fallback = None;
        for (i, d) in flat.transistors() {
            let (g, s) = (flat.net(i, GATE) as usize, flat.net(i, SOURCE) as usize);
            let drop = if d.doping == Some(Doping::P) { -devs[i].vgs } else { devs[i].vgs };
            match (v[g], v[s]) {
                (Some(gv), None) => {
                    let mut sv = gv.shift(-drop);
                    if sv.k != 0.0 && sv.tag.is_none() {
                        sv.tag = d.doping;
                    }
                    v[s] = Some(sv);
                    changed = true;
                }
                (None, Some(sv)) if flat.net(i, DRAIN) as usize == g => {
                    v[g] = Some(sv.shift(drop));
                    changed = true;
                }
                (None, Some(sv)) if pairs[i].is_some_and(|b| flat.net(b, DRAIN) as usize == g) => {
                    let b = pairs[i].expect("checked");
                    let vov = (devs[i].vov.powi(2) + devs[b].vov.powi(2)).sqrt();
                    let vgs = devs[i].vgs - devs[i].vov + vov;
                    v[g] = Some(sv.shift(if d.doping == Some(Doping::P) { -vgs } else { vgs }));
                    changed = true;
                }
                (None, Some(sv)) => {
                    fallback.get_or_insert((g, sv.shift(drop)));
                }
                _ => {}
            }
        }
        if !changed {
            match fallback {
                Some((g, gv)) => v[g] = Some(gv),
                None => break,
            }
        }
    }
}

fn operating_point(c: &Circuit, devs: &[Dev], pairs: &[Option<usize>], env: &Environment) -> OperatingPoint {
    let flat = &c.flat;
    let vdd = env.supply_voltage;
    let vcm_nom = vdd / 2.0;
    let mut v: Vec<Option<Aff>> = vec![None; flat.net_count];
    let konst = |x: f64| Some(Aff { c: x, k: 0.0, tag: None });
    v[c.nets.vss as usize] = konst(0.0);
    v[c.nets.vdd as usize] = konst(vdd);
    for n in [c.nets.inp, c.nets.inn] {
        v[n as usize] = Some(Aff { c: 0.0, k: 1.0, tag: None });
    }
    if let Some(r) = c.nets.vref {
        v[r as usize] = konst(vcm_nom);
    }
    let mut op = OperatingPoint { v };
    loop {
        propagate(c, devs, pairs, &mut op.v);
        let next = flat.transistors().map(|(i, _)| flat.net(i, DRAIN)).filter(|&n| op.v[n as usize].is_none()).min();
        let Some(net) = next else { break };
        let (lo, hi) = drain_window(c, devs, &op, net, vcm_nom, vdd);
        op.v[net as usize] = konst(0.5 * (lo + hi));
    }
    for x in op.v.iter_mut().filter(|x| x.is_none()) {
        *x = konst(vcm_nom);
    }
    op
}

/// Dense nodal solver over the nets that are not held fixed.
struct Nodal {
    index: Vec<Option<usize>>,
    fixed: Vec<u32>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Coupling from each fixed net into the unknown rows.
    coupling: Vec<Vec<(usize, f64)>>,
}

const GMIN: f64 = 1e-12;

impl Nodal {
    fn new(c: &Circuit, devs: &[Dev], fixed: &[u32]) -> Option<Nodal> {
        let flat = &c.flat;
        let mut index = vec![None; flat.net_count];
        let mut n = 0;
        for net in 0..flat.net_count as u32 {
            if !fixed.contains(&net) {
                index[net as usize] = Some(n);
                n += 1;
            }
        }
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut coupling = vec![Vec::new(); fixed.len()];
        for k in 0..n {
            g[(k, k)] += GMIN;
        }
        for (i, _) in flat.transistors() {
            let (gn, dn, sn) = (flat.net(i, GATE), flat.net(i, DRAIN), flat.net(i, SOURCE));
            let dv = &devs[i];
            // current drain -> source: gm (vg - vs) + gds (vd - vs)
            let stamps = [(gn, dv.gm), (sn, -dv.gm - dv.gds), (dn, dv.gds)];
            for (row_net, sign) in [(dn, 1.0), (sn, -1.0)] {
                let Some(r) = index[row_net as usize] else { continue };
                for &(col_net, val) in &stamps {
                    match index[col_net as usize] {
                        Some(col) => g[(r, col)] += sign * val,
                        None => {
                            let f = fixed.iter().position(|&x| x == col_net).expect("fixed net");
                            coupling[f].push((r, sign * val));
                        }
                    }
                }
            }
        }
        let lu = g.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Nodal { index, fixed: fixed.to_vec(), lu, coupling })
    }

    /// Node voltages for fixed-net values and injected currents.
    fn solve(&self, values: &[(u32, f64)], inject: &[(u32, f64)]) -> Option<Vec<f64>> {
        let n = self.lu.l().nrows();
        let mut b = DVector::<f64>::zeros(n);
        for &(net, val) in values {
            let f = self.fixed.iter().position(|&x| x == net)?;
            for &(r, gv) in &self.coupling[f] {
                b[r] -= gv * val;
            }
        }
        for &(net, i) in inject {
            if let Some(r) = self.index[net as usize] {
                b[r] += i;
            }
        }
        let x = self.lu.solve(&b)?;
        let mut out = vec![0.0; self.index.len()];
        for (net, idx) in self.index.iter().enumerate() {
            if let Some(k) = idx {
                out[net] = x[*k];
            }
        }
        for &(net, val) in values {
            out[net as usize] = val;
        }
        if out.iter().all(|v| v.is_finite()) {
            Some(out)
        } else {
            None
        }
    }

    fn resistance(&self, out: u32, out_neg: Option<u32>) -> Option<f64> {
        match out_neg {
            None => self.solve(&[], &[(out, 1.0)]).map(|v| v[out as usize]),
            Some(m) => self.solve(&[], &[(out, 1.0), (m, -1.0)]).map(|v| 0.5 * (v[out as usize] - v[m as usize])),
        }
    }
}

fn node_capacitance(c: &Circuit, devs: &[Dev], net: u32) -> f64 {
    let flat = &c.flat;
    flat.transistors()
        .map(|(i, _)| {
            let d = &devs[i];
            let mut cap = 0.0;
            if flat.net(i, GATE) == net {
                cap += d.cgate;
            }
            if flat.net(i, DRAIN) == net {
                cap += d.cjunc;
            }
            if flat.net(i, SOURCE) == net {
                cap += d.cjunc;
            }
            cap
        })
        .sum()
}

fn role_current(c: &Circuit, s: &SizingVector, pred: impl Fn(Role) -> bool) -> Option<f64> {
    c.roles.iter().position(|r| pred(*r)).map(|i| s.currents[i])
}

/// Evaluates a sizing. Fails with [`Infeasible`] when a transistor leaves
/// saturation, the input or output range is empty, or the small-signal
/// network is singular.
pub fn evaluate(c: &Circuit, s: &SizingVector, tech: &TechnologyModel, env: &Environment) -> Result<Evaluation, Infeasible> {
    let flat = &c.flat;
    let devs = device_table(c, s, tech)?;
    let vdd = env.supply_voltage;
    let vcm_nom = vdd / 2.0;

    let pairs = self_cascodes(c);
    let op = operating_point(c, &devs, &pairs, env);
    let mut violation = 0.0;
    let mut ranges: Vec<(Option<Doping>, f64, f64)> = Vec::new();
    for (i, d) in flat.transistors().filter(|(i, _)| pairs[*i].is_none()) {
        let at = |t| op.v[flat.net(i, t) as usize].expect("all nets resolved");
        let h = headroom(d.doping, at(DRAIN), at(SOURCE), devs[i].vov);
        if h.k == 0.0 {
            if h.c < -1e-9 {
                violation += -h.c;
            }
        } else {
            let x = -h.c / h.k;
            let r = ranges.iter().position(|r| r.0 == h.tag).unwrap_or_else(|| {
                ranges.push((h.tag, 0.0, vdd));
                ranges.len() - 1
            });
            if h.k > 0.0 {
                ranges[r].1 = ranges[r].1.max(x);
            } else {
                ranges[r].2 = ranges[r].2.min(x);
            }
        }
    }
    let common = ranges.iter().find(|r| r.0.is_none()).map(|r| (r.1, r.2)).unwrap_or((0.0, vdd));
    let tagged: Vec<(f64, f64)> = ranges
        .iter()
        .filter(|r| r.0.is_some())
        .map(|r| (r.1.max(common.0), r.2.min(common.1)))
        .collect();
    let (vcm_min, vcm_max) = if tagged.is_empty() {
        common
    } else {
        let open: Vec<_> = tagged.iter().filter(|r| r.0 <= r.1).collect();
        if open.is_empty() {
            let gap = tagged.iter().map(|r| r.0 - r.1).fold(f64::INFINITY, f64::min);
            violation += gap;
            (0.0, 0.0)
        } else {
            (open.iter().map(|r| r.0).fold(f64::INFINITY, f64::min), open.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max))
        }
    };
    if vcm_min > vcm_max {
        violation += vcm_min - vcm_max;
    }
    let outs: Vec<u32> = std::iter::once(c.nets.outp).chain(c.nets.outn).collect();
    let mut vout = (0.0f64, vdd);
    for &o in &outs {
        let (lo, hi) = drain_window(c, &devs, &op, o, vcm_nom, vdd);
        vout = (vout.0.max(lo), vout.1.min(hi));
    }
    if vout.0 >= vout.1 {
        violation += vout.0 - vout.1 + 1e-6;
    }
    if violation > 0.0 {
        return Err(infeasible(violation, "operating point out of saturation"));
    }

    let mut held = vec![c.nets.vdd, c.nets.vss];
    held.extend(&c.stages[0].grounded);
    let base = Nodal::new(c, &devs, &held).ok_or_else(|| infeasible(1.0, "singular small-signal network"))?;
    let mut stages = Vec::with_capacity(c.stages.len());
    for (k, st) in c.stages.iter().enumerate() {
        let r = if k == 0 {
            base.resistance(st.out, st.out_neg)
        } else {
            let mut h = vec![c.nets.vdd, c.nets.vss];
            h.extend(&st.grounded);
            Nodal::new(c, &devs, &h).and_then(|n| n.resistance(st.out, st.out_neg))
        };
        let r = r.filter(|r| *r > 0.0 && r.is_finite()).ok_or_else(|| infeasible(1.0, "no output resistance"))?;
        let gm: f64 = st.input_devices.iter().map(|&i| devs[i].gm).sum();
        stages.push(StageGain { gm, r_out: r });
    }
    let a0 = stages.iter().map(StageGain::gain).product::<f64>();
    let gain = 20.0 * a0.log10();

    let ins: Vec<(u32, f64)> = vec![(c.nets.inp, 1.0), (c.nets.inn, 1.0)];
    let cm = base.solve(&ins, &[]).ok_or_else(|| infeasible(1.0, "singular small-signal network"))?;
    let a_cm = match c.nets.outn {
        None => cm[c.nets.outp as usize],
        Some(m) => 0.5 * (cm[c.nets.outp as usize] + cm[m as usize]),
    }
    .abs()
    .max(1e-12);
    let cmrr = gain - 20.0 * a_cm.log10();

    let c_out = env.load_capacitance + node_capacitance(c, &devs, c.nets.outp);
    let last = stages.last().expect("at least one stage");
    let cc = if c.miller {
        let caps: Vec<f64> = flat
            .devices
            .iter()
            .zip(&s.devices)
            .filter(|(d, _)| !d.is_transistor())
            .filter_map(|(_, sz)| match sz {
                Some(DeviceSize::Cap { c }) => Some(*c),
                _ => None,
            })
            .collect();
        Some(caps.first().copied().filter(|c| *c > 0.0).ok_or_else(|| infeasible(1e6, "compensation capacitor unsized"))?)
    } else {
        None
    };
    let gbw = match cc {
        Some(cc) => stages[0].gm / (2.0 * PI * cc),
        None => a0 / (2.0 * PI * last.r_out * c_out),
    };
    let wu = 2.0 * PI * gbw;

    let diff = base.solve(&[(c.nets.inp, 0.5), (c.nets.inn, -0.5)], &[]).ok_or_else(|| infeasible(1.0, "singular small-signal network"))?;
    let mut excluded: Vec<u32> = held.clone();
    excluded.extend(&outs);
    if c.miller {
        excluded.push(c.stages[0].out);
        excluded.extend(c.stages[0].out_neg);
    }
    let mut phase = 90.0;
    for net in 0..flat.net_count as u32 {
        if excluded.contains(&net) || diff[net as usize].abs() <= 1e-3 {
            continue;
        }
        let Some(r) = base.solve(&[], &[(net, 1.0)]).map(|v| v[net as usize]) else { continue };
        let cn = node_capacitance(c, &devs, net);
        if r > 0.0 && cn > 0.0 {
            phase -= (wu * r * cn).atan().to_degrees();
        }
    }
    if let Some(cc) = cc {
        let gm2 = stages[1].gm;
        phase -= (wu * c_out / gm2).atan().to_degrees();
        phase -= (wu * cc / gm2).atan().to_degrees();
    }

    let tail = role_current(c, s, |r| r == Role::Tail).unwrap_or(0.0);
    let slew_first = match role_current(c, s, |r| r == Role::Fold) {
        Some(f) => tail.min(2.0 * f),
        None => tail,
    };
    let second = role_current(c, s, |r| r == Role::Second).unwrap_or(0.0);
    let slew_rate = match (cc, c.stages.len()) {
        (Some(cc), _) => (slew_first / cc).min(second / (cc + c_out)),
        (None, 2) => 2.0 * second / c_out,
        _ => slew_first / c_out,
    };

    let perf = PerformanceVector {
        gate_area: gate_area(s),
        power: supply_power(c, &s.currents, env),
        vcm_max,
        vcm_min,
        cmrr,
        phase_margin: phase,
        gain,
        slew_rate,
        gbw,
        vout_max: vout.1,
        vout_min: vout.0,
    };
    if !perf.is_finite() {
        return Err(infeasible(1.0, "non-finite performance"));
    }
    Ok(Evaluation { perf, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stage_sixty_db() {
        let s = [StageGain { gm: 1e-3, r_out: 1e6 }];
        assert!((chain_gain_db(&s) - 60.0).abs() < 1e-12);
    }

    #[test]
    fn two_stages_multiply() {
        let s = [StageGain { gm: 1e-3, r_out: 1e6 }; 2];
        assert!((chain_gain_db(&s) - 120.0).abs() < 1e-12);
    }

    #[test]
    fn dominance_orientation() {
        let a = PerformanceVector { gain: 80.0, gate_area: 10.0, ..Default::default() };
        let mut b = a;
        b.gate_area = 20.0;
        assert!(a.dominates(&b) && !b.dominates(&a));
    }
}
