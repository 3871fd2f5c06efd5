//! Budgeted sizing.
//!
//! A seeded multi-start coordinate search explores a normalized design space
//! (branch currents, compensation capacitance, per-group length and
//! overdrive) under a family of fixed scalarized objectives. The search never
//! looks at the spec bounds: every evaluated point that survives Pareto
//! filtering is kept, and the spec gate then selects among them. Acceptance is
//! therefore monotone in every bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::circuit::{Branches, Circuit, Role};
use super::model::{evaluate, supply_power, PerformanceVector};
use super::spec::{check_spec, Environment, Feature, SpecCheck, SpecSet};
use super::tech::TechnologyModel;
use crate::netlist::{DeviceSize, SizingVector};

/// Default evaluation budget per topology.
pub const DEFAULT_BUDGET: usize = 600;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Branch {
    Tail,
    Fold,
    Second,
    Cmfb,
}

impl Branch {
    /// Range as multiples of the reference current.
    fn range(self) -> (f64, f64) {
        match self {
            Branch::Tail => (1.0, 64.0),
            Branch::Fold => (0.5, 64.0),
            Branch::Second => (1.0, 256.0),
            Branch::Cmfb => (0.5, 16.0),
        }
    }
}

const CAP_RANGE: (f64, f64) = (0.2e-12, 20e-12);

fn log_map(u: f64, (lo, hi): (f64, f64)) -> f64 {
    lo * (hi / lo).powf(u.clamp(0.0, 1.0))
}

/// Normalized coordinates of a topology's sizing.
#[derive(Clone, Debug)]
pub struct DesignSpace {
    branches: Vec<Branch>,
    caps: bool,
    groups: usize,
}

impl DesignSpace {
    pub fn new(c: &Circuit) -> DesignSpace {
        let mut branches = vec![Branch::Tail];
        if c.has_role(|r| matches!(r, Role::Fold | Role::FoldPlusHalf)) {
            branches.push(Branch::Fold);
        }
        if c.has_role(|r| r == Role::Second) {
            branches.push(Branch::Second);
        }
        if c.has_role(|r| matches!(r, Role::Cmfb | Role::CmfbHalf)) {
            branches.push(Branch::Cmfb);
        }
        DesignSpace { branches, caps: !c.cap_groups.is_empty(), groups: c.groups.len() }
    }

    pub fn dims(&self) -> usize {
        self.branches.len() + usize::from(self.caps) + 2 * self.groups
    }

    fn branch_currents(&self, x: &[f64], env: &Environment) -> Branches {
        let mut b = Branches { reference: env.bias_current, ..Branches::default() };
        for (k, br) in self.branches.iter().enumerate() {
            let v = env.bias_current * log_map(x[k], br.range());
            match br {
                Branch::Tail => b.tail = v,
                Branch::Fold => b.fold = v,
                Branch::Second => b.second = v,
                Branch::Cmfb => b.cmfb = v,
            }
        }
        b
    }

    /// Branch currents at the low end of every range.
    pub fn minimum_branches(&self, env: &Environment) -> Branches {
        self.branch_currents(&vec![0.0; self.dims()], env)
    }

    /// Maps coordinates to a sizing inside the W/L box. Lengths and
    /// overdrives are confined to the sub-ranges where every group member
    /// fits the box; `Err` carries the box violation when none exists.
    pub fn realize(&self, c: &Circuit, x: &[f64], tech: &TechnologyModel, env: &Environment) -> Result<SizingVector, f64> {
        let b = self.branch_currents(x, env);
        let currents = c.currents(&b);
        let mut devices = vec![None; c.flat.devices.len()];
        let mut at = self.branches.len();
        if self.caps {
            let cap = log_map(x[at], CAP_RANGE);
            at += 1;
            for g in &c.cap_groups {
                for &i in g {
                    devices[i] = Some(DeviceSize::Cap { c: cap });
                }
            }
        }
        let mut violation = 0.0;
        for (k, g) in c.groups.iter().enumerate() {
            let (ul, uv) = (x[at + 2 * k], x[at + 2 * k + 1]);
            let p = tech.params(c.flat.devices[g[0]].doping.unwrap_or(crate::Doping::N));
            let i_min = g.iter().map(|&i| currents[i]).fold(f64::INFINITY, f64::min);
            let i_max = g.iter().map(|&i| currents[i]).fold(0.0, f64::max);
            let l_cap = p.kp * tech.w_max * tech.vov_max.powi(2) / (2.0 * i_max);
            let l = log_map(ul, (tech.l_min, tech.l_max.min(l_cap).max(tech.l_min)));
            let v_lo = tech.vov_min.max((2.0 * i_max * l / (p.kp * tech.w_max)).sqrt());
            let v_hi = tech.vov_max.min((2.0 * i_min * l / (p.kp * tech.w_min)).sqrt());
            if v_lo > v_hi * (1.0 + 1e-12) {
                violation += (v_lo / v_hi).ln();
                continue;
            }
            let vov = log_map(uv, (v_lo, v_hi.max(v_lo)));
            for &i in g {
                let w = (2.0 * currents[i] * l / (p.kp * vov * vov)).clamp(tech.w_min, tech.w_max);
                devices[i] = Some(DeviceSize::Mos { w, l });
            }
        }
        if violation > 0.0 {
            return Err(violation);
        }
        Ok(SizingVector { devices, currents })
    }
}

/// Lowest gate-area and power any sizing in the box can reach.
pub fn lower_bounds(c: &Circuit, tech: &TechnologyModel, env: &Environment) -> (f64, f64) {
    let area = c.transistor_count() as f64 * tech.w_min * tech.l_min;
    let b = DesignSpace::new(c).minimum_branches(env);
    (area, supply_power(c, &c.currents(&b), env))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    /// Position in the evaluation sequence.
    pub index: usize,
    #[serde(skip)]
    pub x: Vec<f64>,
    pub perf: PerformanceVector,
}

/// Spec-independent record of a search.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Exploration {
    /// Non-dominated feasible points in evaluation order.
    pub candidates: Vec<Candidate>,
    pub evaluations: usize,
    /// Some local descent reached its final step size within the budget.
    pub converged: bool,
    pub first_feasible: Option<usize>,
}

fn objective(p: &PerformanceVector, w: &[f64; 9]) -> f64 {
    let phi = [
        p.gain / 20.0,
        p.gbw.max(1.0).log10(),
        p.slew_rate.max(1.0).log10(),
        p.phase_margin / 30.0,
        -p.gate_area.max(1e-3).log10(),
        -p.power.max(1e-12).log10(),
        p.vout_max - p.vout_min,
        p.vcm_max - p.vcm_min,
        p.cmrr / 20.0,
    ];
    phi.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn seed_for(c: &Circuit, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in c.id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn pareto(points: Vec<Candidate>) -> Vec<Candidate> {
    let mut keep: Vec<Candidate> = Vec::new();
    for p in points {
        if keep.iter().any(|k| k.perf.dominates(&p.perf)) {
            continue;
        }
        keep.retain(|k| !p.perf.dominates(&k.perf));
        keep.push(p);
    }
    keep.sort_by_key(|k| k.index);
    keep
}

struct Search<'a> {
    c: &'a Circuit,
    space: &'a DesignSpace,
    tech: &'a TechnologyModel,
    env: &'a Environment,
    budget: usize,
    used: usize,
    found: Vec<Candidate>,
    first_feasible: Option<usize>,
}

impl Search<'_> {
    fn score(&mut self, x: &[f64], w: &[f64; 9]) -> Option<f64> {
        if self.used >= self.budget {
            return None;
        }
        let index = self.used;
        self.used += 1;
        let s = match self.space.realize(self.c, x, self.tech, self.env) {
            Ok(s) => s,
            Err(v) => return Some(-2e6 - v),
        };
        match evaluate(self.c, &s, self.tech, self.env) {
            Ok(e) => {
                self.first_feasible.get_or_insert(index);
                let f = objective(&e.perf, w);
                self.found.push(Candidate { index, x: x.to_vec(), perf: e.perf });
                Some(f)
            }
            Err(inf) => Some(-1e6 - inf.violation),
        }
    }

    /// Coordinate search from `x`; returns whether the step size converged.
    fn descend(&mut self, mut x: Vec<f64>, w: &[f64; 9], limit: usize) -> bool {
        let stop = (self.used + limit).min(self.budget);
        let Some(mut best) = self.score(&x, w) else { return false };
        let mut h = 0.25;
        while h >= 1.0 / 64.0 {
            let mut improved = false;
            for j in 0..x.len() {
                for dir in [1.0, -1.0] {
                    if self.used >= stop {
                        return false;
                    }
                    let mut y = x.clone();
                    y[j] = (y[j] + dir * h).clamp(0.0, 1.0);
                    if y[j] == x[j] {
                        continue;
                    }
                    let Some(f) = self.score(&y, w) else { return false };
                    if f > best {
                        best = f;
                        x = y;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                h /= 2.0;
            }
        }
        true
    }
}

/// Runs the seeded search. The result depends only on the circuit,
/// technology, environment, budget and seed.
pub fn explore(c: &Circuit, tech: &TechnologyModel, env: &Environment, budget: usize, seed: u64) -> Exploration {
    let space = DesignSpace::new(c);
    let dims = space.dims();
    let per_start = (20 * dims).clamp(100, 600);
    let starts = budget.div_ceil(per_start).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(c, seed));
    let mut search = Search { c, space: &space, tech, env, budget, used: 0, found: Vec::new(), first_feasible: None };
    let mut converged = false;
    for k in 0..starts {
        let (x, w) = if k == 0 {
            (vec![0.5; dims], [1.0; 9])
        } else {
            let x: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
            let mut w = [0.0; 9];
            for v in &mut w {
                *v = -(1.0 - rng.gen::<f64>()).ln() * 9.0;
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v *= 9.0 / total);
            (x, w)
        };
        if search.used >= budget {
            break;
        }
        converged |= search.descend(x, &w, per_start);
    }
    Exploration {
        candidates: pareto(std::mem::take(&mut search.found)),
        evaluations: search.used,
        converged,
        first_feasible: search.first_feasible,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Status {
    FailStart,
    FailEnd,
    PassAll,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizingOutcome {
    pub status: Status,
    pub sizing: Option<SizingVector>,
    pub perf: Option<PerformanceVector>,
    pub check: Option<SpecCheck>,
    pub evaluations_used: usize,
    /// Evaluation index of the earliest retained passing point.
    pub first_pass: Option<usize>,
}

impl SizingOutcome {
    fn bare(status: Status, evaluations_used: usize) -> SizingOutcome {
        SizingOutcome { status, sizing: None, perf: None, check: None, evaluations_used, first_pass: None }
    }
}

/// Start-feature bounds no sizing can meet, judged from closed-form extrema.
pub fn early_abort(c: &Circuit, spec: &SpecSet, tech: &TechnologyModel) -> bool {
    let (area, power) = lower_bounds(c, tech, &spec.env);
    let probe = PerformanceVector { gate_area: area, power, ..PerformanceVector::default() };
    let check = check_spec(&probe, spec);
    [Feature::GateArea, Feature::Power].iter().any(|f| check.features.get(f).is_some_and(|(ok, _)| !ok))
}

/// Applies the spec gate to an exploration: phase one needs a point meeting
/// every start bound, phase two one meeting all bounds, and the final pick
/// maximizes the smallest normalized margin.
pub fn select(c: &Circuit, spec: &SpecSet, tech: &TechnologyModel, exp: &Exploration) -> SizingOutcome {
    if early_abort(c, spec, tech) {
        return SizingOutcome::bare(Status::FailStart, 0);
    }
    let checks: Vec<SpecCheck> = exp.candidates.iter().map(|k| check_spec(&k.perf, spec)).collect();
    let by = |idx: usize| -> SizingOutcome {
        let k = &exp.candidates[idx];
        let sizing = DesignSpace::new(c).realize(c, &k.x, tech, &spec.env).ok();
        SizingOutcome {
            status: Status::PassAll,
            sizing,
            perf: Some(k.perf),
            check: Some(checks[idx].clone()),
            evaluations_used: exp.evaluations,
            first_pass: None,
        }
    };
    let argmin = |keys: Vec<(usize, f64)>| keys.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))).map(|(i, _)| i);
    let start_ok: Vec<usize> = (0..checks.len()).filter(|&i| checks[i].pass_start()).collect();
    if start_ok.is_empty() {
        let mut out = match argmin((0..checks.len()).map(|i| (i, checks[i].violation(true))).collect()) {
            Some(i) => by(i),
            None => SizingOutcome::bare(Status::FailStart, exp.evaluations),
        };
        out.status = Status::FailStart;
        return out;
    }
    let passing: Vec<usize> = start_ok.iter().copied().filter(|&i| checks[i].pass).collect();
    if passing.is_empty() {
        let i = argmin(start_ok.iter().map(|&i| (i, checks[i].violation(false))).collect()).expect("nonempty");
        let mut out = by(i);
        out.status = if exp.converged { Status::FailEnd } else { Status::BudgetExhausted };
        return out;
    }
    let best = argmin(passing.iter().map(|&i| (i, -checks[i].min_margin())).collect()).expect("nonempty");
    let mut out = by(best);
    out.first_pass = passing.iter().map(|&i| exp.candidates[i].index).min();
    out
}

/// Sizes a topology against a spec.
pub fn size(c: &Circuit, spec: &SpecSet, tech: &TechnologyModel, budget: usize, seed: u64) -> SizingOutcome {
    if early_abort(c, spec, tech) {
        return SizingOutcome::bare(Status::FailStart, 0);
    }
    let exp = explore(c, tech, &spec.env, budget, seed);
    select(c, spec, tech, &exp)
}
