//! Generic functional-block synthesis: enumerate tuples over implementation
//! sets, apply characteristic connections, check rules, and expand with
//! additional connections.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use itertools::Itertools;
use thiserror::Error;

use crate::library::{BlockType, Impls};
use crate::netlist::{mirrored_digest, BlockInstance, Doping, FlatNetlist, NetlistError, PinRef, DRAIN};

/// One pin of one tuple member, or a disjunction of pins tried in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selector {
    pub set: usize,
    pub pins: Vec<&'static str>,
}

impl Selector {
    pub fn pin(set: usize, pin: &'static str) -> Selector {
        Selector { set, pins: vec![pin] }
    }

    pub fn any(set: usize, pins: &[&'static str]) -> Selector {
        Selector { set, pins: pins.to_vec() }
    }

    /// Pin references for every disjunct the member actually carries.
    fn resolve(&self, tuple: &[Arc<BlockInstance>]) -> Vec<PinRef> {
        let Some(inst) = tuple.get(self.set) else { return Vec::new() };
        self.pins.iter().filter(|p| inst.has_pin(p)).map(|p| PinRef::child(self.set, p)).collect()
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alts: Vec<String> = self.pins.iter().map(|p| format!("s{}.{}", self.set + 1, p)).collect();
        write!(f, "{}", alts.join(" | "))
    }
}

pub type GuardFn = Arc<dyn Fn(&[Arc<BlockInstance>]) -> bool + Send + Sync>;

/// Predicate over a tuple, evaluated before any connection is made.
#[derive(Clone)]
pub enum Guard {
    SameTransistorCount(usize, usize),
    TransistorCount(usize, usize),
    Identical(usize, usize),
    Distinct(usize, usize),
    /// Same structure, opposite doping.
    Sym(usize, usize),
    Custom(&'static str, GuardFn),
}

impl Guard {
    pub fn custom(name: &'static str, f: impl Fn(&[Arc<BlockInstance>]) -> bool + Send + Sync + 'static) -> Guard {
        Guard::Custom(name, Arc::new(f))
    }

    pub fn holds(&self, t: &[Arc<BlockInstance>]) -> bool {
        match self {
            Guard::SameTransistorCount(a, b) => t[*a].n_t() == t[*b].n_t(),
            Guard::TransistorCount(a, n) => t[*a].n_t() == *n,
            Guard::Identical(a, b) => identical(&t[*a], &t[*b]),
            Guard::Distinct(a, b) => !identical(&t[*a], &t[*b]),
            Guard::Sym(a, b) => {
                t[*a].block_type == t[*b].block_type
                    && t[*a].doping.is_some()
                    && t[*a].doping.map(Doping::complement) == t[*b].doping
                    && mirrored_digest(&t[*a].flat()) == t[*b].digest()
            }
            Guard::Custom(_, f) => f(t),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Guard::SameTransistorCount(a, b) => format!("n_T(s{}) = n_T(s{})", a + 1, b + 1),
            Guard::TransistorCount(a, n) => format!("n_T(s{}) = {}", a + 1, n),
            Guard::Identical(a, b) => format!("s{} = s{}", a + 1, b + 1),
            Guard::Distinct(a, b) => format!("s{} != s{}", a + 1, b + 1),
            Guard::Sym(a, b) => format!("sym(s{}, s{})", a + 1, b + 1),
            Guard::Custom(n, _) => (*n).to_string(),
        }
    }
}

impl fmt::Debug for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn identical(a: &BlockInstance, b: &BlockInstance) -> bool {
    a.block_type == b.block_type && a.doping == b.doping && a.digest() == b.digest()
}

pub fn apply_guards(tuple: &[Arc<BlockInstance>], guards: &[Guard]) -> bool {
    guards.iter().all(|g| g.holds(tuple))
}

/// `left <-> right`, applied only when `when` holds for the tuple.
#[derive(Clone, Debug)]
pub struct ConnectionSpec {
    pub left: Selector,
    pub right: Selector,
    pub when: Option<Guard>,
}

impl ConnectionSpec {
    pub fn new(left: Selector, right: Selector) -> ConnectionSpec {
        ConnectionSpec { left, right, when: None }
    }

    pub fn when(mut self, g: Guard) -> ConnectionSpec {
        self.when = Some(g);
        self
    }
}

/// Candidate under rule evaluation.
pub struct Candidate<'a> {
    pub instance: &'a BlockInstance,
    pub flat: &'a FlatNetlist,
}

impl Candidate<'_> {
    /// Nets of every existing disjunct of the selector.
    pub fn nets(&self, s: &Selector) -> Vec<u32> {
        s.resolve(&self.instance.children)
            .iter()
            .filter_map(|r| self.instance.resolve(r).ok())
            .map(|t| self.flat.terminal_net[t])
            .collect()
    }

    pub fn connected(&self, a: &Selector, b: &Selector) -> bool {
        let nb = self.nets(b);
        self.nets(a).iter().any(|n| nb.contains(n))
    }

    pub fn driven(&self, a: &Selector) -> bool {
        self.nets(a).iter().any(|&n| self.flat.has_drain(n))
    }
}

pub type ExprFn = Arc<dyn Fn(&Candidate) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum Expr {
    Connected(Selector, Selector),
    /// Some transistor drain sits on the pin's net.
    Driven(Selector),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Custom(&'static str, ExprFn),
}

impl Expr {
    pub fn connected(a: Selector, b: Selector) -> Expr {
        Expr::Connected(a, b)
    }

    pub fn or(v: Vec<Expr>) -> Expr {
        Expr::Or(v)
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn custom(name: &'static str, f: impl Fn(&Candidate) -> bool + Send + Sync + 'static) -> Expr {
        Expr::Custom(name, Arc::new(f))
    }

    pub fn eval(&self, c: &Candidate) -> bool {
        match self {
            Expr::Connected(a, b) => c.connected(a, b),
            Expr::Driven(a) => c.driven(a),
            Expr::Not(e) => !e.eval(c),
            Expr::And(v) => v.iter().all(|e| e.eval(c)),
            Expr::Or(v) => v.iter().any(|e| e.eval(c)),
            Expr::Custom(_, f) => f(c),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum RuleKind {
    RequiredConnection,
    ForbiddenConnection,
    BasicStructural,
}

#[derive(Clone)]
pub struct Rule {
    pub kind: RuleKind,
    pub name: String,
    pub expr: Expr,
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({})", self.kind, self.name)
    }
}

impl Rule {
    pub fn required(name: &str, expr: Expr) -> Rule {
        Rule { kind: RuleKind::RequiredConnection, name: name.to_string(), expr }
    }

    pub fn forbidden(name: &str, expr: Expr) -> Rule {
        Rule { kind: RuleKind::ForbiddenConnection, name: name.to_string(), expr }
    }

    pub fn structural(name: &str, expr: Expr) -> Rule {
        Rule { kind: RuleKind::BasicStructural, name: name.to_string(), expr }
    }

    fn satisfied(&self, c: &Candidate) -> bool {
        match self.kind {
            RuleKind::RequiredConnection | RuleKind::BasicStructural => self.expr.eval(c),
            RuleKind::ForbiddenConnection => !self.expr.eval(c),
        }
    }
}

pub const DRAIN_RULE: &str = "no drain-drain connection between same-doping transistors";

/// First pair of same-doping transistors sharing a drain net. Drains of the
/// two differential pairs inside a CMFB transconductance are cross-coupled by
/// construction and exempt.
pub fn drain_conflict(flat: &FlatNetlist) -> Option<(usize, usize)> {
    let mut seen: Vec<(u32, Option<Doping>, usize)> = Vec::new();
    for (i, d) in flat.transistors() {
        let net = flat.net(i, DRAIN);
        for &(n, dop, j) in &seen {
            if n == net && dop == d.doping {
                let exempt = d.within(BlockType::TcCmfb) && flat.devices[j].within(BlockType::TcCmfb);
                if !exempt {
                    return Some((j, i));
                }
            }
        }
        seen.push((net, d.doping, i));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleViolation {
    pub rule: String,
}

/// Checks the drain rule and every rule in order; reports the first failure.
pub fn fulfilles_rules(candidate: &BlockInstance, rules: &[Rule]) -> Result<(), RuleViolation> {
    let flat = candidate.flatten().map_err(|e| RuleViolation { rule: e.to_string() })?;
    if drain_conflict(&flat).is_some() {
        return Err(RuleViolation { rule: DRAIN_RULE.to_string() });
    }
    let c = Candidate { instance: candidate, flat: &flat };
    for r in rules {
        if !r.satisfied(&c) {
            return Err(RuleViolation { rule: r.name.clone() });
        }
    }
    Ok(())
}

/// How the additional-connection sets extend a candidate.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RaMode {
    /// Each set extends the previously extended candidate.
    Cumulative,
    /// Each set extends the base candidate on its own.
    Independent,
}

#[derive(Clone)]
pub struct ComposerTask {
    pub result_type: BlockType,
    pub doping: Option<Doping>,
    pub sets: Vec<Impls>,
    pub guards: Vec<Guard>,
    pub characteristic: Vec<ConnectionSpec>,
    pub rules: Vec<Rule>,
    pub additional: Vec<Vec<ConnectionSpec>>,
    pub ra_mode: RaMode,
    pub pins: Vec<(String, Selector)>,
}

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("task for {0} has no implementation sets")]
    NoSets(BlockType),
    #[error("task for {task}: set {set} is empty")]
    EmptySet { task: BlockType, set: usize },
    #[error("task for {task}: selector `{selector}` resolves to no pin of `{instance}`")]
    Unresolvable { task: BlockType, selector: String, instance: String },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

impl ComposerTask {
    pub fn new(result_type: BlockType, doping: Option<Doping>, sets: Vec<Impls>) -> ComposerTask {
        ComposerTask {
            result_type,
            doping,
            sets,
            guards: Vec::new(),
            characteristic: Vec::new(),
            rules: Vec::new(),
            additional: Vec::new(),
            ra_mode: RaMode::Cumulative,
            pins: Vec::new(),
        }
    }

    pub fn guards(mut self, g: Vec<Guard>) -> Self {
        self.guards = g;
        self
    }

    pub fn characteristic(mut self, c: Vec<ConnectionSpec>) -> Self {
        self.characteristic = c;
        self
    }

    pub fn rules(mut self, r: Vec<Rule>) -> Self {
        self.rules = r;
        self
    }

    pub fn additional(mut self, a: Vec<Vec<ConnectionSpec>>, mode: RaMode) -> Self {
        self.additional = a;
        self.ra_mode = mode;
        self
    }

    pub fn pins(mut self, p: &[(&str, Selector)]) -> Self {
        self.pins = p.iter().map(|(n, s)| (n.to_string(), s.clone())).collect();
        self
    }

    pub fn pin(mut self, name: &str, s: Selector) -> Self {
        self.pins.push((name.to_string(), s));
        self
    }

    fn instance_name(&self) -> String {
        match self.doping {
            Some(d) => format!("{}_{}", self.result_type, d),
            None => self.result_type.to_string(),
        }
    }

    /// Alternative connection lists for `specs` on this tuple.
    fn expand(&self, specs: &[ConnectionSpec], tuple: &[Arc<BlockInstance>]) -> Result<Vec<Vec<(PinRef, PinRef)>>, ComposeError> {
        let mut options: Vec<Vec<(PinRef, PinRef)>> = Vec::new();
        for spec in specs {
            if let Some(w) = &spec.when {
                if !w.holds(tuple) {
                    continue;
                }
            }
            let l = self.resolve_side(&spec.left, tuple)?;
            let r = self.resolve_side(&spec.right, tuple)?;
            options.push(l.into_iter().cartesian_product(r).collect());
        }
        if options.is_empty() {
            return Ok(vec![Vec::new()]);
        }
        Ok(options.into_iter().multi_cartesian_product().collect())
    }

    fn resolve_side(&self, s: &Selector, tuple: &[Arc<BlockInstance>]) -> Result<Vec<PinRef>, ComposeError> {
        let refs = s.resolve(tuple);
        if refs.is_empty() {
            return Err(ComposeError::Unresolvable {
                task: self.result_type,
                selector: s.to_string(),
                instance: tuple.get(s.set).map(|i| i.name.clone()).unwrap_or_default(),
            });
        }
        Ok(refs)
    }

    fn pin_map(&self, tuple: &[Arc<BlockInstance>]) -> Result<IndexMap<String, PinRef>, ComposeError> {
        let optional = self.result_type.optional_pins();
        let mut map = IndexMap::new();
        for (name, sel) in &self.pins {
            match sel.resolve(tuple).into_iter().next() {
                Some(r) => {
                    map.insert(name.clone(), r);
                }
                None if optional.contains(&name.as_str()) => {}
                None => {
                    return Err(ComposeError::Unresolvable {
                        task: self.result_type,
                        selector: sel.to_string(),
                        instance: tuple.get(sel.set).map(|i| i.name.clone()).unwrap_or_default(),
                    })
                }
            }
        }
        Ok(map)
    }

    fn build(
        &self,
        tuple: &[Arc<BlockInstance>],
        connections: Vec<(PinRef, PinRef)>,
        pins: &IndexMap<String, PinRef>,
    ) -> BlockInstance {
        BlockInstance::composite(self.instance_name(), self.result_type, self.doping, tuple.to_vec(), connections, pins.clone())
    }
}

/// Runs a task and returns its implementations in digest order.
pub fn compose(task: &ComposerTask) -> Result<Vec<Arc<BlockInstance>>, ComposeError> {
    let mut out = IndexMap::new();
    compose_into(task, |inst| {
        out.entry(inst.digest()).or_insert_with(|| Arc::new(inst));
    })?;
    let mut v: Vec<_> = out.into_iter().collect();
    v.sort_by_key(|a| a.0);
    Ok(v.into_iter().map(|(_, i)| i).collect())
}

/// Streams every rule-passing candidate (before deduplication).
pub fn compose_into(task: &ComposerTask, mut emit: impl FnMut(BlockInstance)) -> Result<(), ComposeError> {
    if task.sets.is_empty() {
        return Err(ComposeError::NoSets(task.result_type));
    }
    if let Some(set) = task.sets.iter().position(|s| s.is_empty()) {
        return Err(ComposeError::EmptySet { task: task.result_type, set });
    }
    let ranges = task.sets.iter().map(|s| 0..s.len());
    for idx in ranges.multi_cartesian_product() {
        let tuple: Vec<Arc<BlockInstance>> = idx.iter().enumerate().map(|(j, &k)| task.sets[j][k].clone()).collect();
        if !apply_guards(&tuple, &task.guards) {
            continue;
        }
        let pins = task.pin_map(&tuple)?;
        for base in task.expand(&task.characteristic, &tuple)? {
            let mut try_emit = |conns: Vec<(PinRef, PinRef)>| -> Result<(), ComposeError> {
                let cand = task.build(&tuple, conns, &pins);
                for (a, b) in &cand.connections {
                    cand.resolve(a)?;
                    cand.resolve(b)?;
                }
                if fulfilles_rules(&cand, &task.rules).is_ok() {
                    emit(cand);
                }
                Ok(())
            };
            try_emit(base.clone())?;
            let mut current = base.clone();
            for ra in &task.additional {
                let extra = task.expand(ra, &tuple)?;
                for e in extra {
                    let mut conns = match task.ra_mode {
                        RaMode::Cumulative => current.clone(),
                        RaMode::Independent => base.clone(),
                    };
                    conns.extend(e);
                    try_emit(conns.clone())?;
                    if task.ra_mode == RaMode::Cumulative {
                        current = conns;
                    }
                }
            }
        }
    }
    Ok(())
}
