//! Synthesis runs: enumerate cores in transistor-count order, size them,
//! prune two-stage variants of cores that miss a start bound, and emit
//! netlists and reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::library::BlockType;
use crate::netlist::{export_spice, CanonicalDigest};
use crate::rules::{enumerate_topologies, OpAmpKind, OpAmpType, RuleLibrary, RulesError, Topology, Variant};
use crate::sizing::circuit::Circuit;
use crate::sizing::optimizer::{early_abort, explore, select, Exploration, SizingOutcome, Status};
use crate::sizing::{PerformanceVector, SpecSet, TechnologyModel};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stop at the first accepted topology in enumeration order.
    First,
    All,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::First => "first",
            Mode::All => "all",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    /// Evaluations per topology.
    pub budget: usize,
    /// Worker threads; zero uses one per core.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { mode: Mode::All, budget: crate::sizing::optimizer::DEFAULT_BUDGET, jobs: 0, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("budget must be positive")]
    Budget,
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("preparing topologies: {0}")]
    Prepare(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("netlist export: {0}")]
    Spice(#[from] crate::netlist::SpiceError),
    #[error("summary serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// A topology ready for sizing.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub topology: Arc<Topology>,
    pub circuit: Arc<Circuit>,
}

impl Prepared {
    pub fn stages(&self) -> u8 {
        if self.topology.op_type.variant == Variant::TwoStage {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Created {
    pub id: String,
    pub digest: CanonicalDigest,
    pub op_type: String,
    pub first_stage: BlockType,
    pub stages: u8,
    pub transistors: usize,
    pub parent: Option<CanonicalDigest>,
    pub outcome: SizingOutcome,
    #[serde(skip)]
    pub prepared: Prepared,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunStats {
    pub created: usize,
    pub pruned_onestage: usize,
    pub accepted: usize,
    pub evaluations: usize,
    #[serde(skip)]
    pub wall: Duration,
}

#[derive(Clone, Debug)]
pub struct SynthesisRun {
    pub spec: SpecSet,
    pub config: RunConfig,
    /// Sized topologies in enumeration order.
    pub created: Vec<Created>,
    pub pruned_onestage: Vec<String>,
    pub accepted: Vec<String>,
    pub stats: RunStats,
}

type CacheKey = (CanonicalDigest, [u64; 3], usize, u64);

/// Holds the rule library, the prepared topologies and the explorations
/// already run, so repeated runs with the same environment reuse work.
pub struct Synthesizer {
    pub lib: RuleLibrary,
    pub tech: TechnologyModel,
    prepared: HashMap<OpAmpType, OnceLock<Result<Arc<Vec<Prepared>>, String>>>,
    cache: Mutex<HashMap<CacheKey, Arc<Exploration>>>,
}

impl Synthesizer {
    pub fn new(lib: RuleLibrary, tech: TechnologyModel) -> Synthesizer {
        let prepared = OpAmpType::all().into_iter().map(|t| (t, OnceLock::new())).collect();
        Synthesizer { lib, tech, prepared, cache: Mutex::new(HashMap::new()) }
    }

    /// Topologies of one type sorted by transistor count, then digest.
    pub fn topologies(&self, t: OpAmpType) -> Result<Arc<Vec<Prepared>>, SynthError> {
        let slot = &self.prepared[&t];
        let got = slot.get_or_init(|| {
            let tops = enumerate_topologies(&self.lib, t).map_err(|e| e.to_string())?;
            let mut out = tops
                .into_iter()
                .map(|top| {
                    let circuit = Circuit::prepare(&top, &self.lib.store).map_err(|e| format!("{}: {e}", top.id))?;
                    Ok(Prepared { topology: Arc::new(top), circuit: Arc::new(circuit) })
                })
                .collect::<Result<Vec<_>, String>>()?;
            out.sort_by_key(|p| (p.circuit.transistor_count(), p.topology.digest));
            Ok(Arc::new(out))
        });
        got.clone().map_err(SynthError::Prepare)
    }

    fn exploration(&self, p: &Prepared, spec: &SpecSet, cfg: &RunConfig) -> Arc<Exploration> {
        let key = (p.topology.digest, spec.env.key(), cfg.budget, cfg.seed);
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return e.clone();
        }
        let e = Arc::new(explore(&p.circuit, &self.tech, &spec.env, cfg.budget, cfg.seed));
        self.cache.lock().expect("cache lock").entry(key).or_insert(e).clone()
    }

    /// Sizes one prepared topology against a spec.
    pub fn size(&self, p: &Prepared, spec: &SpecSet, cfg: &RunConfig) -> SizingOutcome {
        let c = &p.circuit;
        if early_abort(c, spec, &self.tech) {
            return select(c, spec, &self.tech, &Exploration::default());
        }
        let exp = self.exploration(p, spec, cfg);
        select(c, spec, &self.tech, &exp)
    }

    fn size_all(&self, items: &[Prepared], spec: &SpecSet, cfg: &RunConfig, stop_at_pass: bool) -> Vec<(Prepared, SizingOutcome)> {
        let chunk = if stop_at_pass { rayon::current_num_threads().max(1) * 4 } else { items.len().max(1) };
        let mut out = Vec::new();
        for part in items.chunks(chunk) {
            let sized: Vec<SizingOutcome> = part.par_iter().map(|p| self.size(p, spec, cfg)).collect();
            for (p, o) in part.iter().zip(sized) {
                let pass = o.status == Status::PassAll;
                out.push((p.clone(), o));
                if stop_at_pass && pass {
                    return out;
                }
            }
        }
        out
    }

    /// Runs the structure synthesis for a spec: one-stage, symmetrical or
    /// complementary cores first, then the two-stage extensions of cores
    /// that met every start bound.
    pub fn synthesize(&self, spec: &SpecSet, cfg: &RunConfig) -> Result<SynthesisRun, SynthError> {
        if cfg.budget == 0 {
            return Err(SynthError::Budget);
        }
        let t0 = Instant::now();
        let mut builder = rayon::ThreadPoolBuilder::new();
        if cfg.jobs > 0 {
            builder = builder.num_threads(cfg.jobs);
        }
        let pool = builder.build().map_err(|e| SynthError::Pool(e.to_string()))?;
        let kind = spec.op_amp;
        let stop = cfg.mode == Mode::First && kind != OpAmpKind::Complementary;

        let mut level1: Vec<Prepared> = Vec::new();
        for &v in kind.variants().iter().filter(|&&v| v != Variant::TwoStage) {
            level1.extend(self.topologies(OpAmpType::new(kind, v)?)?.iter().cloned());
        }
        level1.sort_by_key(|p| (p.circuit.transistor_count(), p.topology.digest));

        let mut sized = pool.install(|| self.size_all(&level1, spec, cfg, stop));
        let found = sized.iter().any(|(_, o)| o.status == Status::PassAll);
        let pruned: Vec<&Prepared> =
            sized.iter().filter(|(p, o)| p.stages() == 1 && o.status == Status::FailStart).map(|(p, _)| p).collect();
        let pruned_ids: Vec<String> = pruned.iter().map(|p| p.topology.id.clone()).collect();
        let pruned_digests: std::collections::HashSet<CanonicalDigest> = pruned.iter().map(|p| p.topology.digest).collect();
        let passed: std::collections::HashSet<CanonicalDigest> = sized
            .iter()
            .filter(|(p, o)| p.topology.op_type.variant == Variant::OneStage && o.status != Status::FailStart)
            .map(|(p, _)| p.topology.digest)
            .collect();

        if kind.variants().contains(&Variant::TwoStage) && !(stop && found) {
            let children: Vec<Prepared> = self
                .topologies(OpAmpType::new(kind, Variant::TwoStage)?)?
                .iter()
                .filter(|p| p.topology.parent.is_some_and(|d| passed.contains(&d) && !pruned_digests.contains(&d)))
                .cloned()
                .collect();
            sized.extend(pool.install(|| self.size_all(&children, spec, cfg, stop)));
        }

        let created: Vec<Created> = sized
            .into_iter()
            .map(|(p, outcome)| Created {
                id: p.topology.id.clone(),
                digest: p.topology.digest,
                op_type: p.topology.op_type.to_string(),
                first_stage: p.topology.first_stage,
                stages: p.stages(),
                transistors: p.circuit.transistor_count(),
                parent: p.topology.parent,
                outcome,
                prepared: p,
            })
            .collect();
        let accepted: Vec<String> = created.iter().filter(|c| c.outcome.status == Status::PassAll).map(|c| c.id.clone()).collect();
        let stats = RunStats {
            created: created.len(),
            pruned_onestage: pruned_ids.len(),
            accepted: accepted.len(),
            evaluations: created.iter().map(|c| c.outcome.evaluations_used).sum(),
            wall: t0.elapsed(),
        };
        Ok(SynthesisRun { spec: spec.clone(), config: cfg.clone(), created, pruned_onestage: pruned_ids, accepted, stats })
    }
}

/// One accepted topology in the written summary.
#[derive(Clone, Debug, Serialize)]
pub struct ReportEntry {
    pub id: String,
    pub digest: CanonicalDigest,
    pub decomposition: String,
    pub perf: PerformanceVector,
    pub pass: IndexMap<String, bool>,
    pub netlist: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GroupCount {
    pub created: usize,
    pub pass_start: usize,
    pub accepted: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    spec: &'a str,
    op_amp_type: &'a str,
    mode: Mode,
    budget: usize,
    seed: u64,
    counts: &'a RunStats,
    /// Keyed by "<first stage>/<stage count>".
    groups: BTreeMap<String, GroupCount>,
    statuses: BTreeMap<String, usize>,
    pruned_onestage: &'a [String],
    accepted: Vec<ReportEntry>,
}

#[derive(Clone, Debug)]
pub struct Outputs {
    pub netlists: Vec<PathBuf>,
    pub summary: PathBuf,
    pub report: PathBuf,
}

fn netlist_name(c: &Created) -> String {
    format!("{}.sp", c.digest.hex())
}

/// Netlist text of an accepted topology.
pub fn render_netlist(c: &Created, tech: &TechnologyModel) -> Result<String, SynthError> {
    let circuit = &c.prepared.circuit;
    let sizing = c.outcome.sizing.as_ref().expect("accepted topologies carry a sizing");
    let mut out = String::new();
    writeln!(out, "* {}", c.id).unwrap();
    writeln!(out, "* digest {}", c.digest.hex()).unwrap();
    writeln!(out, "* {}", circuit.op.decomposition()).unwrap();
    out.push_str(&export_spice(&c.id.replace('-', "_"), &circuit.flat, tech, sizing)?);
    Ok(out)
}

fn status_key(s: Status) -> &'static str {
    match s {
        Status::FailStart => "fail_start",
        Status::FailEnd => "fail_end",
        Status::PassAll => "pass_all",
        Status::BudgetExhausted => "budget_exhausted",
    }
}

/// Writes one netlist per accepted topology, `summary.json` and `report.txt`.
pub fn write_outputs(run: &SynthesisRun, tech: &TechnologyModel, dir: &Path) -> Result<Outputs, SynthError> {
    let net_dir = dir.join("netlists");
    std::fs::create_dir_all(&net_dir)?;
    let mut netlists = Vec::new();
    let mut entries = Vec::new();
    let mut groups: BTreeMap<String, GroupCount> = BTreeMap::new();
    let mut statuses: BTreeMap<String, usize> = BTreeMap::new();
    for c in &run.created {
        let g = groups.entry(format!("{}/{}", c.first_stage, c.stages)).or_default();
        g.created += 1;
        g.pass_start += usize::from(c.outcome.status != Status::FailStart);
        *statuses.entry(status_key(c.outcome.status).to_string()).or_default() += 1;
        if c.outcome.status != Status::PassAll {
            continue;
        }
        g.accepted += 1;
        let name = netlist_name(c);
        let path = net_dir.join(&name);
        std::fs::write(&path, render_netlist(c, tech)?)?;
        netlists.push(path);
        let check = c.outcome.check.as_ref().expect("accepted topologies carry a check");
        entries.push(ReportEntry {
            id: c.id.clone(),
            digest: c.digest,
            decomposition: c.prepared.circuit.op.decomposition(),
            perf: c.outcome.perf.expect("accepted topologies carry performance"),
            pass: check.features.iter().map(|(f, (ok, _))| (f.key().to_string(), *ok)).collect(),
            netlist: format!("netlists/{name}"),
        });
    }
    let summary = Summary {
        spec: &run.spec.name,
        op_amp_type: run.spec.op_amp.short(),
        mode: run.config.mode,
        budget: run.config.budget,
        seed: run.config.seed,
        counts: &run.stats,
        groups: groups.clone(),
        statuses,
        pruned_onestage: &run.pruned_onestage,
        accepted: entries.clone(),
    };
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;

    let mut r = String::new();
    writeln!(r, "spec {} ({})", run.spec.name, run.spec.op_amp.short()).unwrap();
    for w in &run.spec.warnings {
        writeln!(r, "warning: {w}").unwrap();
    }
    writeln!(r, "mode {}, budget {}, seed {}", run.config.mode, run.config.budget, run.config.seed).unwrap();
    writeln!(
        r,
        "created {}, pruned one-stage {}, accepted {}, evaluations {}",
        run.stats.created, run.stats.pruned_onestage, run.stats.accepted, run.stats.evaluations
    )
    .unwrap();
    writeln!(r, "\n{:<12} {:>7} {:>10} {:>8}", "first/stages", "created", "pass-start", "accepted").unwrap();
    for (k, g) in &groups {
        writeln!(r, "{:<12} {:>7} {:>10} {:>8}", k, g.created, g.pass_start, g.accepted).unwrap();
    }
    for e in &entries {
        let p = &e.perf;
        writeln!(r, "\n{}  {}", e.id, e.netlist).unwrap();
        writeln!(r, "  {}", e.decomposition).unwrap();
        writeln!(
            r,
            "  area {:.0} um^2, power {:.3} mW, gain {:.1} dB, gbw {:.3} MHz, sr {:.2} V/us, pm {:.1} deg, cmrr {:.1} dB",
            p.gate_area,
            p.power * 1e3,
            p.gain,
            p.gbw * 1e-6,
            p.slew_rate * 1e-6,
            p.phase_margin,
            p.cmrr
        )
        .unwrap();
        writeln!(r, "  cmir {:.2} .. {:.2} V, swing {:.2} .. {:.2} V", p.vcm_min, p.vcm_max, p.vout_min, p.vout_max).unwrap();
    }
    let report_path = dir.join("report.txt");
    std::fs::write(&report_path, r)?;
    Ok(Outputs { netlists, summary: summary_path, report: report_path })
}
