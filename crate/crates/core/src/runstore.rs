//! Append-only JSONL event log per run, with replay verification and reports.
//!
//! Every line is one event in canonical JSON (sorted keys, shortest
//! round-trip floats). The determinism hash is SHA-256 over the log with
//! each event's `timestamp` removed, lines joined by `\n`.
//!
//! Run directory layout: `run.jsonl`, `config.snapshot.json`, `artifacts/`,
//! `report.json`, `report.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::FeedbackMode;
use crate::domain::{
    aggregate_fitness, canonical_json, requirements_met, Artifact, Evaluation, MetMode,
    RequirementSet, Solution, Status, UserInstruction,
};
use crate::engine::{rank, select, EvolutionConfig, GenerationRecord, MemberRecord, TerminationReason};
use crate::gateway::{account, GatewayCall, UsageSummary};
use crate::render::RenderFailure;

pub const LOG_FILE: &str = "run.jsonl";
pub const CONFIG_SNAPSHOT: &str = "config.snapshot.json";
pub const ARTIFACTS_DIR: &str = "artifacts";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} already holds a run log")]
    Exists(PathBuf),

    #[error("{0} is not a run directory")]
    NotARun(PathBuf),

    #[error("run log is incomplete: {0}")]
    Incomplete(String),

    #[error("run log is corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunEndStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum MutationOutcome {
    Mutated,
    /// The creator failed; the child is a copy of the parent.
    ParentClone { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    RunStart {
        config: Value,
        instruction: UserInstruction,
    },
    Decomposed {
        requirements: RequirementSet,
    },
    IndividualCreated {
        solution: Solution,
        created_seq: u64,
        /// Generation-0 creation attempt; always 0 for offspring.
        attempt: u32,
    },
    Rendered {
        id: String,
        artifact: Artifact,
    },
    RenderFailed {
        id: String,
        failure: RenderFailure,
    },
    Judged {
        id: String,
        evaluation: Evaluation,
        fitness: f64,
    },
    EvalFailed {
        id: String,
        error: String,
    },
    Selected {
        members: Vec<MemberRecord>,
        ranking: Vec<String>,
        elites: Vec<String>,
        parents: Vec<String>,
    },
    Mutated {
        parent: String,
        child: String,
        mode: FeedbackMode,
        outcome: MutationOutcome,
    },
    Terminated {
        reason: TerminationReason,
        members: Vec<MemberRecord>,
    },
    GatewayCall {
        call: GatewayCall,
    },
    RunEnd {
        status: RunEndStatus,
        best_id: Option<String>,
        best_fitness: Option<f64>,
        generations: u32,
        error: Option<String>,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::RunStart { .. } => "run_start",
            EventBody::Decomposed { .. } => "decomposed",
            EventBody::IndividualCreated { .. } => "individual_created",
            EventBody::Rendered { .. } => "rendered",
            EventBody::RenderFailed { .. } => "render_failed",
            EventBody::Judged { .. } => "judged",
            EventBody::EvalFailed { .. } => "eval_failed",
            EventBody::Selected { .. } => "selected",
            EventBody::Mutated { .. } => "mutated",
            EventBody::Terminated { .. } => "terminated",
            EventBody::GatewayCall { .. } => "gateway_call",
            EventBody::RunEnd { .. } => "run_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// UTC, RFC 3339 with milliseconds. Excluded from the determinism hash.
    pub timestamp: String,
    pub run_id: String,
    pub generation: u32,
    #[serde(flatten)]
    pub body: EventBody,
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// A run id derived from the configuration and instruction, so identical
/// invocations log identical ids.
pub fn derive_run_id(config: &EvolutionConfig, instruction: &UserInstruction) -> String {
    let mut h = Sha256::new();
    h.update(canonical_json(config).as_bytes());
    h.update(b"\n");
    h.update(canonical_json(instruction).as_bytes());
    format!("run-{}", &hex::encode(h.finalize())[..12])
}

fn strip_timestamp(line: &str) -> Result<String, serde_json::Error> {
    let mut v: Value = serde_json::from_str(line)?;
    if let Value::Object(map) = &mut v {
        map.remove("timestamp");
    }
    Ok(canonical_json(&v))
}

/// SHA-256 (hex) over timestamp-stripped log lines joined by `\n`.
pub fn stripped_hash<'a, I>(lines: I) -> Result<String, StoreError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut h = Sha256::new();
    for (i, line) in lines.into_iter().enumerate() {
        let stripped = strip_timestamp(line)
            .map_err(|e| StoreError::Corrupt(format!("line {}: {e}", i + 1)))?;
        if i > 0 {
            h.update(b"\n");
        }
        h.update(stripped.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

enum Sink {
    File(File),
    Memory,
}

/// Single-writer log for one run. Lines are flushed as they are appended.
pub struct RunStore {
    run_id: String,
    seq: u64,
    sink: Sink,
    lines: Vec<String>,
    dir: PathBuf,
    _scratch: Option<tempfile::TempDir>,
}

impl RunStore {
    /// Opens a fresh run directory; refuses one that already holds a log.
    pub fn create(dir: &Path, run_id: impl Into<String>) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join(ARTIFACTS_DIR))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => StoreError::Exists(dir.to_path_buf()),
                _ => StoreError::Io(e),
            })?;
        Ok(Self {
            run_id: run_id.into(),
            seq: 0,
            sink: Sink::File(file),
            lines: Vec::new(),
            dir: dir.to_path_buf(),
            _scratch: None,
        })
    }

    /// Keeps the log in memory; artifacts go to a scratch directory that
    /// lives as long as the store.
    pub fn in_memory(run_id: impl Into<String>) -> Result<Self, StoreError> {
        let scratch = tempfile::Builder::new().prefix("made-run-").tempdir()?;
        Ok(Self {
            run_id: run_id.into(),
            seq: 0,
            sink: Sink::Memory,
            lines: Vec::new(),
            dir: scratch.path().to_path_buf(),
            _scratch: Some(scratch),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn append(&mut self, generation: u32, body: EventBody) -> Result<Event, StoreError> {
        let event = Event {
            seq: self.seq,
            timestamp: now_utc(),
            run_id: self.run_id.clone(),
            generation,
            body,
        };
        let line = canonical_json(&event);
        if let Sink::File(f) = &mut self.sink {
            f.write_all(line.as_bytes())?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        self.lines.push(line);
        self.seq += 1;
        Ok(event)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Sink::File(f) = &mut self.sink {
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String, StoreError> {
        stripped_hash(self.lines.iter().map(String::as_str))
    }

    pub fn artifact_dir(&self, generation: u32, id: &str) -> PathBuf {
        self.dir.join(ARTIFACTS_DIR).join(generation.to_string()).join(id)
    }

    /// Writes `value` as canonical JSON to `name` inside the run directory.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        fs::write(self.dir.join(name), canonical_json(value) + "\n")?;
        Ok(())
    }
}

/// Raw log lines of a run directory.
pub fn read_log(dir: &Path) -> Result<Vec<String>, StoreError> {
    let path = dir.join(LOG_FILE);
    if !path.is_file() {
        return Err(StoreError::NotARun(dir.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    reader.lines().collect::<Result<Vec<_>, _>>().map_err(StoreError::from)
}

/// State recovered from a log that ends before `run_end`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResumableState {
    pub events: usize,
    pub last_seq: Option<u64>,
    pub last_generation: Option<u32>,
    /// Generations whose selection or termination was logged.
    pub completed_generations: Vec<u32>,
    pub last_population: Vec<String>,
    pub best_id: Option<String>,
    pub best_fitness: Option<f64>,
    pub violations: Vec<String>,
}

/// History reconstructed purely from the log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayedRun {
    pub run_id: String,
    pub config: Option<EvolutionConfig>,
    pub requirements: Option<RequirementSet>,
    pub history: Vec<GenerationRecord>,
    pub best_id: Option<String>,
    pub best_fitness: Option<f64>,
    pub best_evaluation: Option<Evaluation>,
    pub termination: Option<TerminationReason>,
    pub end_status: RunEndStatus,
    pub error: Option<String>,
    pub calls: Vec<GatewayCall>,
    pub hash: String,
    pub events: usize,
    pub violations: Vec<String>,
}

impl ReplayedRun {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn curve(&self) -> Vec<f64> {
        self.history.iter().map(|g| g.best_fitness().unwrap_or(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReplayOutcome {
    Complete(Box<ReplayedRun>),
    Truncated(ResumableState),
}

#[derive(Default)]
struct Replayer {
    violations: Vec<String>,
    run_id: Option<String>,
    config: Option<EvolutionConfig>,
    requirements: Option<RequirementSet>,
    created: BTreeMap<String, (u32, Solution)>,
    judged: BTreeMap<String, (f64, Evaluation)>,
    outcomes: BTreeMap<String, Status>,
    history: Vec<GenerationRecord>,
    calls: Vec<GatewayCall>,
    end: Option<(RunEndStatus, Option<String>, Option<f64>, Option<String>)>,
    termination: Option<TerminationReason>,
    last_seq: Option<u64>,
    last_generation: Option<u32>,
}

impl Replayer {
    fn violation(&mut self, at: usize, msg: impl AsRef<str>) {
        self.violations.push(format!("line {}: {}", at + 1, msg.as_ref()));
    }

    fn event(&mut self, at: usize, line: &str) {
        let event: Event = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => return self.violation(at, format!("malformed event: {e}")),
        };
        if canonical_json(&event) != line {
            self.violation(at, "event is not in canonical form");
        }
        if event.seq != at as u64 {
            self.violation(at, format!("sequence number {} where {} was expected", event.seq, at));
        }
        match &self.run_id {
            None => self.run_id = Some(event.run_id.clone()),
            Some(id) if *id != event.run_id => {
                let msg = format!("run id {} differs from {}", event.run_id, id);
                self.violation(at, msg);
            }
            Some(_) => {}
        }
        if at == 0 && !matches!(event.body, EventBody::RunStart { .. }) {
            self.violation(at, "log does not open with run_start");
        }
        if self.end.is_some() {
            self.violation(at, format!("{} after run_end", event.body.kind()));
        }
        self.last_seq = Some(event.seq);
        self.last_generation = Some(event.generation);
        let t = event.generation;
        match event.body {
            EventBody::RunStart { config, .. } => match serde_json::from_value(config) {
                Ok(c) => self.config = Some(c),
                Err(e) => self.violation(at, format!("run_start config unreadable: {e}")),
            },
            EventBody::Decomposed { requirements } => self.requirements = Some(requirements),
            EventBody::IndividualCreated { solution, .. } => self.created_event(at, t, solution),
            EventBody::Rendered { id, .. } => self.known(at, &id),
            EventBody::RenderFailed { id, .. } => {
                self.known(at, &id);
                self.outcomes.insert(id, Status::RenderFailed);
            }
            EventBody::EvalFailed { id, .. } => {
                self.known(at, &id);
                self.outcomes.insert(id, Status::EvalFailed);
            }
            EventBody::Judged { id, evaluation, fitness } => self.judged_event(at, id, evaluation, fitness),
            EventBody::Selected { members, ranking, elites, parents } => {
                self.generation_event(at, t, &members);
                self.selection_event(at, &members, &ranking, &elites, &parents);
                self.history.push(GenerationRecord { generation: t, members, elites, parents, termination: None });
            }
            EventBody::Terminated { reason, members } => {
                self.generation_event(at, t, &members);
                self.termination_event(at, t, reason, &members);
                self.termination = Some(reason);
                self.history.push(GenerationRecord {
                    generation: t,
                    members,
                    elites: Vec::new(),
                    parents: Vec::new(),
                    termination: Some(reason),
                });
            }
            EventBody::Mutated { parent, child, .. } => {
                self.known(at, &parent);
                let prev_parents = self.history.last().map(|g| g.parents.clone()).unwrap_or_default();
                if !prev_parents.contains(&parent) {
                    self.violation(at, format!("{child} mutated from {parent}, which is not a selected parent"));
                }
            }
            EventBody::GatewayCall { call } => self.calls.push(call),
            EventBody::RunEnd { status, best_id, best_fitness, error, .. } => {
                self.end = Some((status, best_id, best_fitness, error));
            }
        }
    }

    fn known(&mut self, at: usize, id: &str) {
        if !self.created.contains_key(id) {
            self.violation(at, format!("unknown individual {id}"));
        }
    }

    fn created_event(&mut self, at: usize, t: u32, solution: Solution) {
        if solution.lineage.generation != t {
            let msg = format!("{} has lineage generation {} in generation {t}", solution.id, solution.lineage.generation);
            self.violation(at, msg);
        }
        if t > 0 {
            let parents = self.history.last().map(|g| g.parents.clone()).unwrap_or_default();
            match &solution.lineage.parent {
                Some(p) if parents.contains(p) => {}
                other => {
                    let msg = format!("{} has parent {:?} outside the previous parent set", solution.id, other);
                    self.violation(at, msg);
                }
            }
        }
        if self.created.insert(solution.id.clone(), (t, solution.clone())).is_some() {
            self.violation(at, format!("individual {} created twice", solution.id));
        }
    }

    fn judged_event(&mut self, at: usize, id: String, evaluation: Evaluation, fitness: f64) {
        self.known(at, &id);
        if let Some(r) = &self.requirements {
            if let Err(e) = evaluation.check(r) {
                self.violation(at, format!("evaluation of {id} invalid: {e}"));
            }
        }
        match aggregate_fitness(&evaluation.scores) {
            Ok(g) if g == fitness => {}
            Ok(g) => self.violation(at, format!("{id} fitness {fitness} does not equal g(v) = {g}")),
            Err(e) => self.violation(at, format!("{id} scores invalid: {e}")),
        }
        self.outcomes.insert(id.clone(), Status::Evaluated);
        self.judged.insert(id, (fitness, evaluation));
    }

    /// Population size, membership and recorded fitness of generation `t`.
    fn generation_event(&mut self, at: usize, t: u32, members: &[MemberRecord]) {
        if let Some(cfg) = &self.config {
            if members.len() != cfg.population_size {
                let msg = format!("generation {t} has {} members, expected {}", members.len(), cfg.population_size);
                self.violation(at, msg);
            }
        }
        if let Some(prev) = self.history.last() {
            if prev.generation + 1 != t {
                let msg = format!("generation {t} follows generation {}", prev.generation);
                self.violation(at, msg);
            }
        }
        let carried: BTreeMap<String, Option<f64>> = self
            .history
            .last()
            .map(|g| {
                g.members
                    .iter()
                    .filter(|m| g.elites.contains(&m.id))
                    .map(|m| (m.id.clone(), m.fitness))
                    .collect()
            })
            .unwrap_or_default();
        let mut seen = BTreeSet::new();
        for m in members {
            if !seen.insert(m.id.clone()) {
                self.violation(at, format!("{} listed twice in generation {t}", m.id));
            }
            if let Some(f) = carried.get(&m.id) {
                if *f != m.fitness {
                    self.violation(at, format!("elite {} changed fitness from {:?} to {:?}", m.id, f, m.fitness));
                }
                continue;
            }
            match self.created.get(&m.id) {
                Some((g, _)) if *g == t => {}
                Some((g, _)) => {
                    let msg = format!("{} from generation {g} reappears in generation {t} without being an elite", m.id);
                    self.violation(at, msg);
                }
                None => self.violation(at, format!("unknown individual {}", m.id)),
            }
            let logged = self.outcomes.get(&m.id).copied().unwrap_or(Status::Pending);
            if logged != m.status {
                self.violation(at, format!("{} recorded as {:?} but logged as {:?}", m.id, m.status, logged));
            }
            let judged = self.judged.get(&m.id).map(|(f, _)| *f);
            if judged != m.fitness {
                self.violation(at, format!("{} recorded fitness {:?} but was judged {:?}", m.id, m.fitness, judged));
            }
        }
        for id in carried.keys() {
            if !seen.contains(id) {
                self.violation(at, format!("elite {id} missing from generation {t}"));
            }
        }
        let best = members.iter().filter_map(|m| m.fitness).reduce(f64::max);
        let prev_best = self.history.last().and_then(|g| g.best_fitness());
        if let (Some(p), Some(b)) = (prev_best, best) {
            if b < p {
                self.violation(at, format!("best fitness fell from {p} to {b} in generation {t}"));
            }
        }
    }

    fn selection_event(
        &mut self,
        at: usize,
        members: &[MemberRecord],
        ranking: &[String],
        elites: &[String],
        parents: &[String],
    ) {
        let Some(cfg) = self.config.clone() else { return };
        let ids = |ix: &[usize]| ix.iter().map(|&i| members[i].id.clone()).collect::<Vec<_>>();
        if ids(&rank(members)) != ranking {
            self.violation(at, "ranking disagrees with the ranking rule");
        }
        match select(members, cfg.elite_count, cfg.population_size) {
            Some(sel) => {
                if ids(&sel.elites) != elites {
                    self.violation(at, format!("elites {elites:?} disagree with {:?}", ids(&sel.elites)));
                }
                if ids(&sel.parents) != parents {
                    self.violation(at, format!("parents {parents:?} disagree with {:?}", ids(&sel.parents)));
                }
            }
            None => self.violation(at, "selection logged without any evaluated member"),
        }
    }

    fn termination_event(&mut self, at: usize, t: u32, reason: TerminationReason, members: &[MemberRecord]) {
        let all_met = members.iter().any(|m| m.fitness == Some(1.0));
        let ok = match reason {
            TerminationReason::AllRequirementsMet => all_met,
            TerminationReason::MaxGenerations => {
                !all_met && self.config.as_ref().is_none_or(|c| t >= c.max_generations)
            }
        };
        if !ok {
            self.violation(at, format!("termination {reason:?} not justified in generation {t}"));
        }
    }

    fn best(&self) -> Option<(String, f64)> {
        let mut best: Option<(&MemberRecord, f64)> = None;
        for g in &self.history {
            for m in &g.members {
                if let Some(f) = m.fitness {
                    let better = match best {
                        None => true,
                        Some((b, bf)) => f > bf || (f == bf && (m.created_seq, &m.id) < (b.created_seq, &b.id)),
                    };
                    if better {
                        best = Some((m, f));
                    }
                }
            }
        }
        best.map(|(m, f)| (m.id.clone(), f))
    }

    fn best_judged(&self) -> Option<(String, f64)> {
        self.judged
            .iter()
            .map(|(id, (f, _))| (id.clone(), *f))
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
    }
}

/// Rebuilds a run from its log and checks the loop invariants. A log without
/// `run_end` yields the state reached so far instead of a verdict.
pub fn replay(dir: &Path) -> Result<ReplayOutcome, StoreError> {
    let lines = read_log(dir)?;
    Ok(replay_lines(&lines))
}

pub fn replay_lines(lines: &[String]) -> ReplayOutcome {
    let mut r = Replayer::default();
    for (at, line) in lines.iter().enumerate() {
        r.event(at, line);
    }
    let Some((status, best_id, best_fitness, error)) = r.end.clone() else {
        let best = r.best();
        return ReplayOutcome::Truncated(ResumableState {
            events: lines.len(),
            last_seq: r.last_seq,
            last_generation: r.last_generation,
            completed_generations: r.history.iter().map(|g| g.generation).collect(),
            last_population: r.history.last().map(|g| g.members.iter().map(|m| m.id.clone()).collect()).unwrap_or_default(),
            best_id: best.as_ref().map(|b| b.0.clone()),
            best_fitness: best.map(|b| b.1),
            violations: r.violations,
        });
    };
    let at_end = lines.len().saturating_sub(1);
    if status == RunEndStatus::Completed {
        match (r.best(), &best_id, best_fitness) {
            (Some((id, f)), Some(bid), Some(bf)) => {
                if bf < f {
                    r.violation(at_end, format!("best fitness {bf} is below recorded individual {id} ({f})"));
                } else if bf > f {
                    r.violation(at_end, format!("best fitness {bf} exceeds every recorded fitness (max {f})"));
                } else if *bid != id {
                    r.violation(at_end, format!("best id {bid} should be {id}"));
                }
            }
            _ => r.violation(at_end, "completed run without a best individual"),
        }
        if let (Some((jid, jf)), Some(bf)) = (r.best_judged(), best_fitness) {
            if jf > bf {
                r.violation(at_end, format!("best fitness {bf} is below judged individual {jid} ({jf})"));
            }
        }
        if r.termination.is_none() {
            r.violation(at_end, "completed run without a terminated event");
        }
    }
    let best_evaluation = best_id.as_ref().and_then(|id| r.judged.get(id)).map(|(_, e)| e.clone());
    let hash = stripped_hash(lines.iter().map(String::as_str)).unwrap_or_default();
    ReplayOutcome::Complete(Box::new(ReplayedRun {
        run_id: r.run_id.unwrap_or_default(),
        config: r.config,
        requirements: r.requirements,
        history: r.history,
        best_id,
        best_fitness,
        best_evaluation,
        termination: r.termination,
        end_status: status,
        error,
        calls: r.calls,
        hash,
        events: lines.len(),
        violations: r.violations,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub generations_executed: u32,
    pub best_fitness_curve: Vec<f64>,
    pub best_id: Option<String>,
    pub best_fitness: Option<f64>,
    pub requirements_met_independent: Option<f64>,
    pub requirements_met_dependent: Option<f64>,
    pub all_pass: bool,
    pub termination: Option<TerminationReason>,
    pub feedback_mode: Option<FeedbackMode>,
    pub usage: UsageSummary,
    /// Set when usage figures are missing or partial.
    pub usage_warning: Option<String>,
    pub log_hash: String,
}

pub fn build_report(run: &ReplayedRun) -> RunReport {
    let usages: Vec<_> = run.calls.iter().filter_map(|c| c.usage.clone()).collect();
    let usage = account(&usages);
    let usage_warning = if run.calls.is_empty() {
        Some("no gateway usage recorded; cost, time and tokens are zero".to_string())
    } else if usage.incomplete || usages.len() < run.calls.len() {
        Some("some gateway calls lacked usage or pricing".to_string())
    } else {
        None
    };
    let met = |mode| match (&run.best_evaluation, &run.requirements) {
        (Some(e), Some(r)) => requirements_met(e, r, mode).ok(),
        _ => None,
    };
    RunReport {
        run_id: run.run_id.clone(),
        generations_executed: run.history.len().saturating_sub(1) as u32,
        best_fitness_curve: run.curve(),
        best_id: run.best_id.clone(),
        best_fitness: run.best_fitness,
        requirements_met_independent: met(MetMode::Independent),
        requirements_met_dependent: met(MetMode::Dependent),
        all_pass: run.best_fitness == Some(1.0),
        termination: run.termination,
        feedback_mode: run.config.as_ref().map(|c| c.feedback_mode),
        usage,
        usage_warning,
        log_hash: run.hash.clone(),
    }
}

/// Replays a complete run and builds its report.
pub fn report(dir: &Path) -> Result<RunReport, StoreError> {
    match replay(dir)? {
        ReplayOutcome::Complete(run) => Ok(build_report(&run)),
        ReplayOutcome::Truncated(state) => Err(StoreError::Incomplete(format!(
            "{} events, no run_end",
            state.events
        ))),
    }
}

/// Writes `report.json` and `report.txt` into the run directory.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), StoreError> {
    fs::write(dir.join(REPORT_JSON), canonical_json(report) + "\n")?;
    fs::write(dir.join(REPORT_TEXT), report.to_text())?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0))
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {}", self.run_id);
        let _ = writeln!(s, "generations executed: {}", self.generations_executed);
        let curve: Vec<String> = self.best_fitness_curve.iter().map(|f| format!("{f:.3}")).collect();
        let _ = writeln!(s, "best fitness by generation: [{}]", curve.join(", "));
        let _ = writeln!(
            s,
            "best individual: {} (fitness {})",
            self.best_id.as_deref().unwrap_or("none"),
            self.best_fitness.map_or("n/a".into(), |f| format!("{f:.3}"))
        );
        let _ = writeln!(s, "requirements met (I): {}", pct(self.requirements_met_independent));
        let _ = writeln!(s, "requirements met (D): {}", pct(self.requirements_met_dependent));
        let _ = writeln!(s, "all pass: {}", if self.all_pass { "yes" } else { "no" });
        if let Some(t) = self.termination {
            let _ = writeln!(s, "termination: {}", serde_json::to_value(t).unwrap().as_str().unwrap_or(""));
        }
        let u = &self.usage;
        let _ = writeln!(s, "gateway calls: {}", u.calls);
        let _ = writeln!(s, "cost: total {:.6}, average {:.6}", u.total_cost, u.average_cost);
        let _ = writeln!(s, "time: total {:.3}s, average {:.3}s", u.total_time_secs, u.average_time_secs);
        let _ = writeln!(
            s,
            "tokens: input {} (avg {:.1}), output {} (avg {:.1})",
            u.total_input_tokens, u.average_input_tokens, u.total_output_tokens, u.average_output_tokens
        );
        if let Some(w) = &self.usage_warning {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Means over several completed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub runs: usize,
    pub mean_best_fitness: f64,
    pub all_pass_rate: f64,
    pub mean_requirements_met_independent: f64,
    pub mean_requirements_met_dependent: f64,
    pub average_cost: f64,
    pub average_time_secs: f64,
    pub average_input_tokens: f64,
    pub average_output_tokens: f64,
}

pub fn batch_report(reports: &[RunReport]) -> Option<BatchReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(BatchReport {
        runs: reports.len(),
        mean_best_fitness: mean(&|r| r.best_fitness.unwrap_or(0.0)),
        all_pass_rate: mean(&|r| f64::from(u8::from(r.all_pass))),
        mean_requirements_met_independent: mean(&|r| r.requirements_met_independent.unwrap_or(0.0)),
        mean_requirements_met_dependent: mean(&|r| r.requirements_met_dependent.unwrap_or(0.0)),
        average_cost: mean(&|r| r.usage.total_cost),
        average_time_secs: mean(&|r| r.usage.total_time_secs),
        average_input_tokens: mean(&|r| r.usage.total_input_tokens as f64),
        average_output_tokens: mean(&|r| r.usage.total_output_tokens as f64),
    })
}
