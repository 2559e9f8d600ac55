//! The evolutionary loop: decompose, create, then repeatedly evaluate,
//! check termination, select with elitism and refill by mutation.
//!
//! Work inside a phase may run concurrently, but every result is committed
//! to the run log in individual-index order, so a run with deterministic
//! agents and a fixed seed produces the same log on every execution.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    self, AgentConfig, AgentError, AgentRole, CallContext, CallKind, Creator, Decomposer,
    FeedbackMode, IdAllocator, Judge,
};
use crate::domain::{
    check_population_size, Artifact, Evaluation, FeedbackBundle, Individual, Lineage,
    RequirementSet, Solution, Status, UserInstruction,
};
use crate::gateway::{account, CallLedger, Usage, UsageSummary};
use crate::render::{RenderFailure, Renderer, RendererConfig};
use crate::runstore::{EventBody, MutationOutcome, RunEndStatus, RunStore, StoreError};

/// Extra attempts at generation 0 when every initial individual fails to render.
pub const INIT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decomposition: {0}")]
    Decomposition(AgentError),

    #[error("initialization: {0}")]
    Initialization(AgentError),

    #[error("every generation-0 individual failed to render in {attempts} attempts")]
    AllRenderFailed { attempts: u32 },

    #[error("generation {generation} has no evaluated individual to select from")]
    Selection { generation: u32 },

    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfigs {
    pub decomposer: AgentConfig,
    pub creator: AgentConfig,
    pub judge: AgentConfig,
}

impl Default for AgentConfigs {
    fn default() -> Self {
        Self {
            decomposer: AgentConfig::default_for(AgentRole::Decomposer),
            creator: AgentConfig::default_for(AgentRole::Creator),
            judge: AgentConfig::default_for(AgentRole::Judge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub max_generations: u32,
    pub elite_count: usize,
    pub seed: u64,
    pub feedback_mode: FeedbackMode,
    pub renderer: RendererConfig,
    pub agents: AgentConfigs,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 4,
            max_generations: 3,
            elite_count: 1,
            seed: 0,
            feedback_mode: FeedbackMode::Full,
            renderer: RendererConfig::default(),
            agents: AgentConfigs::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        check_population_size(self.population_size).map_err(|e| EngineError::Config(e.to_string()))?;
        if self.elite_count < 1 || self.elite_count >= self.population_size {
            return Err(EngineError::Config(format!(
                "elite_count must lie in [1, {}), got {}",
                self.population_size, self.elite_count
            )));
        }
        self.renderer.validate().map_err(EngineError::Config)?;
        for cfg in [&self.agents.decomposer, &self.agents.creator, &self.agents.judge] {
            cfg.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MaxGenerations,
    AllRequirementsMet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Stop(TerminationReason),
}

/// Stop once any member scores 1.0 or generation `t` reaches the limit.
pub fn check_termination<I>(t: u32, max_generations: u32, fitnesses: I) -> Termination
where
    I: IntoIterator<Item = Option<f64>>,
{
    if fitnesses.into_iter().any(|f| f == Some(1.0)) {
        Termination::Stop(TerminationReason::AllRequirementsMet)
    } else if t >= max_generations {
        Termination::Stop(TerminationReason::MaxGenerations)
    } else {
        Termination::Continue
    }
}

/// One population member as the log records it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub id: String,
    pub created_seq: u64,
    pub status: Status,
    pub fitness: Option<f64>,
    pub scores: Option<Vec<u8>>,
    pub parent: Option<String>,
}

impl MemberRecord {
    pub fn of(ind: &Individual) -> Self {
        Self {
            id: ind.id().to_string(),
            created_seq: ind.created_seq,
            status: ind.status,
            fitness: ind.fitness,
            scores: ind.evaluation.as_ref().map(|e| e.scores.clone()),
            parent: ind.solution.lineage.parent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub members: Vec<MemberRecord>,
    pub elites: Vec<String>,
    pub parents: Vec<String>,
    pub termination: Option<TerminationReason>,
}

impl GenerationRecord {
    pub fn best_fitness(&self) -> Option<f64> {
        self.members.iter().filter_map(|m| m.fitness).reduce(f64::max)
    }
}

fn status_rank(s: Status) -> u8 {
    match s {
        Status::Evaluated => 0,
        Status::EvalFailed => 1,
        Status::RenderFailed | Status::Pending => 2,
    }
}

fn compare(a: &MemberRecord, b: &MemberRecord) -> Ordering {
    status_rank(a.status)
        .cmp(&status_rank(b.status))
        .then_with(|| {
            let fa = a.fitness.unwrap_or(f64::NEG_INFINITY);
            let fb = b.fitness.unwrap_or(f64::NEG_INFINITY);
            fb.total_cmp(&fa)
        })
        .then_with(|| a.created_seq.cmp(&b.created_seq))
        .then_with(|| a.id.cmp(&b.id))
}

/// Member indices best first: evaluated by fitness descending, then
/// eval-failed, then render-failed; ties go to the earlier-created, then
/// the smaller id.
pub fn rank(members: &[MemberRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&i, &j| compare(&members[i], &members[j]));
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub ranking: Vec<usize>,
    pub elites: Vec<usize>,
    pub parents: Vec<usize>,
}

/// Elites are the top `elite_count` evaluated members, parents the top
/// `population_size / 2` evaluated members. Unevaluated members never
/// qualify, so either list can come up short when many members failed.
pub fn select(members: &[MemberRecord], elite_count: usize, population_size: usize) -> Option<Selection> {
    let ranking = rank(members);
    let evaluated: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|&i| members[i].status == Status::Evaluated)
        .collect();
    if evaluated.is_empty() {
        return None;
    }
    Some(Selection {
        elites: evaluated.iter().copied().take(elite_count).collect(),
        parents: evaluated.iter().copied().take(population_size / 2).collect(),
        ranking,
    })
}

/// The three agent roles wired into one run.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub decomposer: &'a dyn Decomposer,
    pub creator: &'a dyn Creator,
    pub judge: &'a dyn Judge,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub run_id: String,
    pub requirements: RequirementSet,
    /// σ*: the highest-fitness individual over the whole run.
    pub best: Individual,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub termination: TerminationReason,
    pub usage: UsageSummary,
}

impl EvolutionResult {
    pub fn curve(&self) -> Vec<f64> {
        self.history.iter().map(|g| g.best_fitness().unwrap_or(0.0)).collect()
    }
}

enum Outcome {
    Rendered(Artifact, Result<Evaluation, String>),
    RenderFailed(RenderFailure),
}

struct Run<'a> {
    cfg: &'a EvolutionConfig,
    agents: Agents<'a>,
    renderer: &'a Renderer,
    store: &'a mut RunStore,
    calls: Option<&'a CallLedger>,
    usages: Vec<Usage>,
    ids: IdAllocator,
}

/// Runs the whole loop, logging every phase to `store`. Gateway calls
/// recorded in `calls` are flushed into the log after each phase, ordered
/// by request id.
pub fn run_evolution(
    instruction: &UserInstruction,
    cfg: &EvolutionConfig,
    agents: Agents<'_>,
    renderer: &Renderer,
    store: &mut RunStore,
    calls: Option<&CallLedger>,
) -> Result<EvolutionResult, EngineError> {
    cfg.validate()?;
    let mut run = Run { cfg, agents, renderer, store, calls, usages: Vec::new(), ids: IdAllocator::new() };
    run.store.append(
        0,
        EventBody::RunStart {
            config: serde_json::to_value(cfg).expect("config serializes"),
            instruction: instruction.clone(),
        },
    )?;
    match run.execute(instruction) {
        Ok(result) => Ok(result),
        Err(e) => {
            let _ = run.flush_calls(0);
            let _ = run.store.append(
                0,
                EventBody::RunEnd {
                    status: RunEndStatus::Aborted,
                    best_id: None,
                    best_fitness: None,
                    generations: 0,
                    error: Some(e.to_string()),
                },
            );
            Err(e)
        }
    }
}

impl Run<'_> {
    fn execute(&mut self, instruction: &UserInstruction) -> Result<EvolutionResult, EngineError> {
        let requirements = self.agents.decomposer.decompose(instruction).map_err(EngineError::Decomposition);
        self.flush_calls(0)?;
        let requirements = requirements?;
        self.store.append(0, EventBody::Decomposed { requirements: requirements.clone() })?;

        let mut population = self.initialize(instruction, &requirements)?;
        let mut history = Vec::new();
        let mut best: Option<Individual> = None;
        let mut t = 0u32;
        loop {
            if t > 0 {
                self.evaluate(&mut population, t, &requirements)?;
            }
            let records: Vec<MemberRecord> = population.iter().map(MemberRecord::of).collect();
            if let Some(sel) = select(&records, 1, 2) {
                let top = &population[sel.elites[0]];
                let better = match &best {
                    None => true,
                    Some(b) => compare(&records[sel.elites[0]], &MemberRecord::of(b)) == Ordering::Less,
                };
                if better {
                    best = Some(top.clone());
                }
            }

            if let Termination::Stop(reason) =
                check_termination(t, self.cfg.max_generations, records.iter().map(|m| m.fitness))
            {
                self.store.append(t, EventBody::Terminated { reason, members: records.clone() })?;
                history.push(GenerationRecord {
                    generation: t,
                    members: records,
                    elites: Vec::new(),
                    parents: Vec::new(),
                    termination: Some(reason),
                });
                let best = best.ok_or(EngineError::Selection { generation: t })?;
                let best_fitness = best.fitness.unwrap_or(0.0);
                self.store.append(
                    t,
                    EventBody::RunEnd {
                        status: RunEndStatus::Completed,
                        best_id: Some(best.id().to_string()),
                        best_fitness: Some(best_fitness),
                        generations: t,
                        error: None,
                    },
                )?;
                self.store.flush()?;
                return Ok(EvolutionResult {
                    run_id: self.store.run_id().to_string(),
                    requirements,
                    best,
                    best_fitness,
                    history,
                    termination: reason,
                    usage: account(&self.usages),
                });
            }

            let sel = select(&records, self.cfg.elite_count, self.cfg.population_size)
                .ok_or(EngineError::Selection { generation: t })?;
            let ids = |ix: &[usize]| ix.iter().map(|&i| records[i].id.clone()).collect::<Vec<_>>();
            let (elites, parents) = (ids(&sel.elites), ids(&sel.parents));
            self.store.append(
                t,
                EventBody::Selected {
                    members: records.clone(),
                    ranking: ids(&sel.ranking),
                    elites: elites.clone(),
                    parents: parents.clone(),
                },
            )?;
            history.push(GenerationRecord { generation: t, members: records, elites, parents, termination: None });

            let parent_refs: Vec<&Individual> = sel.parents.iter().map(|&i| &population[i]).collect();
            let offspring = self.offspring(instruction, &requirements, &parent_refs, t + 1, self.cfg.population_size - sel.elites.len())?;
            let mut next: Vec<Individual> = sel.elites.iter().map(|&i| population[i].clone()).collect();
            next.extend(offspring);
            population = next;
            t += 1;
        }
    }

    fn initialize(
        &mut self,
        instruction: &UserInstruction,
        requirements: &RequirementSet,
    ) -> Result<Vec<Individual>, EngineError> {
        for attempt in 0..=INIT_RETRIES {
            let ctx = CallContext::new(self.cfg.seed, 0, attempt, CallKind::Create);
            let created = agents::create_initial(
                self.agents.creator,
                instruction,
                requirements,
                self.cfg.population_size,
                &mut self.ids,
                &ctx,
            );
            self.flush_calls(0)?;
            let created = created.map_err(EngineError::Initialization)?;
            let mut population = Vec::with_capacity(created.len());
            for (solution, seq) in created {
                self.store.append(
                    0,
                    EventBody::IndividualCreated { solution: solution.clone(), created_seq: seq, attempt },
                )?;
                population.push(Individual::pending(solution, seq));
            }
            self.evaluate(&mut population, 0, requirements)?;
            if population.iter().any(|m| m.status != Status::RenderFailed) {
                return Ok(population);
            }
            log::warn!("generation 0 attempt {attempt}: every individual failed to render");
        }
        Err(EngineError::AllRenderFailed { attempts: INIT_RETRIES + 1 })
    }

    /// Renders and judges every pending member.
    fn evaluate(&mut self, members: &mut [Individual], t: u32, requirements: &RequirementSet) -> Result<(), EngineError> {
        let seed = self.cfg.seed;
        let (renderer, judge) = (self.renderer, self.agents.judge);
        let jobs: Vec<(usize, Solution, std::path::PathBuf)> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.status == Status::Pending)
            .map(|(i, m)| (i, m.solution.clone(), self.store.artifact_dir(t, m.id())))
            .collect();
        let outcomes: Vec<(usize, Outcome)> = jobs
            .into_par_iter()
            .map(|(i, solution, dir)| {
                let outcome = match renderer.render(&solution, &dir) {
                    Err(f) => Outcome::RenderFailed(f),
                    Ok(artifact) => {
                        let ctx = CallContext::new(seed, t, i as u32, CallKind::Judge);
                        let eval = judge
                            .judge(&artifact, requirements, &ctx)
                            .map_err(|e| e.to_string())
                            .and_then(|e| e.check(requirements).map(|_| e).map_err(|e| e.to_string()));
                        Outcome::Rendered(artifact, eval)
                    }
                };
                (i, outcome)
            })
            .collect();

        for (i, outcome) in outcomes {
            let id = members[i].id().to_string();
            match outcome {
                Outcome::RenderFailed(failure) => {
                    self.store.append(t, EventBody::RenderFailed { id, failure })?;
                    members[i].status = Status::RenderFailed;
                }
                Outcome::Rendered(artifact, eval) => {
                    self.store.append(t, EventBody::Rendered { id: id.clone(), artifact: artifact.clone() })?;
                    let judged = eval.and_then(|e| {
                        members[i].clone().evaluated(artifact.clone(), e).map_err(|e| e.to_string())
                    });
                    match judged {
                        Ok(ind) => {
                            let evaluation = ind.evaluation.clone().expect("evaluated");
                            let fitness = ind.fitness.expect("evaluated");
                            self.store.append(t, EventBody::Judged { id, evaluation, fitness })?;
                            members[i] = ind;
                        }
                        Err(error) => {
                            self.store.append(t, EventBody::EvalFailed { id, error })?;
                            members[i].artifact = Some(artifact);
                            members[i].status = Status::EvalFailed;
                        }
                    }
                }
            }
        }
        self.flush_calls(t)
    }

    /// `count` children for generation `t`, parents assigned round-robin.
    /// A failed mutation yields a copy of the parent under the new id.
    fn offspring(
        &mut self,
        instruction: &UserInstruction,
        requirements: &RequirementSet,
        parents: &[&Individual],
        t: u32,
        count: usize,
    ) -> Result<Vec<Individual>, EngineError> {
        let slots: Vec<(usize, &Individual, String, u64)> = (0..count)
            .map(|j| {
                let (id, seq) = self.ids.next();
                (j, parents[j % parents.len()], id, seq)
            })
            .collect();
        let (cfg, creator) = (self.cfg, self.agents.creator);
        let empty = FeedbackBundle::default();
        let children: Vec<(Solution, Option<String>)> = slots
            .par_iter()
            .map(|(j, parent, id, _)| {
                let ctx = CallContext::new(cfg.seed, t, *j as u32, CallKind::Mutate);
                let feedback = parent.evaluation.as_ref().map_or(&empty, |e| &e.feedback);
                let fitness = parent.fitness.unwrap_or(0.0);
                match agents::mutate(
                    creator,
                    instruction,
                    requirements,
                    &parent.solution,
                    fitness,
                    feedback,
                    cfg.feedback_mode,
                    id.clone(),
                    &ctx,
                ) {
                    Ok(child) => (child, None),
                    Err(e) => {
                        let clone = Solution {
                            id: id.clone(),
                            content: parent.solution.content.clone(),
                            lineage: Lineage { parent: Some(parent.id().to_string()), generation: t },
                        };
                        (clone, Some(e.to_string()))
                    }
                }
            })
            .collect();

        let mut out = Vec::with_capacity(count);
        for ((_, parent, _, seq), (child, fallback)) in slots.iter().zip(children) {
            if let Some(err) = &fallback {
                log::warn!("mutation of {} failed, cloning parent as {}: {err}", parent.id(), child.id);
            }
            self.store.append(
                t,
                EventBody::Mutated {
                    parent: parent.id().to_string(),
                    child: child.id.clone(),
                    mode: cfg.feedback_mode,
                    outcome: match fallback {
                        None => MutationOutcome::Mutated,
                        Some(error) => MutationOutcome::ParentClone { error },
                    },
                },
            )?;
            self.store.append(t, EventBody::IndividualCreated { solution: child.clone(), created_seq: *seq, attempt: 0 })?;
            out.push(Individual::pending(child, *seq));
        }
        self.flush_calls(t)?;
        Ok(out)
    }

    fn flush_calls(&mut self, t: u32) -> Result<(), EngineError> {
        let Some(ledger) = self.calls else { return Ok(()) };
        let mut calls = ledger.take();
        calls.sort_by(|a, b| a.request_id.cmp(&b.request_id));
        for call in calls {
            if let Some(u) = &call.usage {
                self.usages.push(u.clone());
            }
            self.store.append(t, EventBody::GatewayCall { call })?;
        }
        Ok(())
    }
}
