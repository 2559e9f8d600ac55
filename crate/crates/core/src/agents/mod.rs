//! The three agent roles (decomposer, creator, judge) as pluggable traits,
//! plus LLM-backed implementations driven by prompt templates.

mod llm;
mod parse;
mod prompts;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Artifact, DomainError, Evaluation, FeedbackBundle, Lineage, RequirementSet, Solution,
    SolutionContent, UserInstruction,
};
use crate::gateway::GatewayError;

pub use llm::{LlmCreator, LlmDecomposer, LlmJudge, SolutionKind};
pub use parse::{
    fenced_blocks, parse_judge_reply, parse_requirements_reply, parse_solution_blocks, ParseDefect,
};
pub use prompts::{PromptTemplates, TemplateId};
pub use scripted::ScriptedBackend;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("initialization produced {got} of {wanted} solutions")]
    Initialization { wanted: usize, got: usize },

    #[error("mutation failed: {0}")]
    Mutation(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("unsupported artifact: {0}")]
    UnsupportedArtifact(String),

    #[error("invalid agent config: {0}")]
    Config(String),

    #[error("template {0}: {1}")]
    Template(String, String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Decomposer,
    Creator,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub role: AgentRole,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
}

impl AgentConfig {
    /// Role defaults: creator at temperature 0.7, judge and decomposer at 0.0.
    pub fn default_for(role: AgentRole) -> Self {
        match role {
            AgentRole::Decomposer => Self {
                role,
                model: "gpt-4o".into(),
                temperature: 0.0,
                max_tokens: 2048,
                template: "decompose".into(),
            },
            AgentRole::Creator => Self {
                role,
                model: "gpt-4.1-nano".into(),
                temperature: 0.7,
                max_tokens: 4096,
                template: "create".into(),
            },
            AgentRole::Judge => Self {
                role,
                model: "gpt-4o".into(),
                temperature: 0.0,
                max_tokens: 2048,
                template: "judge".into(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.model.trim().is_empty() {
            return Err(AgentError::Config("model name is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AgentError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(AgentError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Decompose,
    Create,
    Judge,
    Mutate,
}

impl CallKind {
    fn tag(self) -> u64 {
        match self {
            CallKind::Decompose => 1,
            CallKind::Create => 2,
            CallKind::Judge => 3,
            CallKind::Mutate => 4,
        }
    }
}

/// Identifies one agent call within a run. Stochastic agents derive their
/// random stream from it so scheduling order never changes results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallContext {
    pub run_seed: u64,
    pub generation: u32,
    pub index: u32,
    pub kind: CallKind,
}

impl CallContext {
    pub fn new(run_seed: u64, generation: u32, index: u32, kind: CallKind) -> Self {
        Self { run_seed, generation, index, kind }
    }

    /// A 64-bit stream seed mixing every field through SplitMix64.
    pub fn stream_seed(&self) -> u64 {
        let mut h = splitmix64(self.run_seed);
        h = splitmix64(h ^ u64::from(self.generation));
        h = splitmix64(h ^ u64::from(self.index));
        splitmix64(h ^ self.kind.tag())
    }

    pub fn request_id(&self, attempt: u32) -> String {
        format!(
            "{:?}-g{}-i{}-a{}",
            self.kind, self.generation, self.index, attempt
        )
        .to_lowercase()
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    Full,
    /// Only the scalar fitness reaches the creator.
    ScoreOnly,
}

/// What the creator is told about its parent.
#[derive(Debug, Clone, Copy)]
pub enum Guidance<'a> {
    Feedback(&'a FeedbackBundle),
    ScoreOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct MutationRequest<'a> {
    pub instruction: &'a UserInstruction,
    pub requirements: &'a RequirementSet,
    pub parent: &'a Solution,
    pub parent_fitness: f64,
    pub guidance: Guidance<'a>,
}

pub trait Decomposer: Send + Sync {
    fn decompose(&self, instruction: &UserInstruction) -> Result<RequirementSet, AgentError>;
}

pub trait Creator: Send + Sync {
    /// Proposes `count` initial solution bodies.
    fn create_initial(
        &self,
        instruction: &UserInstruction,
        requirements: &RequirementSet,
        count: usize,
        ctx: &CallContext,
    ) -> Result<Vec<SolutionContent>, AgentError>;

    fn mutate(
        &self,
        request: &MutationRequest<'_>,
        ctx: &CallContext,
    ) -> Result<SolutionContent, AgentError>;
}

pub trait Judge: Send + Sync {
    fn judge(
        &self,
        artifact: &Artifact,
        requirements: &RequirementSet,
        ctx: &CallContext,
    ) -> Result<Evaluation, AgentError>;
}

/// Hands out run-unique solution ids; the counter doubles as creation order.
#[derive(Debug, Default, Clone)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&mut self) -> (String, u64) {
        let n = self.next;
        self.next += 1;
        (format!("s{n:04}"), n)
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}

/// Initial generation: exactly `count` generation-0 solutions with fresh ids.
pub fn create_initial(
    creator: &dyn Creator,
    instruction: &UserInstruction,
    requirements: &RequirementSet,
    count: usize,
    ids: &mut IdAllocator,
    ctx: &CallContext,
) -> Result<Vec<(Solution, u64)>, AgentError> {
    crate::domain::check_population_size(count)?;
    let bodies = creator.create_initial(instruction, requirements, count, ctx)?;
    let usable: Vec<SolutionContent> = bodies
        .into_iter()
        .filter(|b| !b.body().is_empty())
        .take(count)
        .collect();
    if usable.len() < count {
        return Err(AgentError::Initialization { wanted: count, got: usable.len() });
    }
    usable
        .into_iter()
        .map(|content| {
            let (id, seq) = ids.next();
            let sol = Solution::new(id, content, Lineage { parent: None, generation: 0 })?;
            Ok((sol, seq))
        })
        .collect()
}

/// One directed mutation of `parent`. The child id is chosen by the caller.
#[allow(clippy::too_many_arguments)]
pub fn mutate(
    creator: &dyn Creator,
    instruction: &UserInstruction,
    requirements: &RequirementSet,
    parent: &Solution,
    parent_fitness: f64,
    feedback: &FeedbackBundle,
    mode: FeedbackMode,
    child_id: String,
    ctx: &CallContext,
) -> Result<Solution, AgentError> {
    let guidance = match mode {
        FeedbackMode::Full => Guidance::Feedback(feedback),
        FeedbackMode::ScoreOnly => Guidance::ScoreOnly,
    };
    let request = MutationRequest {
        instruction,
        requirements,
        parent,
        parent_fitness,
        guidance,
    };
    let content = creator.mutate(&request, ctx)?;
    if content.body().is_empty() {
        return Err(AgentError::Mutation("creator returned an empty body".into()));
    }
    Ok(Solution::new(
        child_id,
        content,
        Lineage {
            parent: Some(parent.id.clone()),
            generation: parent.lineage.generation + 1,
        },
    )?)
}
