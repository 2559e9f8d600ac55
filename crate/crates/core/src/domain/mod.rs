//! Domain types shared across the engine: instructions, requirement sets,
//! solutions, artifacts, evaluations and populations.
//!
//! Every type here is an immutable value once constructed and serializes to
//! canonical JSON (see [`canonical_json`]).

mod fitness;
mod requirements;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fitness::{aggregate_fitness, requirements_met, MetMode};
pub use requirements::{validate_requirement_set, Requirement, RequirementSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty requirement set")]
    EmptyRequirementSet,

    #[error("duplicate requirement ids: {0:?}")]
    DuplicateIds(Vec<String>),

    #[error("requirement {id} has an empty assertion")]
    EmptyAssertion { id: String },

    #[error("requirement {id} references unknown prerequisites {missing:?}")]
    DanglingPrerequisite { id: String, missing: Vec<String> },

    #[error("prerequisite cycle through {0:?}")]
    Cycle(Vec<String>),

    #[error("score vector has length {got}, requirement set has {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("population size {0} must be even and at least 2")]
    PopulationSize(usize),
}

/// Serializes any value as JSON with lexicographically sorted object keys and
/// shortest round-trip float formatting.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Map is a BTreeMap (no `preserve_order`), so going through
    // Value sorts every object's keys.
    let value = serde_json::to_value(value).expect("domain types always serialize");
    serde_json::to_string(&value).expect("json value always serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInstruction {
    pub id: String,
    pub text: String,
}

impl UserInstruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::InvalidInput("instruction text is empty".into()));
        }
        Ok(Self { id: id.into(), text })
    }
}

/// Payload of a candidate solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SolutionContent {
    Text { body: String },
    Code { body: String, runtime: String },
}

impl SolutionContent {
    pub fn text(body: impl Into<String>) -> Self {
        SolutionContent::Text { body: body.into() }
    }

    pub fn body(&self) -> &str {
        match self {
            SolutionContent::Text { body } | SolutionContent::Code { body, .. } => body,
        }
    }

    /// Same kind (and runtime) with a new body.
    pub fn with_body(&self, body: String) -> Self {
        match self {
            SolutionContent::Text { .. } => SolutionContent::Text { body },
            SolutionContent::Code { runtime, .. } => SolutionContent::Code {
                body,
                runtime: runtime.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: Option<String>,
    pub generation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub id: String,
    pub content: SolutionContent,
    pub lineage: Lineage,
}

impl Solution {
    pub fn new(
        id: impl Into<String>,
        content: SolutionContent,
        lineage: Lineage,
    ) -> Result<Self, DomainError> {
        if content.body().is_empty() {
            return Err(DomainError::InvalidInput("solution content is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            content,
            lineage,
        })
    }
}

/// Stdout/stderr excerpts captured while rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedOutput {
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Text {
        body: String,
    },
    File {
        path: PathBuf,
        digest: String,
        #[serde(default)]
        captured: CapturedOutput,
    },
}

impl Artifact {
    pub fn text(body: impl Into<String>) -> Self {
        Artifact::Text { body: body.into() }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Artifact::Text { body } => Some(body),
            Artifact::File { .. } => None,
        }
    }
}

/// Per-requirement deficiency notes plus free-form overall suggestions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub notes: BTreeMap<String, String>,
    pub suggestions: Vec<String>,
}

impl FeedbackBundle {
    pub fn is_empty(&self) -> bool {
        self.notes.is_empty() && self.suggestions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JudgeMeta {
    pub judge: String,
    pub latency_secs: Option<f64>,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scores: Vec<u8>,
    pub feedback: FeedbackBundle,
    pub meta: Option<JudgeMeta>,
}

impl Evaluation {
    /// Checks the evaluation against the requirement set it claims to score.
    pub fn check(&self, requirements: &RequirementSet) -> Result<(), DomainError> {
        if self.scores.len() != requirements.k() {
            return Err(DomainError::LengthMismatch {
                expected: requirements.k(),
                got: self.scores.len(),
            });
        }
        if let Some(bad) = self.scores.iter().find(|&&v| v > 1) {
            return Err(DomainError::InvalidInput(format!("non-binary score {bad}")));
        }
        for id in self.feedback.notes.keys() {
            if requirements.index_of(id).is_none() {
                return Err(DomainError::InvalidInput(format!(
                    "feedback keyed by unknown requirement {id}"
                )));
            }
        }
        for (req, &v) in requirements.iter().zip(&self.scores) {
            if v == 0 && !self.feedback.notes.contains_key(&req.id) {
                return Err(DomainError::InvalidInput(format!(
                    "failed requirement {} has no feedback",
                    req.id
                )));
            }
        }
        Ok(())
    }

    pub fn fitness(&self) -> Result<f64, DomainError> {
        aggregate_fitness(&self.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    RenderFailed,
    EvalFailed,
    Evaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub solution: Solution,
    /// Global creation order within a run; earlier wins ranking ties.
    pub created_seq: u64,
    pub artifact: Option<Artifact>,
    pub evaluation: Option<Evaluation>,
    pub fitness: Option<f64>,
    pub status: Status,
}

impl Individual {
    pub fn pending(solution: Solution, created_seq: u64) -> Self {
        Self {
            solution,
            created_seq,
            artifact: None,
            evaluation: None,
            fitness: None,
            status: Status::Pending,
        }
    }

    pub fn id(&self) -> &str {
        &self.solution.id
    }

    /// Marks the individual evaluated; fitness is always derived from the scores.
    pub fn evaluated(mut self, artifact: Artifact, evaluation: Evaluation) -> Result<Self, DomainError> {
        let fitness = evaluation.fitness()?;
        self.artifact = Some(artifact);
        self.evaluation = Some(evaluation);
        self.fitness = Some(fitness);
        self.status = Status::Evaluated;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: u32,
    pub members: Vec<Individual>,
}

impl Population {
    pub fn new(generation: u32, members: Vec<Individual>) -> Result<Self, DomainError> {
        check_population_size(members.len())?;
        Ok(Self { generation, members })
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.members
            .iter()
            .filter_map(|m| m.fitness)
            .fold(None, |acc, f| Some(acc.map_or(f, |a: f64| a.max(f))))
    }
}

pub fn check_population_size(n: usize) -> Result<(), DomainError> {
    if n < 2 || n % 2 != 0 {
        return Err(DomainError::PopulationSize(n));
    }
    Ok(())
}
