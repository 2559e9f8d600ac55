use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    default_stability_cases, stability_experiment, NoiseModel, StabilityScores,
    RulePredicate, RuleSet, SimError, SimJudge, SyntheticCreator,
};
use crate::agents::{AgentError, Decomposer};
use crate::domain::{RequirementSet, UserInstruction};

const TOY: &str = r#"
name = "toy"
instruction = """
Write a short release note for version 1.2 of the tool. Give it a title, a \
summary and a closing conclusion, state that 42 issues were fixed in total, \
keep it between 30 and 600 characters, and leave no placeholders or filler \
text behind."""
seed = 42
trials = 100

[creator]
p_fix = 0.6
p_init = 0.5
base_text = "Release notes draft."

[[rules]]
id = "r1"
kind = "contains"
needle = "Title:"

[[rules]]
id = "r2"
kind = "contains"
needle = "Summary:"

[[rules]]
id = "r3"
kind = "not_contains"
needle = "TODO"

[[rules]]
id = "r4"
kind = "regex_match"
pattern = 'version \d+\.\d+'
witness = "version 1.2"

[[rules]]
id = "r5"
kind = "length_between"
min = 30
max = 600

[[rules]]
id = "r6"
kind = "numeric_equals"
label = "total"
value = 42

[[rules]]
id = "r7"
kind = "contains"
needle = "Conclusion."

[[rules]]
id = "r8"
kind = "not_contains"
needle = "lorem"
"#;

const STABILITY: &str = r#"
name = "stability"
seed = 42

[noise]
eps_sat = 0.02
eps_unsat = 0.15

[stability]
cases = 15
k = 10
repeats = 5
"#;

const STABILITY_ZERO_NOISE: &str = r#"
name = "stability-zero-noise"
seed = 42

[noise]
eps_sat = 0.0
eps_unsat = 0.0

[stability]
cases = 15
k = 10
repeats = 5
"#;

pub const BUILTIN_SCENARIOS: [&str; 3] = ["toy", "stability", "stability-zero-noise"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreatorParams {
    #[serde(default = "default_p_fix")]
    pub p_fix: f64,
    #[serde(default = "default_p_init")]
    pub p_init: f64,
    #[serde(default = "default_base_text")]
    pub base_text: String,
}

fn default_p_fix() -> f64 {
    0.6
}

fn default_p_init() -> f64 {
    0.5
}

fn default_base_text() -> String {
    "Draft.".into()
}

impl Default for CreatorParams {
    fn default() -> Self {
        Self { p_fix: default_p_fix(), p_init: default_p_init(), base_text: default_base_text() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub cases: usize,
    pub k: usize,
    pub repeats: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self { cases: 15, k: 10, repeats: 5 }
    }
}

/// A simulation campaign: rules, optional judge noise, creator behaviour
/// and trial counts. Without `[noise]` the judge is exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub rules: Vec<RulePredicate>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub creator: CreatorParams,
    #[serde(default)]
    pub stability: Option<StabilityParams>,
}

fn default_seed() -> u64 {
    42
}

fn default_trials() -> usize {
    100
}

impl Scenario {
    pub fn builtin(name: &str) -> Option<Self> {
        let src = match name {
            "toy" => TOY,
            "stability" => STABILITY,
            "stability-zero-noise" => STABILITY_ZERO_NOISE,
            _ => return None,
        };
        Some(Self::parse(src).expect("builtin scenario parses"))
    }

    pub fn parse(src: &str) -> Result<Self, SimError> {
        let sc: Scenario = toml::from_str(src).map_err(|e| SimError::Scenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// A builtin name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self, SimError> {
        if let Some(sc) = Self::builtin(name_or_path) {
            return Ok(sc);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(SimError::Scenario(format!(
                "{name_or_path} is neither a builtin ({}) nor a file",
                BUILTIN_SCENARIOS.join(", ")
            )));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), SimError> {
        if let Some(nm) = &self.noise {
            nm.validate()?;
        }
        if self.rules.is_empty() && self.stability.is_none() {
            return Err(SimError::Scenario(format!("{}: no rules and no stability section", self.name)));
        }
        if !self.rules.is_empty() {
            self.rule_set()?;
            self.creator()?;
        }
        Ok(())
    }

    pub fn rule_set(&self) -> Result<RuleSet, SimError> {
        if self.rules.is_empty() {
            return Err(SimError::Scenario(format!("{} defines no rules", self.name)));
        }
        RuleSet::new(self.rules.clone())
    }

    pub fn instruction(&self) -> Result<UserInstruction, SimError> {
        let text = self.instruction.clone().unwrap_or_else(|| {
            format!("Produce a text satisfying the {} scenario rules.", self.name)
        });
        Ok(UserInstruction::new(self.name.clone(), text)?)
    }

    fn creator(&self) -> Result<SyntheticCreator, SimError> {
        SyntheticCreator::new(self.rule_set()?, self.creator.p_fix, self.creator.p_init, self.creator.base_text.clone())
    }

    pub fn agents(&self) -> Result<SimAgents, SimError> {
        let rules = self.rule_set()?;
        Ok(SimAgents {
            decomposer: SimDecomposer { requirements: rules.requirement_set().clone() },
            creator: self.creator()?,
            judge: SimJudge::new(rules, self.noise)?,
        })
    }

    /// Runs the stability section; exact judging when `[noise]` is absent.
    pub fn run_stability(&self) -> Result<StabilityScores, SimError> {
        let params = self
            .stability
            .ok_or_else(|| SimError::Scenario(format!("{} has no stability section", self.name)))?;
        let cases = default_stability_cases(params.cases, params.k)?;
        stability_experiment(&cases, &self.noise.unwrap_or_else(NoiseModel::zero), params.repeats, self.seed)
    }
}

/// Decomposer stand-in returning the rule set's requirements verbatim.
#[derive(Debug, Clone)]
pub struct SimDecomposer {
    requirements: RequirementSet,
}

impl Decomposer for SimDecomposer {
    fn decompose(&self, _instruction: &UserInstruction) -> Result<RequirementSet, AgentError> {
        Ok(self.requirements.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SimAgents {
    pub decomposer: SimDecomposer,
    pub creator: SyntheticCreator,
    pub judge: SimJudge,
}
