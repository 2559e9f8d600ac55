use regex::Regex;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::domain::{validate_requirement_set, Requirement, RequirementSet};

const FILLER: char = '~';
/// How far past `max` a deliberate length violation goes, so later small
/// removals do not silently repair it.
const OVERSHOOT: usize = 50;

/// Lengths are counted in characters, not bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateKind {
    Contains { needle: String },
    NotContains { needle: String },
    RegexMatch {
        pattern: String,
        /// Text the synthetic creator appends to satisfy the pattern.
        #[serde(default)]
        witness: Option<String>,
    },
    LengthBetween { min: usize, max: usize },
    /// A line such as `total = 42` or `total: 42`.
    NumericEquals { label: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePredicate {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assertion: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prerequisites: Vec<String>,
    #[serde(flatten)]
    pub kind: PredicateKind,
}

impl RulePredicate {
    pub fn new(id: impl Into<String>, kind: PredicateKind) -> Self {
        Self {
            id: id.into(),
            assertion: None,
            prerequisites: Vec::new(),
            kind,
        }
    }

    pub fn contains(id: impl Into<String>, needle: impl Into<String>) -> Self {
        Self::new(id, PredicateKind::Contains { needle: needle.into() })
    }

    pub fn not_contains(id: impl Into<String>, needle: impl Into<String>) -> Self {
        Self::new(id, PredicateKind::NotContains { needle: needle.into() })
    }

    pub fn length_between(id: impl Into<String>, min: usize, max: usize) -> Self {
        Self::new(id, PredicateKind::LengthBetween { min, max })
    }

    /// `contains "moon"`, `length_between [0, 10]`, ...
    pub fn expectation(&self) -> String {
        match &self.kind {
            PredicateKind::Contains { needle } => format!("contains {needle:?}"),
            PredicateKind::NotContains { needle } => format!("not_contains {needle:?}"),
            PredicateKind::RegexMatch { pattern, .. } => format!("regex_match /{pattern}/"),
            PredicateKind::LengthBetween { min, max } => format!("length_between [{min}, {max}]"),
            PredicateKind::NumericEquals { label, value } => {
                format!("numeric_equals {label} = {value}")
            }
        }
    }

    pub fn violation_note(&self) -> String {
        format!("{} violated", self.expectation())
    }

    fn assertion_text(&self) -> String {
        self.assertion.clone().unwrap_or_else(|| match &self.kind {
            PredicateKind::Contains { needle } => format!("The text contains {needle:?}."),
            PredicateKind::NotContains { needle } => {
                format!("The text does not contain {needle:?}.")
            }
            PredicateKind::RegexMatch { pattern, .. } => {
                format!("The text matches the pattern /{pattern}/.")
            }
            PredicateKind::LengthBetween { min, max } => {
                format!("The text is between {min} and {max} characters long.")
            }
            PredicateKind::NumericEquals { label, value } => {
                format!("The text states {label} = {value}.")
            }
        })
    }
}

/// Validated predicates with their regexes compiled, one per requirement.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<RulePredicate>,
    compiled: Vec<Option<Regex>>,
    requirements: RequirementSet,
}

impl RuleSet {
    pub fn new(rules: Vec<RulePredicate>) -> Result<Self, SimError> {
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in &rules {
            compiled.push(compile(rule)?);
        }
        let requirements = validate_requirement_set(
            rules
                .iter()
                .map(|r| Requirement::new(&r.id, r.assertion_text()).requires(r.prerequisites.clone()))
                .collect(),
        )?;
        let rules = rules
            .into_iter()
            .map(|mut r| {
                r.id = r.id.trim().to_string();
                r
            })
            .collect();
        Ok(Self { rules, compiled, requirements })
    }

    pub fn rules(&self) -> &[RulePredicate] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn requirement_set(&self) -> &RequirementSet {
        &self.requirements
    }

    /// Whether the rules cover exactly the given requirement ids, in order.
    pub fn covers(&self, requirements: &RequirementSet) -> bool {
        requirements.k() == self.rules.len()
            && requirements.iter().zip(&self.rules).all(|(q, r)| q.id == r.id)
    }

    pub fn holds(&self, index: usize, text: &str) -> bool {
        let re = self.compiled[index].as_ref();
        match &self.rules[index].kind {
            PredicateKind::Contains { needle } => text.contains(needle.as_str()),
            PredicateKind::NotContains { needle } => !text.contains(needle.as_str()),
            PredicateKind::RegexMatch { .. } => re.is_some_and(|re| re.is_match(text)),
            PredicateKind::LengthBetween { min, max } => {
                let n = text.chars().count();
                *min <= n && n <= *max
            }
            PredicateKind::NumericEquals { value, .. } => re
                .and_then(|re| re.captures(text))
                .and_then(|c| c[1].parse::<f64>().ok())
                .is_some_and(|v| v == *value),
        }
    }

    pub fn scores(&self, text: &str) -> Vec<u8> {
        (0..self.rules.len()).map(|i| u8::from(self.holds(i, text))).collect()
    }

    /// Edits `text` so that rule `index` holds. Returns false when the rule
    /// cannot be satisfied by the available edits.
    pub fn repair(&self, index: usize, text: &mut String) -> bool {
        if self.holds(index, text) {
            return true;
        }
        let re = self.compiled[index].as_ref();
        match &self.rules[index].kind {
            PredicateKind::Contains { needle } => push_line(text, needle),
            PredicateKind::NotContains { needle } => *text = text.replace(needle.as_str(), ""),
            PredicateKind::RegexMatch { witness, .. } => match witness {
                Some(w) => push_line(text, w),
                None => return false,
            },
            PredicateKind::LengthBetween { min, max } => {
                strip_filler(text);
                let n = text.chars().count();
                if n < *min {
                    let sep = usize::from(!text.is_empty());
                    let pad = min.saturating_sub(n + sep).max(1);
                    push_line(text, &FILLER.to_string().repeat(pad));
                } else if n > *max {
                    *text = text.chars().take(*max).collect();
                }
            }
            PredicateKind::NumericEquals { label, value } => {
                if let Some(re) = re {
                    remove_matching_lines(text, re);
                }
                push_line(text, &format!("{label} = {value}"));
            }
        }
        self.holds(index, text)
    }

    /// Edits `text` so that rule `index` no longer holds. Returns false when
    /// the rule cannot be broken by the available edits.
    pub fn violate(&self, index: usize, text: &mut String) -> bool {
        if !self.holds(index, text) {
            return true;
        }
        let re = self.compiled[index].as_ref();
        match &self.rules[index].kind {
            PredicateKind::Contains { needle } => *text = text.replace(needle.as_str(), ""),
            PredicateKind::NotContains { needle } => push_line(text, needle),
            PredicateKind::RegexMatch { .. } => {
                if let Some(re) = re {
                    *text = re.replace_all(text, "").into_owned();
                }
            }
            PredicateKind::LengthBetween { min, max } => {
                let n = text.chars().count();
                if *max < (1 << 20) {
                    let sep = usize::from(!text.is_empty());
                    push_line(text, &FILLER.to_string().repeat((max + OVERSHOOT).saturating_sub(n + sep).max(1)));
                } else if *min > 0 {
                    *text = text.chars().take(min - 1).collect();
                }
            }
            PredicateKind::NumericEquals { label, value } => {
                if let Some(re) = re {
                    remove_matching_lines(text, re);
                }
                push_line(text, &format!("{label} = {}", value + 1.0));
            }
        }
        !self.holds(index, text)
    }
}

fn compile(rule: &RulePredicate) -> Result<Option<Regex>, SimError> {
    let invalid = |reason: String| SimError::InvalidRule { id: rule.id.clone(), reason };
    match &rule.kind {
        PredicateKind::Contains { needle } | PredicateKind::NotContains { needle } => {
            if needle.is_empty() {
                return Err(invalid("empty needle".into()));
            }
            Ok(None)
        }
        PredicateKind::RegexMatch { pattern, witness } => {
            let re = Regex::new(pattern).map_err(|e| invalid(e.to_string()))?;
            if let Some(w) = witness {
                if !re.is_match(w) {
                    return Err(invalid(format!("witness {w:?} does not match the pattern")));
                }
            }
            Ok(Some(re))
        }
        PredicateKind::LengthBetween { min, max } => {
            if min > max {
                return Err(invalid(format!("min {min} exceeds max {max}")));
            }
            Ok(None)
        }
        PredicateKind::NumericEquals { label, value } => {
            if label.trim().is_empty() {
                return Err(invalid("empty label".into()));
            }
            if !value.is_finite() {
                return Err(invalid("value is not finite".into()));
            }
            let pattern = format!(
                r"(?m)(?:^|\W){}\s*[=:]\s*(-?\d+(?:\.\d+)?)",
                regex::escape(label.trim())
            );
            Ok(Some(Regex::new(&pattern).map_err(|e| invalid(e.to_string()))?))
        }
    }
}

fn push_line(text: &mut String, line: &str) {
    if !text.is_empty() {
        text.push('\n');
    }
    text.push_str(line);
}

fn strip_filler(text: &mut String) {
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| l.is_empty() || !l.chars().all(|c| c == FILLER))
        .collect();
    *text = kept.join("\n");
}

fn remove_matching_lines(text: &mut String, re: &Regex) {
    let kept: Vec<&str> = text.lines().filter(|l| !re.is_match(l)).collect();
    *text = kept.join("\n");
}
