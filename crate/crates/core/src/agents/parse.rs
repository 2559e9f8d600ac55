//! Strict extraction of machine-readable blocks from agent replies.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;

use crate::domain::{
    validate_requirement_set, Evaluation, FeedbackBundle, Requirement, RequirementSet,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseDefect {
    MissingBlock(&'static str),
    MissingId(String),
    DuplicateId(String),
    UnknownId(String),
    NonBinary { id: String, verdict: String },
    Malformed(String),
}

impl fmt::Display for ParseDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseDefect::MissingBlock(tag) => write!(f, "no ```{tag} block found"),
            ParseDefect::MissingId(id) => write!(f, "no verdict for requirement {id}"),
            ParseDefect::DuplicateId(id) => write!(f, "more than one verdict for requirement {id}"),
            ParseDefect::UnknownId(id) => write!(f, "verdict for unknown requirement {id}"),
            ParseDefect::NonBinary { id, verdict } => {
                write!(f, "verdict for {id} must be 0 or 1, got {verdict:?}")
            }
            ParseDefect::Malformed(msg) => write!(f, "malformed reply: {msg}"),
        }
    }
}

pub fn describe_defects(defects: &[ParseDefect]) -> String {
    defects
        .iter()
        .map(|d| format!("- {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// All fenced code blocks as `(info tag, body)` pairs, in order. Unclosed
/// fences are dropped.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match open.take() {
            None => {
                if let Some(tag) = trimmed.strip_prefix("```") {
                    open = Some((tag.trim().to_lowercase(), Vec::new()));
                }
            }
            Some((tag, mut body)) => {
                if trimmed.trim_end() == "```" {
                    blocks.push((tag, body.join("\n")));
                } else {
                    body.push(line);
                    open = Some((tag, body));
                }
            }
        }
    }
    blocks
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawRequirement {
    Full {
        id: String,
        assertion: String,
        #[serde(default)]
        prerequisites: Vec<String>,
    },
    Bare(String),
}

/// Decomposer reply → validated requirement set. Accepts a `json` (or
/// `requirements`) fenced block holding an array; bare strings get ids r1..rk.
pub fn parse_requirements_reply(raw: &str) -> Result<RequirementSet, Vec<ParseDefect>> {
    let body = fenced_blocks(raw)
        .into_iter()
        .find(|(tag, _)| tag == "json" || tag == "requirements")
        .map(|(_, b)| b)
        .or_else(|| {
            let t = raw.trim();
            t.starts_with('[').then(|| t.to_string())
        })
        .ok_or_else(|| vec![ParseDefect::MissingBlock("json")])?;
    let items: Vec<RawRequirement> = serde_json::from_str(&body)
        .map_err(|e| vec![ParseDefect::Malformed(format!("requirement array: {e}"))])?;
    let reqs = items
        .into_iter()
        .enumerate()
        .map(|(i, item)| match item {
            RawRequirement::Full { id, assertion, prerequisites } => Requirement {
                id,
                assertion,
                prerequisites,
            },
            RawRequirement::Bare(assertion) => Requirement::new(format!("r{}", i + 1), assertion),
        })
        .collect();
    validate_requirement_set(reqs).map_err(|e| vec![ParseDefect::Malformed(e.to_string())])
}

/// Bodies of every block tagged `solution` (or with one of `extra_tags`).
pub fn parse_solution_blocks(raw: &str, extra_tags: &[&str]) -> Vec<String> {
    fenced_blocks(raw)
        .into_iter()
        .filter(|(tag, _)| tag == "solution" || extra_tags.iter().any(|t| t.eq_ignore_ascii_case(tag)))
        .map(|(_, body)| body)
        .filter(|b| !b.trim().is_empty())
        .collect()
}

/// Judge reply → evaluation. The ```verdicts block must carry exactly one
/// `id | 0|1 | note` line per requirement; prose around it is ignored.
/// Failed requirements without a note get one naming the assertion.
pub fn parse_judge_reply(raw: &str, requirements: &RequirementSet) -> Result<Evaluation, Vec<ParseDefect>> {
    let blocks = fenced_blocks(raw);
    let verdicts = blocks
        .iter()
        .find(|(tag, _)| tag == "verdicts")
        .map(|(_, b)| b.as_str())
        .ok_or_else(|| vec![ParseDefect::MissingBlock("verdicts")])?;

    let mut defects = Vec::new();
    let mut seen: BTreeMap<String, (u8, String)> = BTreeMap::new();
    for line in verdicts.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let parts: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
        if parts.len() < 2 {
            defects.push(ParseDefect::Malformed(format!("line {line:?} is not `id | verdict | note`")));
            continue;
        }
        let id = parts[0].trim_matches('`').to_string();
        let note = parts.get(2).copied().unwrap_or("").to_string();
        if requirements.index_of(&id).is_none() {
            defects.push(ParseDefect::UnknownId(id));
            continue;
        }
        let verdict = match parts[1] {
            "0" => 0,
            "1" => 1,
            other => {
                defects.push(ParseDefect::NonBinary { id, verdict: other.to_string() });
                continue;
            }
        };
        if seen.contains_key(&id) {
            if !defects.contains(&ParseDefect::DuplicateId(id.clone())) {
                defects.push(ParseDefect::DuplicateId(id));
            }
            continue;
        }
        seen.insert(id, (verdict, note));
    }
    for req in requirements {
        let flagged = defects.iter().any(|d| matches!(d, ParseDefect::NonBinary { id, .. } if *id == req.id));
        if !seen.contains_key(&req.id) && !flagged {
            defects.push(ParseDefect::MissingId(req.id.clone()));
        }
    }
    if !defects.is_empty() {
        return Err(defects);
    }

    let mut feedback = FeedbackBundle::default();
    let scores = requirements
        .iter()
        .map(|req| {
            let (v, note) = &seen[&req.id];
            if *v == 0 {
                let note = if note.is_empty() {
                    format!("not satisfied: {}", req.assertion)
                } else {
                    note.clone()
                };
                feedback.notes.insert(req.id.clone(), note);
            }
            *v
        })
        .collect();
    feedback.suggestions = blocks
        .iter()
        .filter(|(tag, _)| tag == "suggestions")
        .flat_map(|(_, b)| b.lines())
        .map(|l| l.trim().trim_start_matches("- ").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    Ok(Evaluation { scores, feedback, meta: None })
}
