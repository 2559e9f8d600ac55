use std::path::{Path, PathBuf};

use crate::domain::{Artifact, FeedbackBundle, RequirementSet};

use super::AgentError;

pub type TemplateId = str;

const DECOMPOSE: &str = "\
You turn a user instruction into a checklist of independently verifiable requirements.

Instruction:
{instruction}

Write each requirement as one yes/no question about the final artifact. Reply with a
fenced ```json block holding an array of objects with fields \"id\" (r1, r2, ...),
\"assertion\" and optional \"prerequisites\" (ids of requirements this one depends on).
Keep the order stable; it is significant.
";

const CREATE: &str = "\
Instruction:
{instruction}

The result will be checked against these requirements:
{requirements}

Write {count} different candidate solutions. Put each one in its own fenced block
opened with ```solution and closed with ```.
";

const MUTATE: &str = "\
Instruction:
{instruction}

Requirements:
{requirements}

Current solution (fitness {fitness}):
```solution
{solution}
```

A reviewer reported these deficiencies:
{feedback}

Revise the solution to fix the deficiencies without breaking what already works.
Reply with the complete revised solution in one ```solution block.
";

const MUTATE_SCORE_ONLY: &str = "\
Instruction:
{instruction}

Requirements:
{requirements}

Current solution (fitness {fitness}):
```solution
{solution}
```

Improve the solution so it satisfies more of the requirements.
Reply with the complete revised solution in one ```solution block.
";

const JUDGE: &str = "\
You are checking an artifact against a list of requirements.

Requirements:
{requirements}

Artifact:
{artifact}

For every requirement decide 1 (satisfied) or 0 (not satisfied). Reply with a fenced
```verdicts block containing exactly one line per requirement in the form
`id | 0 or 1 | note`, where the note explains what is missing. You may add a
```suggestions block with one improvement suggestion per line.
";

const REPAIR: &str = "\
Your previous reply could not be used:
{errors}

Reply again using exactly the required format.
";

/// Prompt templates with named placeholders. A template directory, when set,
/// overrides built-ins by file name (`<id>.txt`).
#[derive(Debug, Clone, Default)]
pub struct PromptTemplates {
    dir: Option<PathBuf>,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn load(&self, id: &TemplateId) -> Result<String, AgentError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                return std::fs::read_to_string(&path)
                    .map_err(|e| AgentError::Template(id.to_string(), e.to_string()));
            }
        }
        builtin(id)
            .map(str::to_string)
            .ok_or_else(|| AgentError::Template(id.to_string(), "no such template".into()))
    }
}

fn builtin(id: &str) -> Option<&'static str> {
    Some(match id {
        "decompose" => DECOMPOSE,
        "create" => CREATE,
        "mutate" => MUTATE,
        "mutate_score_only" => MUTATE_SCORE_ONLY,
        "judge" => JUDGE,
        "repair" => REPAIR,
        _ => return None,
    })
}

/// Single-pass substitution of `{name}` placeholders. Inserted values are not
/// rescanned, and braces that name no supplied value are left untouched.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn format_requirements(requirements: &RequirementSet) -> String {
    requirements
        .iter()
        .map(|r| {
            if r.prerequisites.is_empty() {
                format!("{}: {}", r.id, r.assertion)
            } else {
                format!("{}: {} (requires {})", r.id, r.assertion, r.prerequisites.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_feedback(feedback: &FeedbackBundle) -> String {
    let mut lines: Vec<String> = feedback
        .notes
        .iter()
        .map(|(id, note)| format!("- {id}: {note}"))
        .collect();
    if !feedback.suggestions.is_empty() {
        lines.push("Suggestions:".into());
        lines.extend(feedback.suggestions.iter().map(|s| format!("- {s}")));
    }
    if lines.is_empty() {
        lines.push("(none reported)".into());
    }
    lines.join("\n")
}

pub fn format_artifact(artifact: &Artifact) -> String {
    match artifact {
        Artifact::Text { body } => body.clone(),
        Artifact::File { path, digest, captured } => {
            let mut s = format!("[file {} sha256:{}]", path.display(), digest);
            if !captured.stdout.is_empty() {
                s.push_str("\nstdout:\n");
                s.push_str(&captured.stdout);
            }
            if !captured.stderr.is_empty() {
                s.push_str("\nstderr:\n");
                s.push_str(&captured.stderr);
            }
            s
        }
    }
}

pub fn format_fitness(f: f64) -> String {
    format!("{f:.3}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        let out = fill("a {x} b {y} {unknown}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} b Y {unknown}");
    }

    #[test]
    fn fill_keeps_code_braces() {
        let out = fill("fn main() { {solution} }", &[("solution", "x")]);
        assert_eq!(out, "fn main() { x }");
    }

    #[test]
    fn builtins_cover_every_role() {
        let t = PromptTemplates::builtin();
        for id in ["decompose", "create", "mutate", "mutate_score_only", "judge", "repair"] {
            assert!(t.load(id).is_ok(), "{id}");
        }
        assert!(t.load("nope").is_err());
        assert!(!t.load("mutate_score_only").unwrap().contains("{feedback}"));
    }

    #[test]
    fn directory_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge.txt"), "custom {requirements}").unwrap();
        let t = PromptTemplates::from_dir(dir.path());
        assert_eq!(t.load("judge").unwrap(), "custom {requirements}");
        assert!(t.load("decompose").unwrap().contains("{instruction}"));
    }
}
