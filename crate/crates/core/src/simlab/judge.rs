use serde::{Deserialize, Serialize};

use super::{RuleSet, SimError, SimRng};
use crate::agents::{AgentError, CallContext, Judge};
use crate::domain::{Artifact, Evaluation, FeedbackBundle, JudgeMeta, RequirementSet};

pub const RULE_JUDGE: &str = "rule-judge";
pub const NOISY_RULE_JUDGE: &str = "noisy-rule-judge";

/// Quality-dependent flip probabilities: a truly satisfied requirement is
/// misjudged with probability `eps_sat`, an unsatisfied one with `eps_unsat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default = "default_eps_sat")]
    pub eps_sat: f64,
    #[serde(default = "default_eps_unsat")]
    pub eps_unsat: f64,
}

fn default_eps_sat() -> f64 {
    0.02
}

fn default_eps_unsat() -> f64 {
    0.15
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { eps_sat: default_eps_sat(), eps_unsat: default_eps_unsat() }
    }
}

impl NoiseModel {
    pub fn new(eps_sat: f64, eps_unsat: f64) -> Result<Self, SimError> {
        let nm = Self { eps_sat, eps_unsat };
        nm.validate()?;
        Ok(nm)
    }

    pub fn zero() -> Self {
        Self { eps_sat: 0.0, eps_unsat: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = (0.0..=1.0).contains(&self.eps_sat)
            && (0.0..=1.0).contains(&self.eps_unsat)
            && self.eps_sat <= self.eps_unsat;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidNoise(format!(
                "need 0 <= eps_sat <= eps_unsat <= 1, got eps_sat={} eps_unsat={}",
                self.eps_sat, self.eps_unsat
            )))
        }
    }
}

fn feedback_for(rules: &RuleSet, scores: &[u8]) -> FeedbackBundle {
    let notes = rules
        .rules()
        .iter()
        .zip(scores)
        .filter(|(_, &v)| v == 0)
        .map(|(r, _)| (r.id.clone(), r.violation_note()))
        .collect();
    FeedbackBundle { notes, suggestions: Vec::new() }
}

/// Scores a text artifact against the rules. Pure: equal inputs give
/// byte-identical evaluations.
pub fn rule_judge(artifact: &Artifact, rules: &RuleSet) -> Result<Evaluation, SimError> {
    let text = artifact.as_text().ok_or_else(|| {
        SimError::UnsupportedArtifact("rule judging needs a text artifact".into())
    })?;
    let scores = rules.scores(text);
    Ok(Evaluation {
        feedback: feedback_for(rules, &scores),
        scores,
        meta: Some(JudgeMeta { judge: RULE_JUDGE.into(), ..JudgeMeta::default() }),
    })
}

/// Flips each verdict independently and rebuilds the feedback to match.
/// One uniform draw per requirement, in requirement order.
pub fn noisy_judge(base: &Evaluation, rules: &RuleSet, nm: &NoiseModel, rng: &mut SimRng) -> Evaluation {
    let scores: Vec<u8> = base
        .scores
        .iter()
        .map(|&v| {
            let eps = if v == 1 { nm.eps_sat } else { nm.eps_unsat };
            if rng.bernoulli(eps) { 1 - v } else { v }
        })
        .collect();
    Evaluation {
        feedback: feedback_for(rules, &scores),
        scores,
        meta: base.meta.clone(),
    }
}

/// Judge agent backed by a rule set, optionally with verdict noise drawn
/// from the call's own stream.
#[derive(Debug, Clone)]
pub struct SimJudge {
    rules: RuleSet,
    noise: Option<NoiseModel>,
}

impl SimJudge {
    pub fn new(rules: RuleSet, noise: Option<NoiseModel>) -> Result<Self, SimError> {
        if let Some(nm) = &noise {
            nm.validate()?;
        }
        Ok(Self { rules, noise })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }
}

impl Judge for SimJudge {
    fn judge(
        &self,
        artifact: &Artifact,
        requirements: &RequirementSet,
        ctx: &CallContext,
    ) -> Result<Evaluation, AgentError> {
        if !self.rules.covers(requirements) {
            return Err(AgentError::Evaluation(
                "rule set does not cover the requirement set".into(),
            ));
        }
        let base = rule_judge(artifact, &self.rules).map_err(|e| match e {
            SimError::UnsupportedArtifact(m) => AgentError::UnsupportedArtifact(m),
            other => AgentError::Evaluation(other.to_string()),
        })?;
        Ok(match &self.noise {
            None => base,
            Some(nm) => {
                let mut rng = SimRng::seed_from(ctx.stream_seed());
                let mut eval = noisy_judge(&base, &self.rules, nm, &mut rng);
                eval.meta = Some(JudgeMeta { judge: NOISY_RULE_JUDGE.into(), ..JudgeMeta::default() });
                eval
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::CallKind;
    use crate::domain::canonical_json;
    use crate::simlab::RulePredicate;

    fn hello_rules() -> RuleSet {
        RuleSet::new(vec![
            RulePredicate::contains("r1", "hello"),
            RulePredicate::contains("r2", "moon"),
        ])
        .unwrap()
    }

    #[test]
    fn hello_world() {
        let e = rule_judge(&Artifact::text("hello world"), &hello_rules()).unwrap();
        assert_eq!(e.scores, vec![1, 0]);
        assert_eq!(e.feedback.notes.len(), 1);
        assert_eq!(e.feedback.notes["r2"], "contains \"moon\" violated");
    }

    #[test]
    fn file_artifact_unsupported() {
        let a = Artifact::File {
            path: "x.png".into(),
            digest: String::new(),
            captured: Default::default(),
        };
        assert!(matches!(rule_judge(&a, &hello_rules()), Err(SimError::UnsupportedArtifact(_))));
    }

    #[test]
    fn rule_judge_is_pure() {
        let a = Artifact::text("hello moon");
        let x = canonical_json(&rule_judge(&a, &hello_rules()).unwrap());
        let y = canonical_json(&rule_judge(&a, &hello_rules()).unwrap());
        assert_eq!(x, y);
    }

    #[test]
    fn zero_noise_identity() {
        let rules = hello_rules();
        let base = rule_judge(&Artifact::text("hello world"), &rules).unwrap();
        let mut rng = SimRng::seed_from(1);
        for _ in 0..100 {
            assert_eq!(noisy_judge(&base, &rules, &NoiseModel::zero(), &mut rng), base);
        }
    }

    #[test]
    fn certain_flip_complements() {
        let rules = hello_rules();
        let base = rule_judge(&Artifact::text("hello world"), &rules).unwrap();
        let out = noisy_judge(&base, &rules, &NoiseModel::new(1.0, 1.0).unwrap(), &mut SimRng::seed_from(1));
        assert_eq!(out.scores, vec![0, 1]);
        assert!(out.feedback.notes.contains_key("r1"));
        assert!(!out.feedback.notes.contains_key("r2"));
    }

    #[test]
    fn noise_bounds_enforced() {
        assert!(NoiseModel::new(0.2, 0.1).is_err());
        assert!(NoiseModel::new(-0.1, 0.1).is_err());
        assert!(NoiseModel::new(0.1, 1.1).is_err());
        assert!(NoiseModel::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn sim_judge_uses_call_stream() {
        let rules = hello_rules();
        let judge = SimJudge::new(rules.clone(), Some(NoiseModel::new(0.5, 0.5).unwrap())).unwrap();
        let req = rules.requirement_set().clone();
        let a = Artifact::text("hello");
        let ctx = CallContext::new(9, 1, 2, CallKind::Judge);
        let x = judge.judge(&a, &req, &ctx).unwrap();
        let y = judge.judge(&a, &req, &ctx).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.meta.unwrap().judge, NOISY_RULE_JUDGE);
    }

    #[test]
    fn sim_judge_rejects_foreign_requirements() {
        let judge = SimJudge::new(hello_rules(), None).unwrap();
        let other = RuleSet::new(vec![RulePredicate::contains("x", "y")]).unwrap();
        let ctx = CallContext::new(0, 0, 0, CallKind::Judge);
        assert!(judge.judge(&Artifact::text("y"), other.requirement_set(), &ctx).is_err());
    }
}
