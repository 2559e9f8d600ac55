use super::{RuleSet, SimError, SimRng};
use crate::agents::{AgentError, CallContext, Creator, Guidance, MutationRequest};
use crate::domain::{FeedbackBundle, RequirementSet, SolutionContent, UserInstruction};

#[derive(Debug, Clone, Copy)]
pub enum CreatorGuidance<'a> {
    Feedback(&'a FeedbackBundle),
    FitnessOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offspring {
    pub body: String,
    /// Ids of named rules whose repair draw succeeded.
    pub repaired: Vec<String>,
    /// The rule flipped on the fitness-only path.
    pub toggled: Option<String>,
}

/// With feedback, every rule named in the notes is repaired independently
/// with probability `p_fix` (one draw per named rule, in rule order).
/// Without feedback, one uniformly chosen rule has its state toggled.
pub fn synthesize_child(
    rules: &RuleSet,
    parent: &str,
    guidance: CreatorGuidance<'_>,
    p_fix: f64,
    rng: &mut SimRng,
) -> Offspring {
    let mut body = parent.to_string();
    let mut repaired = Vec::new();
    let mut toggled = None;
    match guidance {
        CreatorGuidance::Feedback(fb) => {
            for (i, rule) in rules.rules().iter().enumerate() {
                if fb.notes.contains_key(&rule.id) && rng.bernoulli(p_fix) && rules.repair(i, &mut body) {
                    repaired.push(rule.id.clone());
                }
            }
        }
        CreatorGuidance::FitnessOnly => {
            let i = rng.below(rules.len());
            if rules.holds(i, &body) {
                rules.violate(i, &mut body);
            } else {
                rules.repair(i, &mut body);
            }
            toggled = Some(rules.rules()[i].id.clone());
        }
    }
    Offspring { body, repaired, toggled }
}

/// Creator stand-in editing text toward (or away from) the rules.
#[derive(Debug, Clone)]
pub struct SyntheticCreator {
    rules: RuleSet,
    p_fix: f64,
    p_init: f64,
    base_text: String,
}

impl SyntheticCreator {
    pub fn new(rules: RuleSet, p_fix: f64, p_init: f64, base_text: impl Into<String>) -> Result<Self, SimError> {
        for (name, p) in [("p_fix", p_fix), ("p_init", p_init)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Scenario(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let base_text = base_text.into();
        if base_text.trim().is_empty() {
            return Err(SimError::Scenario("base_text is empty".into()));
        }
        Ok(Self { rules, p_fix, p_init, base_text })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// A fresh body where each rule is independently made to hold with
    /// probability `p_init`, edited in rule order.
    pub fn initial_body(&self, rng: &mut SimRng) -> String {
        let mut body = self.base_text.clone();
        for i in 0..self.rules.len() {
            if rng.bernoulli(self.p_init) {
                self.rules.repair(i, &mut body);
            } else {
                self.rules.violate(i, &mut body);
            }
        }
        body
    }
}

impl Creator for SyntheticCreator {
    fn create_initial(
        &self,
        _instruction: &UserInstruction,
        _requirements: &RequirementSet,
        count: usize,
        ctx: &CallContext,
    ) -> Result<Vec<SolutionContent>, AgentError> {
        let mut rng = SimRng::seed_from(ctx.stream_seed());
        Ok((0..count).map(|_| SolutionContent::text(self.initial_body(&mut rng))).collect())
    }

    fn mutate(&self, request: &MutationRequest<'_>, ctx: &CallContext) -> Result<SolutionContent, AgentError> {
        let guidance = match request.guidance {
            Guidance::Feedback(fb) => CreatorGuidance::Feedback(fb),
            Guidance::ScoreOnly => CreatorGuidance::FitnessOnly,
        };
        let mut rng = SimRng::seed_from(ctx.stream_seed());
        let child = synthesize_child(&self.rules, request.parent.content.body(), guidance, self.p_fix, &mut rng);
        if child.body.trim().is_empty() {
            return Err(AgentError::Mutation("synthetic edit left an empty body".into()));
        }
        Ok(request.parent.content.with_body(child.body))
    }
}
