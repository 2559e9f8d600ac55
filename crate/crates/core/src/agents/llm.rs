use std::sync::Arc;

use crate::domain::{Artifact, Evaluation, JudgeMeta, RequirementSet, SolutionContent, UserInstruction};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, Usage};

use super::parse::{describe_defects, parse_judge_reply, parse_requirements_reply, parse_solution_blocks, ParseDefect};
use super::prompts::{fill, format_artifact, format_feedback, format_fitness, format_requirements, PromptTemplates};
use super::{AgentConfig, AgentError, CallContext, CallKind, Creator, Decomposer, Guidance, Judge, MutationRequest};

/// Shared plumbing: one request, and on a parse failure exactly one repair
/// request that quotes the defects back to the model.
struct Conversation<'a> {
    backend: &'a dyn ChatBackend,
    cfg: &'a AgentConfig,
    templates: &'a PromptTemplates,
    ctx: CallContext,
    messages: Vec<ChatMessage>,
    usage: Usage,
    calls: u32,
}

impl<'a> Conversation<'a> {
    fn new(backend: &'a dyn ChatBackend, cfg: &'a AgentConfig, templates: &'a PromptTemplates, ctx: CallContext) -> Self {
        Self {
            backend,
            cfg,
            templates,
            ctx,
            messages: Vec::new(),
            usage: Usage { usage_reported: true, priced: true, ..Usage::default() },
            calls: 0,
        }
    }

    fn send(&mut self, prompt: String) -> Result<String, AgentError> {
        self.messages.push(ChatMessage::user(prompt));
        let request = ChatRequest {
            model: self.cfg.model.clone(),
            messages: self.messages.clone(),
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            request_id: self.ctx.request_id(self.calls),
        };
        self.calls += 1;
        let completion = self.backend.complete(&request)?;
        let u = &completion.usage;
        self.usage.input_tokens += u.input_tokens;
        self.usage.output_tokens += u.output_tokens;
        self.usage.latency_secs += u.latency_secs;
        self.usage.cost += u.cost;
        self.usage.usage_reported &= u.usage_reported;
        self.usage.priced &= u.priced;
        self.messages.push(ChatMessage::assistant(completion.text.clone()));
        Ok(completion.text)
    }

    fn repair_prompt(&self, defects: &[ParseDefect]) -> Result<String, AgentError> {
        let template = self.templates.load("repair")?;
        Ok(fill(&template, &[("errors", &describe_defects(defects))]))
    }

    fn ask<T>(
        &mut self,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, Vec<ParseDefect>>,
    ) -> Result<Result<T, Vec<ParseDefect>>, AgentError> {
        let reply = self.send(prompt)?;
        match parse(&reply) {
            Ok(v) => Ok(Ok(v)),
            Err(defects) => {
                log::debug!("reply for {:?} rejected: {defects:?}; sending repair", self.ctx.kind);
                let repair = self.repair_prompt(&defects)?;
                let reply = self.send(repair)?;
                Ok(parse(&reply))
            }
        }
    }
}

pub struct LlmDecomposer {
    backend: Arc<dyn ChatBackend>,
    cfg: AgentConfig,
    templates: PromptTemplates,
}

impl LlmDecomposer {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: AgentConfig, templates: PromptTemplates) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self { backend, cfg, templates })
    }
}

impl Decomposer for LlmDecomposer {
    fn decompose(&self, instruction: &UserInstruction) -> Result<RequirementSet, AgentError> {
        let ctx = CallContext::new(0, 0, 0, CallKind::Decompose);
        let template = self.templates.load(&self.cfg.template)?;
        let prompt = fill(&template, &[("instruction", &instruction.text)]);
        let mut conv = Conversation::new(self.backend.as_ref(), &self.cfg, &self.templates, ctx);
        conv.ask(prompt, parse_requirements_reply)?
            .map_err(|d| AgentError::Decomposition(describe_defects(&d)))
    }
}

/// Shape of solutions this creator produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolutionKind {
    Text,
    Code { runtime: String },
}

pub struct LlmCreator {
    backend: Arc<dyn ChatBackend>,
    cfg: AgentConfig,
    templates: PromptTemplates,
    kind: SolutionKind,
}

impl LlmCreator {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: AgentConfig, templates: PromptTemplates) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self { backend, cfg, templates, kind: SolutionKind::Text })
    }

    pub fn producing_code(mut self, runtime: impl Into<String>) -> Self {
        self.kind = SolutionKind::Code { runtime: runtime.into() };
        self
    }

    fn extra_tags(&self) -> Vec<&str> {
        match &self.kind {
            SolutionKind::Text => Vec::new(),
            SolutionKind::Code { runtime } => vec![runtime.as_str()],
        }
    }

    fn wrap(&self, body: String) -> SolutionContent {
        match &self.kind {
            SolutionKind::Text => SolutionContent::Text { body },
            SolutionKind::Code { runtime } => SolutionContent::Code { body, runtime: runtime.clone() },
        }
    }
}

impl Creator for LlmCreator {
    fn create_initial(
        &self,
        instruction: &UserInstruction,
        requirements: &RequirementSet,
        count: usize,
        ctx: &CallContext,
    ) -> Result<Vec<SolutionContent>, AgentError> {
        let template = self.templates.load(&self.cfg.template)?;
        let count_s = count.to_string();
        let prompt = fill(
            &template,
            &[
                ("instruction", &instruction.text),
                ("requirements", &format_requirements(requirements)),
                ("count", &count_s),
            ],
        );
        let tags = self.extra_tags();
        let mut conv = Conversation::new(self.backend.as_ref(), &self.cfg, &self.templates, *ctx);
        let first = conv.send(prompt)?;
        let mut bodies = parse_solution_blocks(&first, &tags);
        if bodies.len() < count {
            let missing = count - bodies.len();
            let defect = ParseDefect::Malformed(format!(
                "found {} of {count} solution blocks; write {missing} more, each in its own ```solution block",
                bodies.len()
            ));
            let repair = conv.repair_prompt(&[defect])?;
            let again = conv.send(repair)?;
            bodies.extend(parse_solution_blocks(&again, &tags));
        }
        Ok(bodies.into_iter().take(count).map(|b| self.wrap(b)).collect())
    }

    fn mutate(&self, request: &MutationRequest<'_>, ctx: &CallContext) -> Result<SolutionContent, AgentError> {
        let requirements = format_requirements(request.requirements);
        let fitness = format_fitness(request.parent_fitness);
        let prompt = match request.guidance {
            Guidance::Feedback(feedback) => fill(
                &self.templates.load("mutate")?,
                &[
                    ("instruction", &request.instruction.text),
                    ("requirements", &requirements),
                    ("solution", request.parent.content.body()),
                    ("fitness", &fitness),
                    ("feedback", &format_feedback(feedback)),
                ],
            ),
            Guidance::ScoreOnly => fill(
                &self.templates.load("mutate_score_only")?,
                &[
                    ("instruction", &request.instruction.text),
                    ("requirements", &requirements),
                    ("solution", request.parent.content.body()),
                    ("fitness", &fitness),
                ],
            ),
        };
        let tags = self.extra_tags();
        let mut conv = Conversation::new(self.backend.as_ref(), &self.cfg, &self.templates, *ctx);
        let body = conv
            .ask(prompt, |raw| {
                parse_solution_blocks(raw, &tags)
                    .into_iter()
                    .next()
                    .ok_or_else(|| vec![ParseDefect::MissingBlock("solution")])
            })?
            .map_err(|d| AgentError::Mutation(describe_defects(&d)))?;
        Ok(request.parent.content.with_body(body))
    }
}

pub struct LlmJudge {
    backend: Arc<dyn ChatBackend>,
    cfg: AgentConfig,
    templates: PromptTemplates,
}

impl LlmJudge {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: AgentConfig, templates: PromptTemplates) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self { backend, cfg, templates })
    }
}

impl Judge for LlmJudge {
    fn judge(&self, artifact: &Artifact, requirements: &RequirementSet, ctx: &CallContext) -> Result<Evaluation, AgentError> {
        let template = self.templates.load(&self.cfg.template)?;
        let prompt = fill(
            &template,
            &[
                ("requirements", &format_requirements(requirements)),
                ("artifact", &format_artifact(artifact)),
            ],
        );
        let mut conv = Conversation::new(self.backend.as_ref(), &self.cfg, &self.templates, *ctx);
        let mut eval = conv
            .ask(prompt, |raw| parse_judge_reply(raw, requirements))?
            .map_err(|d| AgentError::Evaluation(describe_defects(&d)))?;
        eval.meta = Some(JudgeMeta {
            judge: self.cfg.model.clone(),
            latency_secs: Some(conv.usage.latency_secs),
            input_tokens: Some(conv.usage.input_tokens),
            output_tokens: Some(conv.usage.output_tokens),
        });
        Ok(eval)
    }
}
