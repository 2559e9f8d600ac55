use made_core::agents::{AgentError, CallContext, Creator, FeedbackMode, Judge, MutationRequest};
use made_core::domain::{Artifact, Evaluation, RequirementSet, SolutionContent, Status, UserInstruction};
use made_core::engine::{run_evolution, Agents, EngineError, EvolutionConfig, TerminationReason};
use made_core::render::Renderer;
use made_core::runstore::{replay, replay_lines, report, EventBody, Event, ReplayOutcome, RunStore};
use made_core::simlab::{Scenario, SimAgents};

fn toy() -> (UserInstruction, SimAgents) {
    let sc = Scenario::builtin("toy").unwrap();
    (sc.instruction().unwrap(), sc.agents().unwrap())
}

fn cfg(seed: u64) -> EvolutionConfig {
    EvolutionConfig { population_size: 6, max_generations: 5, seed, ..Default::default() }
}

fn run_in(dir: &std::path::Path, cfg: &EvolutionConfig) -> made_core::engine::EvolutionResult {
    let (instruction, a) = toy();
    let mut store = RunStore::create(dir, "run-test").unwrap();
    let agents = Agents { decomposer: &a.decomposer, creator: &a.creator, judge: &a.judge };
    run_evolution(&instruction, cfg, agents, &Renderer::identity(), &mut store, None).unwrap()
}

#[test]
fn toy_run_replays_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_in(dir.path(), &cfg(42));
    let curve = result.curve();
    assert!(curve.windows(2).all(|w| w[1] >= w[0]), "{curve:?}");
    match replay(dir.path()).unwrap() {
        ReplayOutcome::Complete(run) => {
            assert!(run.clean(), "{:?}", run.violations);
            assert_eq!(run.curve(), curve);
            assert_eq!(run.best_fitness, Some(result.best_fitness));
            assert_eq!(run.best_id.as_deref(), Some(result.best.id()));
        }
        other => panic!("{other:?}"),
    }
    let rep = report(dir.path()).unwrap();
    assert_eq!(rep.best_fitness_curve, curve);
    assert!(rep.usage_warning.is_some());
}

#[test]
fn identical_seeds_give_identical_hashes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(a.path(), &cfg(7));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| run_in(b.path(), &cfg(7)));
    let ha = match replay(a.path()).unwrap() {
        ReplayOutcome::Complete(r) => r.hash,
        _ => unreachable!(),
    };
    let hb = match replay(b.path()).unwrap() {
        ReplayOutcome::Complete(r) => r.hash,
        _ => unreachable!(),
    };
    assert_eq!(ha, hb);
    let c = tempfile::tempdir().unwrap();
    run_in(c.path(), &cfg(8));
    let hc = match replay(c.path()).unwrap() {
        ReplayOutcome::Complete(r) => r.hash,
        _ => unreachable!(),
    };
    assert_ne!(ha, hc);
}

#[test]
fn elites_carry_over_unjudged() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_in(dir.path(), &cfg(3));
    let lines = made_core::runstore::read_log(dir.path()).unwrap();
    let events: Vec<Event> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    for pair in result.history.windows(2) {
        let elite = &pair[0].elites[0];
        let next = pair[1].generation;
        assert!(pair[1].members.iter().any(|m| &m.id == elite));
        let rejudged = events.iter().any(|e| {
            e.generation == next && matches!(&e.body, EventBody::Judged { id, .. } if id == elite)
        });
        assert!(!rejudged, "elite {elite} judged again in generation {next}");
    }
}

#[test]
fn tampered_fitness_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &cfg(11));
    let mut lines = made_core::runstore::read_log(dir.path()).unwrap();
    let at = lines.iter().position(|l| l.contains("\"kind\":\"judged\"")).unwrap();
    let mut event: Event = serde_json::from_str(&lines[at]).unwrap();
    if let EventBody::Judged { fitness, .. } = &mut event.body {
        *fitness = if *fitness == 1.0 { 0.5 } else { 1.0 };
    }
    lines[at] = made_core::domain::canonical_json(&event);
    match replay_lines(&lines) {
        ReplayOutcome::Complete(run) => assert!(!run.clean()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_log_is_resumable_state() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &cfg(5));
    let lines = made_core::runstore::read_log(dir.path()).unwrap();
    let cut = &lines[..lines.len() - 1];
    match replay_lines(cut) {
        ReplayOutcome::Truncated(st) => {
            assert_eq!(st.events, cut.len());
            assert!(st.best_fitness.is_some());
            assert!(st.violations.is_empty(), "{:?}", st.violations);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn score_only_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let c = EvolutionConfig { feedback_mode: FeedbackMode::ScoreOnly, ..cfg(42) };
    let result = run_in(dir.path(), &c);
    assert!(result.best_fitness > 0.0);
    let lines = made_core::runstore::read_log(dir.path()).unwrap();
    assert!(lines.iter().any(|l| l.contains("\"mode\":\"score_only\"")));
}

struct FailingCreator;

impl Creator for FailingCreator {
    fn create_initial(
        &self,
        _: &UserInstruction,
        _: &RequirementSet,
        count: usize,
        _: &CallContext,
    ) -> Result<Vec<SolutionContent>, AgentError> {
        Ok((0..count).map(|i| SolutionContent::text(format!("body {i}"))).collect())
    }

    fn mutate(&self, _: &MutationRequest<'_>, _: &CallContext) -> Result<SolutionContent, AgentError> {
        Err(AgentError::Mutation("unavailable".into()))
    }
}

struct HalfJudge(made_core::simlab::SimJudge);

impl Judge for HalfJudge {
    fn judge(&self, artifact: &Artifact, r: &RequirementSet, ctx: &CallContext) -> Result<Evaluation, AgentError> {
        if ctx.index % 2 == 1 {
            return Err(AgentError::Evaluation("judge unavailable".into()));
        }
        self.0.judge(artifact, r, ctx)
    }
}

#[test]
fn mutation_failure_clones_parent_and_eval_failures_rank_low() {
    let (instruction, a) = toy();
    let judge = HalfJudge(a.judge.clone());
    let agents = Agents { decomposer: &a.decomposer, creator: &FailingCreator, judge: &judge };
    let mut store = RunStore::in_memory("run-fail").unwrap();
    let c = EvolutionConfig { population_size: 4, max_generations: 2, ..Default::default() };
    let result = run_evolution(&instruction, &c, agents, &Renderer::identity(), &mut store, None).unwrap();
    assert!(store.lines().iter().any(|l| l.contains("parent_clone")));
    let g0 = &result.history[0];
    assert!(g0.members.iter().any(|m| m.status == Status::EvalFailed));
    for p in &g0.parents {
        let m = g0.members.iter().find(|m| &m.id == p).unwrap();
        assert_eq!(m.status, Status::Evaluated);
    }
    match replay_lines(store.lines()) {
        ReplayOutcome::Complete(run) => assert!(run.clean(), "{:?}", run.violations),
        other => panic!("{other:?}"),
    }
}

#[test]
fn all_render_failures_abort_after_retries() {
    let (instruction, a) = toy();
    let agents = Agents { decomposer: &a.decomposer, creator: &a.creator, judge: &a.judge };
    let renderer = Renderer::new(made_core::render::RendererConfig::command("false")).unwrap();
    let mut store = RunStore::in_memory("run-abort").unwrap();
    let err = run_evolution(&instruction, &cfg(1), agents, &renderer, &mut store, None).unwrap_err();
    assert!(matches!(err, EngineError::AllRenderFailed { attempts: 3 }), "{err}");
    let last = store.lines().last().unwrap();
    assert!(last.contains("\"status\":\"aborted\""), "{last}");
    let created = store.lines().iter().filter(|l| l.contains("individual_created")).count();
    assert_eq!(created, 3 * 6);
}

#[test]
fn stops_when_all_requirements_met() {
    let sc = Scenario::parse(
        "name = \"easy\"\n[creator]\np_init = 1.0\nbase_text = \"x\"\n[[rules]]\nid = \"r1\"\nkind = \"contains\"\nneedle = \"ok\"\n",
    )
    .unwrap();
    let a = sc.agents().unwrap();
    let agents = Agents { decomposer: &a.decomposer, creator: &a.creator, judge: &a.judge };
    let mut store = RunStore::in_memory("run-easy").unwrap();
    let result =
        run_evolution(&sc.instruction().unwrap(), &cfg(1), agents, &Renderer::identity(), &mut store, None).unwrap();
    assert_eq!(result.termination, TerminationReason::AllRequirementsMet);
    assert_eq!(result.history.len(), 1);
    assert_eq!(result.best_fitness, 1.0);
}
