//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::agents::{Decomposer, FeedbackMode, Judge, CallContext, CallKind};
use crate::config::RunConfig;
use crate::domain::{canonical_json, Artifact, CapturedOutput, RequirementSet, UserInstruction};
use crate::engine::{run_evolution, Agents, EvolutionConfig};
use crate::gateway::CallLedger;
use crate::render::{sha256_hex, Renderer};
use crate::runstore::{
    batch_report, build_report, derive_run_id, replay, write_report, ReplayOutcome, RunStore, StoreError,
    CONFIG_SNAPSHOT,
};
use crate::simlab::{run_campaign, Scenario};
use crate::stats::{stability_report, RatingsMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "made", version, about = "Evolve solutions against decomposed requirements with a judging agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an instruction into verifiable requirements (JSON on stdout).
    Decompose {
        /// Instruction file, or `-` for standard input.
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use a simulation scenario's rules instead of a model.
        #[arg(long)]
        sim: Option<String>,
    },
    /// Run the evolutionary loop and write a run directory.
    Evolve(EvolveArgs),
    /// Judge one artifact against a requirement set (evaluation JSON on stdout).
    Judge {
        #[arg(long)]
        artifact: PathBuf,
        /// RequirementSet JSON; defaults to the scenario's rules with --sim.
        #[arg(long)]
        requirements: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sim: Option<String>,
    },
    /// Many seeded simulated runs; prints the mean best-fitness curve.
    Campaign {
        #[arg(long, default_value = "toy")]
        sim: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pop: Option<usize>,
        #[arg(long)]
        max_gen: Option<u32>,
        #[arg(long)]
        ablate_feedback: bool,
    },
    /// Judge-consistency statistics from a score CSV or a simulation.
    Stability {
        /// Long-format CSV with columns case_id, repeat, score.
        #[arg(long, conflicts_with = "simulate", required_unless_present = "simulate")]
        input: Option<PathBuf>,
        /// Scenario name or TOML path.
        #[arg(long)]
        simulate: Option<String>,
        /// Directory for stability.json, stability.txt and scores.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a run's report from its log.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Verify a run log and print the verdict.
    Replay {
        #[arg(long)]
        run: PathBuf,
    },
    /// Averages over several run directories.
    BatchReport {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    /// Instruction file, or `-` for standard input. Optional with --sim.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_gen: Option<u32>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Withhold semantic feedback from the creator.
    #[arg(long)]
    pub ablate_feedback: bool,
    /// Simulation scenario (builtin name or TOML path) replacing every agent.
    #[arg(long)]
    pub sim: Option<String>,
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Decompose { instruction, config, sim } => decompose(&instruction, config.as_deref(), sim.as_deref(), out),
        Command::Evolve(args) => evolve(args, out),
        Command::Judge { artifact, requirements, config, sim } => {
            judge(&artifact, requirements.as_deref(), config.as_deref(), sim.as_deref(), out)
        }
        Command::Campaign { sim, runs, seed, pop, max_gen, ablate_feedback } => {
            campaign(&sim, runs, seed, pop, max_gen, ablate_feedback, out)
        }
        Command::Stability { input, simulate, out: dir } => stability(input.as_deref(), simulate.as_deref(), dir.as_deref(), out),
        Command::Report { run } => report(&run, out),
        Command::Replay { run } => replay_cmd(&run, out),
        Command::BatchReport { runs } => batch(&runs, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(domain)
}

fn read_instruction(arg: &str) -> Result<UserInstruction, CliError> {
    let (id, text) = if arg == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(usage)?;
        ("stdin".to_string(), s)
    } else {
        let path = Path::new(arg);
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{arg}: {e}")))?;
        let id = path.file_stem().map_or("instruction".into(), |s| s.to_string_lossy().into_owned());
        (id, text)
    };
    UserInstruction::new(id, text.trim().to_string()).map_err(|e| usage(format!("{arg}: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn load_scenario(name: &str) -> Result<Scenario, CliError> {
    Scenario::load(name).map_err(usage)
}

fn decompose(instruction: &str, config: Option<&Path>, sim: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let instruction = read_instruction(instruction)?;
    let requirements = match sim {
        Some(name) => {
            let sc = load_scenario(name)?;
            sc.agents().map_err(domain)?.decomposer.decompose(&instruction).map_err(domain)?
        }
        None => {
            let cfg = load_config(config)?;
            let backend = cfg.backend(Arc::new(CallLedger::default())).map_err(domain)?;
            let agents = cfg.llm_agents(backend).map_err(domain)?;
            agents.decomposer.decompose(&instruction).map_err(domain)?
        }
    };
    emit(out, &(serde_json::to_string_pretty(&requirements).map_err(domain)? + "\n"))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    evolution: &'a EvolutionConfig,
    sim: Option<&'a str>,
    instruction: &'a UserInstruction,
}

fn evolve(args: EvolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rc = load_config(args.config.as_deref())?;
    let scenario = args.sim.as_deref().map(load_scenario).transpose()?;
    let instruction = match (&args.task, &scenario) {
        (Some(t), _) => read_instruction(t)?,
        (None, Some(sc)) => sc.instruction().map_err(domain)?,
        (None, None) => return Err(usage("--task is required unless --sim is given")),
    };
    let cfg = &mut rc.evolution;
    if let Some(n) = args.pop {
        cfg.population_size = n;
    }
    if let Some(g) = args.max_gen {
        cfg.max_generations = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.ablate_feedback {
        cfg.feedback_mode = FeedbackMode::ScoreOnly;
    }
    cfg.validate().map_err(usage)?;
    let cfg = rc.evolution.clone();

    let renderer = Renderer::new(cfg.renderer.clone()).map_err(usage)?;
    let run_id = derive_run_id(&cfg, &instruction);
    let mut store = RunStore::create(&args.out, run_id).map_err(|e| match e {
        StoreError::Exists(_) => usage(e),
        other => domain(other),
    })?;
    store
        .write_json(CONFIG_SNAPSHOT, &Snapshot { evolution: &cfg, sim: args.sim.as_deref(), instruction: &instruction })
        .map_err(domain)?;

    let result = match &scenario {
        Some(sc) => {
            let a = sc.agents().map_err(domain)?;
            let agents = Agents { decomposer: &a.decomposer, creator: &a.creator, judge: &a.judge };
            run_evolution(&instruction, &cfg, agents, &renderer, &mut store, None)
        }
        None => {
            let ledger = Arc::new(CallLedger::default());
            let backend = rc.backend(ledger.clone()).map_err(domain)?;
            let a = rc.llm_agents(backend).map_err(domain)?;
            let agents = Agents { decomposer: &a.decomposer, creator: &a.creator, judge: &a.judge };
            run_evolution(&instruction, &cfg, agents, &renderer, &mut store, Some(&ledger))
        }
    };
    result.map_err(domain)?;
    let report = finish_report(&args.out)?;
    emit(out, &report)
}

fn finish_report(dir: &Path) -> Result<String, CliError> {
    match replay(dir).map_err(domain)? {
        ReplayOutcome::Complete(run) => {
            let report = build_report(&run);
            write_report(dir, &report).map_err(domain)?;
            Ok(report.to_text())
        }
        ReplayOutcome::Truncated(state) => Err(domain(format!("run log ends early after {} events", state.events))),
    }
}

fn read_artifact(path: &Path) -> Result<Artifact, CliError> {
    let bytes = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    match String::from_utf8(bytes) {
        Ok(body) => Ok(Artifact::text(body)),
        Err(e) => {
            let bytes = e.into_bytes();
            Ok(Artifact::File { path: path.to_path_buf(), digest: sha256_hex(&bytes), captured: CapturedOutput::default() })
        }
    }
}

fn judge(
    artifact: &Path,
    requirements: Option<&Path>,
    config: Option<&Path>,
    sim: Option<&str>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let artifact = read_artifact(artifact)?;
    let requirements: Option<RequirementSet> = requirements
        .map(|p| {
            let raw = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))
        })
        .transpose()?;
    let ctx = CallContext::new(0, 0, 0, CallKind::Judge);
    let evaluation = match sim {
        Some(name) => {
            let a = load_scenario(name)?.agents().map_err(domain)?;
            let req = requirements.unwrap_or_else(|| a.judge.rules().requirement_set().clone());
            a.judge.judge(&artifact, &req, &ctx).map_err(domain)?
        }
        None => {
            let req = requirements.ok_or_else(|| usage("--requirements is required without --sim"))?;
            let cfg = load_config(config)?;
            let backend = cfg.backend(Arc::new(CallLedger::default())).map_err(domain)?;
            let a = cfg.llm_agents(backend).map_err(domain)?;
            a.judge.judge(&artifact, &req, &ctx).map_err(domain)?
        }
    };
    emit(out, &(serde_json::to_string_pretty(&evaluation).map_err(domain)? + "\n"))
}

fn campaign(
    sim: &str,
    runs: usize,
    seed: u64,
    pop: Option<usize>,
    max_gen: Option<u32>,
    ablate: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let sc = load_scenario(sim)?;
    let mut cfg = EvolutionConfig { seed, ..Default::default() };
    if let Some(n) = pop {
        cfg.population_size = n;
    }
    if let Some(g) = max_gen {
        cfg.max_generations = g;
    }
    if ablate {
        cfg.feedback_mode = FeedbackMode::ScoreOnly;
    }
    cfg.validate().map_err(usage)?;
    if runs == 0 {
        return Err(usage("--runs must be positive"));
    }
    let result = run_campaign(&sc, &cfg, runs).map_err(domain)?;
    let curve: Vec<String> = result.mean_curve().iter().map(|f| format!("{f:.4}")).collect();
    emit(
        out,
        &format!(
            "runs: {}\nmean best fitness by generation: [{}]\nall pass rate: {:.3}\n",
            result.runs(),
            curve.join(", "),
            result.all_pass_rate()
        ),
    )
}

fn stability(input: Option<&Path>, simulate: Option<&str>, dir: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let (ratings, scores) = match (input, simulate) {
        (Some(path), None) => {
            if !path.is_file() {
                return Err(usage(format!("{} does not exist", path.display())));
            }
            (RatingsMatrix::read_csv(path).map_err(domain)?, None)
        }
        (None, Some(name)) => {
            let scores = load_scenario(name)?.run_stability().map_err(domain)?;
            (scores.to_ratings().map_err(domain)?, Some(scores))
        }
        _ => return Err(usage("exactly one of --input or --simulate is required")),
    };
    let report = stability_report(&ratings);
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(domain)?;
        fs::write(dir.join("stability.json"), canonical_json(&report) + "\n").map_err(domain)?;
        fs::write(dir.join("stability.txt"), report.to_text()).map_err(domain)?;
        if let Some(scores) = &scores {
            let f = fs::File::create(dir.join("scores.csv")).map_err(domain)?;
            scores.write_csv(f).map_err(domain)?;
        }
    }
    emit(out, &report.to_text())
}

fn run_dir(run: &Path) -> Result<(), CliError> {
    if run.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{} is not a directory", run.display())))
    }
}

fn report(run: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    run_dir(run)?;
    let text = finish_report(run)?;
    emit(out, &text)
}

fn replay_cmd(run: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    run_dir(run)?;
    match replay(run).map_err(domain)? {
        ReplayOutcome::Complete(r) => {
            emit(out, &format!("run {}: {} events, log hash {}\n", r.run_id, r.events, r.hash))?;
            if r.clean() {
                emit(out, "verdict: clean\n")
            } else {
                let mut text = format!("verdict: {} violation(s)\n", r.violations.len());
                for v in &r.violations {
                    text.push_str(&format!("  {v}\n"));
                }
                emit(out, &text)?;
                Err(domain("replay found violations"))
            }
        }
        ReplayOutcome::Truncated(state) => {
            emit(out, &(serde_json::to_string_pretty(&state).map_err(domain)? + "\n"))?;
            Err(domain("run log has no run_end; printed resumable state"))
        }
    }
}

fn batch(runs: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for r in runs {
        run_dir(r)?;
        match replay(r).map_err(domain)? {
            ReplayOutcome::Complete(run) => reports.push(build_report(&run)),
            ReplayOutcome::Truncated(_) => return Err(domain(format!("{} is incomplete", r.display()))),
        }
    }
    let b = batch_report(&reports).ok_or_else(|| usage("no runs given"))?;
    emit(out, &(serde_json::to_string_pretty(&b).map_err(domain)? + "\n"))
}
