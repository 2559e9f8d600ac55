//! Solution → artifact rendering.
//!
//! Text solutions render to themselves. Code solutions are written to a fresh
//! temporary directory and executed through a command template with a
//! timeout, a scrubbed environment, and its own process group. If the command
//! leaves a `manifest.json` (the render harness contract) that manifest
//! decides the outcome; otherwise the exit status and declared output file do.
//!
//! Rendering never returns an error: every failure becomes a
//! [`RenderFailure`] so the engine can eliminate the individual.

use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Artifact, CapturedOutput, Solution, SolutionContent};

/// Bytes kept from each of stdout and stderr.
pub const EXCERPT_BYTES: usize = 8 * 1024;
pub const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_TIMEOUT_SECS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    #[default]
    Identity,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    pub kind: RendererKind,
    /// Shell command with `{solution_file}`, `{out_dir}`, `{output_name}` and
    /// `{timeout}` placeholders.
    pub command: Option<String>,
    pub timeout_secs: f64,
    /// File the command is expected to produce inside `{out_dir}`.
    pub output_name: String,
    /// Environment variables passed through to the command.
    pub env_allowlist: Vec<String>,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            kind: RendererKind::Identity,
            command: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            output_name: "out.png".into(),
            env_allowlist: vec!["PATH".into(), "LANG".into(), "LC_ALL".into()],
        }
    }
}

impl RendererConfig {
    pub fn command(template: impl Into<String>) -> Self {
        Self {
            kind: RendererKind::Command,
            command: Some(template.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        if self.kind == RendererKind::Command && self.command.as_deref().map_or(true, |c| c.trim().is_empty()) {
            return Err("command renderer requires a command template".into());
        }
        if self.output_name.is_empty() || self.output_name.contains('/') {
            return Err(format!("output name {:?} must be a plain file name", self.output_name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NonzeroExit,
    Timeout,
    MissingOutput,
    HarnessError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderFailure {
    pub reason: FailureReason,
    pub detail: String,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

impl RenderFailure {
    fn new(reason: FailureReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
            exit_code: None,
            stdout: String::new(),
            stderr: String::new(),
        }
    }

    fn with_output(mut self, captured: &CapturedOutput) -> Self {
        self.stdout = captured.stdout.clone();
        self.stderr = captured.stderr.clone();
        self
    }
}

impl std::fmt::Display for RenderFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.reason, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessStatus {
    Ok,
    NonzeroExit,
    Timeout,
    MissingOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestOutput {
    /// Relative to the directory holding the manifest.
    pub path: String,
    pub digest: String,
}

/// Result manifest written by the render harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessManifest {
    pub status: HarnessStatus,
    pub output: Option<ManifestOutput>,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    pub wall_time_secs: f64,
}

impl HarnessManifest {
    pub fn parse(raw: &str) -> Result<Self, String> {
        let m: HarnessManifest = serde_json::from_str(raw).map_err(|e| format!("invalid manifest: {e}"))?;
        if m.status == HarnessStatus::Ok && m.output.is_none() {
            return Err("manifest status ok without an output entry".into());
        }
        if !(m.wall_time_secs >= 0.0) {
            return Err("manifest wall time is negative".into());
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 hex of a text artifact's body or a file artifact's bytes.
pub fn digest(artifact: &Artifact) -> io::Result<String> {
    match artifact {
        Artifact::Text { body } => Ok(sha256_hex(body.as_bytes())),
        Artifact::File { path, .. } => Ok(sha256_hex(&fs::read(path)?)),
    }
}

/// Checks the artifact invariants: nonempty text, or an existing file whose
/// bytes match the recorded digest.
pub fn verify_artifact(artifact: &Artifact) -> Result<(), String> {
    match artifact {
        Artifact::Text { body } if body.is_empty() => Err("text artifact is empty".into()),
        Artifact::Text { .. } => Ok(()),
        Artifact::File { path, digest: recorded, .. } => {
            let actual = digest(artifact).map_err(|e| format!("{}: {e}", path.display()))?;
            if &actual != recorded {
                return Err(format!("digest mismatch for {}", path.display()));
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Renderer {
    cfg: RendererConfig,
}

impl Renderer {
    pub fn new(cfg: RendererConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn identity() -> Self {
        Self { cfg: RendererConfig::default() }
    }

    pub fn config(&self) -> &RendererConfig {
        &self.cfg
    }

    /// Renders into an artifact. Command renders copy the declared output into
    /// `artifact_dir`; identity renders never touch the filesystem.
    pub fn render(&self, solution: &Solution, artifact_dir: &Path) -> Result<Artifact, RenderFailure> {
        match self.cfg.kind {
            RendererKind::Identity => {
                let body = solution.content.body();
                if body.is_empty() {
                    return Err(RenderFailure::new(FailureReason::HarnessError, "empty solution body"));
                }
                Ok(Artifact::text(body))
            }
            RendererKind::Command => self.render_command(solution, artifact_dir),
        }
    }

    fn render_command(&self, solution: &Solution, artifact_dir: &Path) -> Result<Artifact, RenderFailure> {
        let harness_err = |what: &str, e: &dyn std::fmt::Display| {
            RenderFailure::new(FailureReason::HarnessError, format!("{what}: {e}"))
        };
        let work = tempfile::Builder::new()
            .prefix("made-render-")
            .tempdir()
            .map_err(|e| harness_err("creating work dir", &e))?;
        let out_dir = work.path().join("out");
        fs::create_dir(&out_dir).map_err(|e| harness_err("creating out dir", &e))?;
        let solution_file = work.path().join(solution_file_name(&solution.content));
        fs::write(&solution_file, solution.content.body()).map_err(|e| harness_err("writing solution", &e))?;

        let template = self.cfg.command.as_deref().unwrap_or_default();
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let script = expand_command(
            template,
            &solution_file,
            &out_dir,
            &self.cfg.output_name,
            self.cfg.timeout_secs,
        );

        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(&script)
            .current_dir(work.path())
            .env_clear()
            .env("HOME", work.path())
            .env("TMPDIR", work.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for key in &self.cfg.env_allowlist {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }
        let run = run_with_timeout(cmd, timeout).map_err(|e| harness_err("spawning command", &e))?;
        let captured = run.captured.clone();

        let manifest_path = [work.path().join(MANIFEST_FILE), out_dir.join(MANIFEST_FILE)]
            .into_iter()
            .find(|p| p.is_file());
        if let Some(manifest_path) = manifest_path {
            return self.from_manifest(&manifest_path, artifact_dir, &captured);
        }

        let status = match run.status {
            None => {
                return Err(RenderFailure::new(
                    FailureReason::Timeout,
                    format!("killed after {:.1}s", self.cfg.timeout_secs),
                )
                .with_output(&captured))
            }
            Some(s) => s,
        };
        if !status.success() {
            let mut f = RenderFailure::new(FailureReason::NonzeroExit, format!("command exited with {status}"))
                .with_output(&captured);
            f.exit_code = status.code();
            return Err(f);
        }
        let produced = [out_dir.join(&self.cfg.output_name), work.path().join(&self.cfg.output_name)]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| {
                RenderFailure::new(
                    FailureReason::MissingOutput,
                    format!("{} was not produced", self.cfg.output_name),
                )
                .with_output(&captured)
            })?;
        self.keep(&produced, artifact_dir, None, captured)
    }

    fn from_manifest(
        &self,
        manifest_path: &Path,
        artifact_dir: &Path,
        process_output: &CapturedOutput,
    ) -> Result<Artifact, RenderFailure> {
        let raw = fs::read_to_string(manifest_path).map_err(|e| {
            RenderFailure::new(FailureReason::HarnessError, format!("reading manifest: {e}")).with_output(process_output)
        })?;
        let manifest = HarnessManifest::parse(&raw)
            .map_err(|e| RenderFailure::new(FailureReason::HarnessError, e).with_output(process_output))?;
        let captured = CapturedOutput {
            stdout: truncate(&manifest.stdout),
            stderr: truncate(&manifest.stderr),
        };
        let reason = match manifest.status {
            HarnessStatus::Ok => None,
            HarnessStatus::NonzeroExit => Some(FailureReason::NonzeroExit),
            HarnessStatus::Timeout => Some(FailureReason::Timeout),
            HarnessStatus::MissingOutput => Some(FailureReason::MissingOutput),
        };
        if let Some(reason) = reason {
            return Err(RenderFailure::new(reason, "reported by harness manifest").with_output(&captured));
        }
        let output = manifest.output.as_ref().expect("checked by parse");
        let rel = Path::new(&output.path);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(RenderFailure::new(
                FailureReason::HarnessError,
                format!("manifest output path {} leaves the work dir", output.path),
            ));
        }
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let file = base.join(rel);
        if !file.is_file() {
            return Err(RenderFailure::new(
                FailureReason::HarnessError,
                format!("manifest names missing output {}", output.path),
            )
            .with_output(&captured));
        }
        self.keep(&file, artifact_dir, Some(&output.digest), captured)
    }

    fn keep(
        &self,
        produced: &Path,
        artifact_dir: &Path,
        expected_digest: Option<&str>,
        captured: CapturedOutput,
    ) -> Result<Artifact, RenderFailure> {
        let bytes = fs::read(produced).map_err(|e| {
            RenderFailure::new(FailureReason::HarnessError, format!("reading output: {e}"))
        })?;
        let digest = sha256_hex(&bytes);
        if let Some(expected) = expected_digest {
            if !expected.eq_ignore_ascii_case(&digest) {
                return Err(RenderFailure::new(
                    FailureReason::HarnessError,
                    format!("output digest {digest} does not match manifest {expected}"),
                )
                .with_output(&captured));
            }
        }
        fs::create_dir_all(artifact_dir).map_err(|e| {
            RenderFailure::new(FailureReason::HarnessError, format!("creating artifact dir: {e}"))
        })?;
        let name = produced.file_name().map(PathBuf::from).unwrap_or_else(|| self.cfg.output_name.clone().into());
        let dest = artifact_dir.join(name);
        fs::write(&dest, &bytes).map_err(|e| {
            RenderFailure::new(FailureReason::HarnessError, format!("storing artifact: {e}"))
        })?;
        Ok(Artifact::File { path: dest, digest, captured })
    }
}

fn solution_file_name(content: &SolutionContent) -> String {
    let ext = match content {
        SolutionContent::Text { .. } => "txt",
        SolutionContent::Code { runtime, .. } => match runtime.to_ascii_lowercase().as_str() {
            "python" | "python3" | "py" => "py",
            "sh" | "bash" | "shell" => "sh",
            "node" | "javascript" | "js" => "js",
            "rust" | "rs" => "rs",
            _ => "txt",
        },
    };
    format!("solution.{ext}")
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn expand_command(template: &str, solution_file: &Path, out_dir: &Path, output_name: &str, timeout: f64) -> String {
    template
        .replace("{solution_file}", &shell_quote(&solution_file.to_string_lossy()))
        .replace("{out_dir}", &shell_quote(&out_dir.to_string_lossy()))
        .replace("{output_name}", &shell_quote(output_name))
        .replace("{timeout}", &format!("{timeout}"))
}

fn truncate(s: &str) -> String {
    if s.len() <= EXCERPT_BYTES {
        return s.to_string();
    }
    let mut end = EXCERPT_BYTES;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

struct RunOutcome {
    /// None when the process was killed for exceeding the timeout.
    status: Option<ExitStatus>,
    captured: CapturedOutput,
}

fn spawn_reader<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 4096];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = EXCERPT_BYTES.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn kill_group(child: &Child) {
    // The child leads its own process group, so this reaches grandchildren too.
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
}

fn run_with_timeout(mut cmd: Command, timeout: Duration) -> io::Result<RunOutcome> {
    let mut child = cmd.spawn()?;
    let out = spawn_reader(child.stdout.take().expect("piped stdout"));
    let err = spawn_reader(child.stderr.take().expect("piped stderr"));
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if started.elapsed() >= timeout {
            kill_group(&child);
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(10));
    };
    if status.is_some() {
        // Reap stragglers still holding the pipes open.
        kill_group(&child);
    }
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    Ok(RunOutcome {
        status,
        captured: CapturedOutput {
            stdout: String::from_utf8_lossy(&stdout).into_owned(),
            stderr: String::from_utf8_lossy(&stderr).into_owned(),
        },
    })
}
