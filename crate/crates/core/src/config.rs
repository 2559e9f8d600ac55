//! TOML run configuration.
//!
//! ```toml
//! [evolution]
//! population_size = 4
//! max_generations = 3
//! seed = 7
//! feedback_mode = "full"
//!
//! [gateway]
//! prices = "prices.json"
//!
//! templates_dir = "prompts"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, LlmCreator, LlmDecomposer, LlmJudge, PromptTemplates, ScriptedBackend};
use crate::engine::EvolutionConfig;
use crate::gateway::{CallLedger, ChatBackend, Gateway, GatewayConfig, GatewayError, PriceTable};
use crate::render::RendererKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    /// JSON price table (model → per-token prices).
    pub prices: Option<PathBuf>,
    pub max_in_flight: usize,
    pub request_timeout_secs: f64,
    pub max_attempts: u32,
    pub budget_secs: f64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self { prices: None, max_in_flight: 4, request_timeout_secs: 120.0, max_attempts: 5, budget_secs: 600.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    pub gateway: GatewaySettings,
    pub templates_dir: Option<PathBuf>,
    /// JSON array of canned replies used instead of the network; for
    /// offline fixtures.
    pub scripted_replies: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(src: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(src)
            .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.gateway.prices, &mut cfg.templates_dir, &mut cfg.scripted_replies]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.evolution
            .validate()
            .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&src, path)
    }

    pub fn templates(&self) -> PromptTemplates {
        match &self.templates_dir {
            Some(dir) => PromptTemplates::from_dir(dir.clone()),
            None => PromptTemplates::builtin(),
        }
    }

    /// The scripted fixture when configured, otherwise the HTTP gateway
    /// (which needs `MADE_API_BASE`). Gateway calls are recorded in `ledger`.
    pub fn backend(&self, ledger: Arc<CallLedger>) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        if let Some(path) = &self.scripted_replies {
            return Ok(Arc::new(ScriptedBackend::from_file(path)?));
        }
        let prices = match &self.gateway.prices {
            Some(p) => PriceTable::load(p)?,
            None => PriceTable::default(),
        };
        let mut gc = GatewayConfig::from_env(prices)?;
        gc.max_in_flight = self.gateway.max_in_flight;
        gc.request_timeout = Duration::from_secs_f64(self.gateway.request_timeout_secs);
        gc.retry.max_attempts = self.gateway.max_attempts;
        gc.retry.budget = Duration::from_secs_f64(self.gateway.budget_secs);
        Ok(Arc::new(Gateway::new(gc).with_sink(ledger)))
    }

    pub fn llm_agents(&self, backend: Arc<dyn ChatBackend>) -> Result<LlmAgents, ConfigError> {
        let a = &self.evolution.agents;
        let templates = self.templates();
        let mut creator = LlmCreator::new(backend.clone(), a.creator.clone(), templates.clone())?;
        if self.evolution.renderer.kind == RendererKind::Command {
            creator = creator.producing_code("python");
        }
        Ok(LlmAgents {
            decomposer: LlmDecomposer::new(backend.clone(), a.decomposer.clone(), templates.clone())?,
            creator,
            judge: LlmJudge::new(backend, a.judge.clone(), templates)?,
        })
    }
}

pub struct LlmAgents {
    pub decomposer: LlmDecomposer,
    pub creator: LlmCreator,
    pub judge: LlmJudge,
}
