use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::engine::{run_evolution, Agents, EngineError, EvolutionConfig};
use crate::render::Renderer;
use crate::runstore::{RunStore, StoreError};

/// Best fitness per generation for each run of a campaign. Runs that stop
/// early are padded with their final value, since the best can only stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub seeds: Vec<u64>,
    pub curves: Vec<Vec<f64>>,
}

impl CampaignResult {
    pub fn runs(&self) -> usize {
        self.curves.len()
    }

    /// Mean best fitness at generation `t` across runs.
    pub fn mean_at(&self, t: usize) -> f64 {
        let n = self.curves.len().max(1) as f64;
        self.curves.iter().map(|c| c[t]).sum::<f64>() / n
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        let len = self.curves.first().map_or(0, Vec::len);
        (0..len).map(|t| self.mean_at(t)).collect()
    }

    pub fn all_pass_rate(&self) -> f64 {
        let n = self.curves.len().max(1) as f64;
        self.curves.iter().filter(|c| c.last() == Some(&1.0)).count() as f64 / n
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Sim(#[from] super::SimError),
    #[error("run with seed {seed}: {source}")]
    Run { seed: u64, source: EngineError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Runs `runs` evolutions of `scenario`, the i-th with seed `base.seed + i`.
pub fn run_campaign(scenario: &Scenario, base: &EvolutionConfig, runs: usize) -> Result<CampaignResult, CampaignError> {
    let instruction = scenario.instruction()?;
    let sim = scenario.agents()?;
    let agents = Agents { decomposer: &sim.decomposer, creator: &sim.creator, judge: &sim.judge };
    let renderer = Renderer::identity();
    let len = base.max_generations as usize + 1;
    let mut result = CampaignResult { seeds: Vec::with_capacity(runs), curves: Vec::with_capacity(runs) };
    for i in 0..runs as u64 {
        let seed = base.seed.wrapping_add(i);
        let cfg = EvolutionConfig { seed, ..base.clone() };
        let mut store = RunStore::in_memory(format!("campaign-{seed}"))?;
        let run = run_evolution(&instruction, &cfg, agents, &renderer, &mut store, None)
            .map_err(|source| CampaignError::Run { seed, source })?;
        let mut curve = run.curve();
        let last = *curve.last().expect("generation 0 always recorded");
        curve.resize(len, last);
        result.seeds.push(seed);
        result.curves.push(curve);
    }
    Ok(result)
}
