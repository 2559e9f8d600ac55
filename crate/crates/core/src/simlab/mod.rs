//! Deterministic and seeded-stochastic stand-ins for the three agents, plus
//! artifact perturbation models. Used to exercise the full loop, the
//! feedback ablation, and judge-stability studies without a network.
//!
//! # Randomness
//!
//! All randomness flows through [`SimRng`]: xoshiro256++ whose 256-bit state
//! is filled by four successive SplitMix64 outputs of the 64-bit seed.
//! Uniform doubles are `(next_u64 >> 11) * 2^-53`; Bernoulli(p) is
//! `uniform < p`; integers below `n` are `floor(uniform * n)`; standard
//! normals use Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one normal per
//! pair of uniforms. Each simulated call owns a stream seeded from its
//! [`CallContext`](crate::agents::CallContext).

mod campaign;
mod creator;
mod judge;
mod perturb;
mod rules;
mod scenario;
mod stability;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

pub use campaign::{run_campaign, CampaignError, CampaignResult};
pub use creator::{synthesize_child, CreatorGuidance, Offspring, SyntheticCreator};
pub use judge::{noisy_judge, rule_judge, NoiseModel, SimJudge, NOISY_RULE_JUDGE, RULE_JUDGE};
pub use perturb::{perturb_artifact, PerturbationConfig, PerturbationKind};
pub use rules::{PredicateKind, RulePredicate, RuleSet};
pub use scenario::{CreatorParams, Scenario, SimAgents, SimDecomposer, StabilityParams, BUILTIN_SCENARIOS};
pub use stability::{default_stability_cases, stability_experiment, StabilityCase, StabilityScores};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid rule {id}: {reason}")]
    InvalidRule { id: String, reason: String },

    #[error("unsupported artifact: {0}")]
    UnsupportedArtifact(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

#[derive(Debug, Clone)]
pub struct SimRng(Xoshiro256PlusPlus);

impl SimRng {
    pub fn seed_from(seed: u64) -> Self {
        SimRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = SimRng::seed_from(3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn bernoulli_edges() {
        let mut r = SimRng::seed_from(5);
        assert!((0..1000).all(|_| !r.bernoulli(0.0)));
        assert!((0..1000).all(|_| r.bernoulli(1.0)));
    }

    #[test]
    fn gaussian_moments() {
        let mut r = SimRng::seed_from(11);
        let xs: Vec<f64> = (0..200_000).map(|_| r.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }
}
