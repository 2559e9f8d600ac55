use serde::{Deserialize, Serialize};

use super::{DomainError, Evaluation, RequirementSet};

/// Scalar fitness of a binary scoring vector: the fraction of satisfied
/// requirements.
pub fn aggregate_fitness(scores: &[u8]) -> Result<f64, DomainError> {
    if scores.is_empty() {
        return Err(DomainError::InvalidInput("empty score vector".into()));
    }
    let mut met: u64 = 0;
    for &v in scores {
        match v {
            0 => {}
            1 => met += 1,
            other => {
                return Err(DomainError::InvalidInput(format!("non-binary score {other}")));
            }
        }
    }
    // Both operands are exact integers, so the quotient is the correctly
    // rounded double of the rational met/k.
    Ok(met as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetMode {
    /// Every satisfied requirement counts.
    Independent,
    /// A requirement counts only if it and all of its transitive
    /// prerequisites are satisfied.
    Dependent,
}

pub fn requirements_met(
    evaluation: &Evaluation,
    requirements: &RequirementSet,
    mode: MetMode,
) -> Result<f64, DomainError> {
    let v = &evaluation.scores;
    if v.len() != requirements.k() {
        return Err(DomainError::LengthMismatch {
            expected: requirements.k(),
            got: v.len(),
        });
    }
    match mode {
        MetMode::Independent => aggregate_fitness(v),
        MetMode::Dependent => {
            aggregate_fitness(v)?;
            let closure = requirements.transitive_prerequisites();
            let met = closure
                .iter()
                .enumerate()
                .filter(|(i, pre)| v[*i] == 1 && pre.iter().all(|&j| v[j] == 1))
                .count();
            Ok(met as f64 / v.len() as f64)
        }
    }
}
