use std::io;

use super::{noisy_judge, rule_judge, NoiseModel, RulePredicate, RuleSet, SimError, SimRng};
use crate::agents::{CallContext, CallKind};
use crate::domain::{aggregate_fitness, Artifact};
use crate::stats::{write_long_csv, RatingsMatrix, StatsError};

#[derive(Debug, Clone)]
pub struct StabilityCase {
    pub id: String,
    pub artifact: Artifact,
    pub rules: RuleSet,
    /// Noise-free aggregate score of the artifact.
    pub quality: f64,
}

/// `n` cases over `k` marker rules; case `i` satisfies the first
/// `round(i·k/(n−1))` of them, so quality climbs evenly from 0 to 1.
pub fn default_stability_cases(n: usize, k: usize) -> Result<Vec<StabilityCase>, SimError> {
    if n < 2 || k == 0 {
        return Err(SimError::Scenario(format!("need at least 2 cases and 1 rule, got {n} and {k}")));
    }
    let markers: Vec<String> = (1..=k).map(|j| format!("marker-{j:02}")).collect();
    let rules = RuleSet::new(
        markers
            .iter()
            .enumerate()
            .map(|(j, m)| RulePredicate::contains(format!("r{}", j + 1), m.clone()))
            .collect(),
    )?;
    (0..n)
        .map(|i| {
            let satisfied = ((i * k) as f64 / (n - 1) as f64).round() as usize;
            let mut lines = vec![format!("Case {}", i + 1)];
            lines.extend(markers[..satisfied].iter().cloned());
            let artifact = Artifact::text(lines.join("\n"));
            let quality = aggregate_fitness(&rule_judge(&artifact, &rules)?.scores)?;
            Ok(StabilityCase { id: format!("case-{:02}", i + 1), artifact, rules: rules.clone(), quality })
        })
        .collect()
}

/// Cases × repeats of noisy aggregate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityScores {
    pub case_ids: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl StabilityScores {
    pub fn to_ratings(&self) -> Result<RatingsMatrix, StatsError> {
        RatingsMatrix::with_ids(self.case_ids.clone(), self.scores.clone())
    }

    /// `case_id,repeat,score` rows.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), StatsError> {
        write_long_csv(&self.case_ids, &self.scores, writer)
    }
}

/// Judges every case `repeats` times under `nm`. Repeat `j` of case `i`
/// draws from the stream of `CallContext(seed, i, j, judge)`.
pub fn stability_experiment(
    cases: &[StabilityCase],
    nm: &NoiseModel,
    repeats: usize,
    seed: u64,
) -> Result<StabilityScores, SimError> {
    if repeats < 2 {
        return Err(SimError::Scenario(format!("need at least 2 repeats, got {repeats}")));
    }
    nm.validate()?;
    let mut scores = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let base = rule_judge(&case.artifact, &case.rules)?;
        let row = (0..repeats)
            .map(|j| {
                let ctx = CallContext::new(seed, i as u32, j as u32, CallKind::Judge);
                let mut rng = SimRng::seed_from(ctx.stream_seed());
                let eval = noisy_judge(&base, &case.rules, nm, &mut rng);
                aggregate_fitness(&eval.scores)
            })
            .collect::<Result<Vec<_>, _>>()?;
        scores.push(row);
    }
    Ok(StabilityScores { case_ids: cases.iter().map(|c| c.id.clone()).collect(), scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{sample_std, stability_report};

    #[test]
    fn default_cases_span_quality() {
        let cases = default_stability_cases(15, 10).unwrap();
        assert_eq!(cases.len(), 15);
        assert_eq!(cases[0].quality, 0.0);
        assert_eq!(cases[14].quality, 1.0);
        assert!(cases.windows(2).all(|w| w[0].quality <= w[1].quality));
    }

    #[test]
    fn zero_noise_zero_std() {
        let cases = default_stability_cases(15, 10).unwrap();
        let s = stability_experiment(&cases, &NoiseModel::zero(), 5, 42).unwrap();
        for (row, case) in s.scores.iter().zip(&cases) {
            assert_eq!(sample_std(row), 0.0);
            assert!(row.iter().all(|&v| v == case.quality));
        }
    }

    #[test]
    fn single_case_shape() {
        let cases = default_stability_cases(2, 4).unwrap();
        let s = stability_experiment(&cases[..1], &NoiseModel::default(), 5, 1).unwrap();
        assert_eq!(s.scores.len(), 1);
        assert_eq!(s.scores[0].len(), 5);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn repeats_below_two_rejected() {
        let cases = default_stability_cases(2, 2).unwrap();
        assert!(stability_experiment(&cases, &NoiseModel::default(), 1, 0).is_err());
    }

    #[test]
    fn default_experiment_correlation_negative() {
        let cases = default_stability_cases(15, 10).unwrap();
        let s = stability_experiment(&cases, &NoiseModel::default(), 5, 42).unwrap();
        let rep = stability_report(&s.to_ratings().unwrap());
        assert!(rep.correlation.unwrap().r < 0.0);
    }
}
