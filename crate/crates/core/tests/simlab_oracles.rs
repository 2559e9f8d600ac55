use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use made_core::domain::{aggregate_fitness, Artifact, Evaluation};
use made_core::simlab::{
    noisy_judge, perturb_artifact, rule_judge, stability_experiment, synthesize_child, CreatorGuidance, NoiseModel,
    PerturbationConfig, PerturbationKind, RulePredicate, RuleSet, Scenario, SimRng, StabilityCase,
};
use serde::Deserialize;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/simlab")
}

#[derive(Deserialize)]
struct Trace {
    raw_seed_7: Vec<String>,
    uniform_seed_7: Vec<f64>,
    series: Vec<f64>,
    noise: Series,
    scale: Scaled,
}

#[derive(Deserialize)]
struct Series {
    sigma: f64,
    seed: u64,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct Scaled {
    min: f64,
    max: f64,
    seed: u64,
    values: Vec<f64>,
}

fn trace() -> Trace {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("rng_trace.json")).unwrap()).unwrap()
}

fn numbers(artifact: &Artifact) -> Vec<f64> {
    artifact
        .as_text()
        .unwrap()
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|s| s.trim().parse().unwrap())
        .collect()
}

fn series_text(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|v| v.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn generator_matches_reference_trace() {
    let t = trace();
    let mut rng = SimRng::seed_from(7);
    let raw: Vec<String> = (0..8).map(|_| rng.next_u64().to_string()).collect();
    assert_eq!(raw, t.raw_seed_7);
    let mut rng = SimRng::seed_from(7);
    let uni: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
    assert_eq!(uni, t.uniform_seed_7);
}

#[test]
fn gaussian_perturbation_matches_reference_trace() {
    let t = trace();
    let pc = PerturbationConfig { kind: PerturbationKind::GaussianNoise { sigma: t.noise.sigma }, seed: t.noise.seed };
    let out = perturb_artifact(&Artifact::text(series_text(&t.series)), &pc).unwrap();
    let got = numbers(&out);
    assert_eq!(got.len(), t.noise.values.len());
    // ln and cos come from the platform math library on both sides.
    for (g, e) in got.iter().zip(&t.noise.values) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}

#[test]
fn scale_perturbation_matches_reference_trace() {
    let t = trace();
    let pc = PerturbationConfig { kind: PerturbationKind::Scale { min: t.scale.min, max: t.scale.max }, seed: t.scale.seed };
    let out = perturb_artifact(&Artifact::text(series_text(&t.series)), &pc).unwrap();
    assert_eq!(numbers(&out), t.scale.values);
}

#[derive(Deserialize)]
struct ToyVectors {
    vectors: BTreeMap<String, Vec<u8>>,
}

#[test]
fn toy_rules_match_predicate_oracle() {
    let rules = Scenario::builtin("toy").unwrap().rule_set().unwrap();
    let v: ToyVectors =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("toy_vectors.json")).unwrap()).unwrap();
    assert_eq!(v.vectors.len(), 8);
    for (name, expected) in &v.vectors {
        let text = std::fs::read_to_string(fixtures().join("toy_artifacts").join(name)).unwrap();
        let eval = rule_judge(&Artifact::text(text), &rules).unwrap();
        assert_eq!(&eval.scores, expected, "{name}");
        let failed: Vec<&String> = rules
            .rules()
            .iter()
            .zip(expected)
            .filter(|(_, &s)| s == 0)
            .map(|(r, _)| &r.id)
            .collect();
        assert_eq!(eval.feedback.notes.keys().collect::<Vec<_>>(), failed, "{name}");
    }
}

fn markers(k: usize) -> RuleSet {
    RuleSet::new((0..k).map(|i| RulePredicate::contains(format!("m{i:02}"), format!("marker-{i:02}"))).collect()).unwrap()
}

fn all_ones(rules: &RuleSet) -> Evaluation {
    let text: String = (0..rules.len()).map(|i| format!("marker-{i:02}\n")).collect();
    rule_judge(&Artifact::text(text), rules).unwrap()
}

#[test]
fn flip_rate_matches_binomial_expectation() {
    let rules = markers(10);
    let base = all_ones(&rules);
    let nm = NoiseModel::new(0.02, 0.15).unwrap();
    let mut rng = SimRng::seed_from(7);
    let trials = 10_000;
    let flips: usize = (0..trials)
        .map(|_| noisy_judge(&base, &rules, &nm, &mut rng).scores.iter().filter(|&&v| v == 0).count())
        .sum();
    let rate = flips as f64 / (trials * 10) as f64;
    assert!((rate - 0.02).abs() <= 0.005, "flip rate {rate}");
}

#[test]
fn aggregate_variance_tracks_flip_probability() {
    let rules = markers(10);
    let ones = all_ones(&rules);
    let zeros = rule_judge(&Artifact::text("nothing here"), &rules).unwrap();
    let nm = NoiseModel::new(0.02, 0.15).unwrap();
    let mut rng = SimRng::seed_from(99);
    let var = |base: &Evaluation, rng: &mut SimRng| {
        let xs: Vec<f64> =
            (0..20_000).map(|_| aggregate_fitness(&noisy_judge(base, &rules, &nm, rng).scores).unwrap()).collect();
        let mu = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (vs, vu) = (var(&ones, &mut rng), var(&zeros, &mut rng));
    let k = 10.0;
    let (es, eu) = (k * 0.02 * 0.98 / (k * k), k * 0.15 * 0.85 / (k * k));
    assert!((vs - es).abs() / es < 0.1, "{vs} vs {es}");
    assert!((vu - eu).abs() / eu < 0.1, "{vu} vs {eu}");
    assert!(vs < vu);
}

#[test]
fn certain_and_zero_noise() {
    let rules = markers(6);
    let base = rule_judge(&Artifact::text("marker-00 marker-03"), &rules).unwrap();
    let mut rng = SimRng::seed_from(1);
    let same = noisy_judge(&base, &rules, &NoiseModel::zero(), &mut rng);
    assert_eq!(same, base);
    let flipped = noisy_judge(&base, &rules, &NoiseModel::new(1.0, 1.0).unwrap(), &mut rng);
    let complement: Vec<u8> = base.scores.iter().map(|v| 1 - v).collect();
    assert_eq!(flipped.scores, complement);
    assert_eq!(flipped.feedback.notes.len(), complement.iter().filter(|&&v| v == 0).count());
}

#[test]
fn expected_repairs_match_binomial_mean() {
    let rules = Scenario::builtin("toy").unwrap().rule_set().unwrap();
    // Satisfies everything except r1, r6 and r7.
    let parent = "Summary: version 1.2 is out with many fixes for users.\n".to_string();
    let eval = rule_judge(&Artifact::text(parent.clone()), &rules).unwrap();
    assert_eq!(eval.scores, vec![0, 1, 1, 1, 1, 0, 0, 1]);
    let mut rng = SimRng::seed_from(2024);
    let trials = 10_000;
    let total: usize = (0..trials)
        .map(|_| synthesize_child(&rules, &parent, CreatorGuidance::Feedback(&eval.feedback), 0.6, &mut rng).repaired.len())
        .sum();
    let mean = total as f64 / trials as f64;
    // Binomial(3, 0.6): mean 1.8, standard error of the mean about 0.0085.
    assert!((mean - 1.8).abs() < 0.03, "{mean}");
}

#[test]
fn stability_shape_and_zero_noise() {
    let rules = markers(4);
    let case = StabilityCase {
        id: "only".into(),
        artifact: Artifact::text("marker-00 marker-01"),
        rules,
        quality: 0.5,
    };
    let s = stability_experiment(std::slice::from_ref(&case), &NoiseModel::zero(), 5, 3).unwrap();
    assert_eq!(s.scores, vec![vec![0.5; 5]]);
    assert!(stability_experiment(&[case], &NoiseModel::zero(), 1, 3).is_err());
}
