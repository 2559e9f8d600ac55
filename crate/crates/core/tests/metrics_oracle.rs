use made_core::domain::{
    aggregate_fitness, requirements_met, validate_requirement_set, Evaluation, FeedbackBundle, MetMode, Requirement,
    RequirementSet,
};
use made_core::simlab::SimRng;

struct Fixture {
    set: RequirementSet,
    /// Direct prerequisites by index.
    prereqs: Vec<Vec<usize>>,
}

/// A random DAG over k requirements: edges only point from a later position
/// to an earlier one in a shuffled order, so no cycle can form.
fn fixture(k: usize, rng: &mut SimRng) -> Fixture {
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let mut prereqs = vec![Vec::new(); k];
    for pos in 1..k {
        for earlier in 0..pos {
            if rng.bernoulli(0.3) {
                prereqs[order[pos]].push(order[earlier]);
            }
        }
    }
    let reqs = (0..k)
        .map(|i| {
            Requirement::new(format!("q{i}"), format!("Requirement number {i} holds."))
                .requires(prereqs[i].iter().map(|j| format!("q{j}")))
        })
        .collect();
    Fixture { set: validate_requirement_set(reqs).unwrap(), prereqs }
}

/// Requirement i counts when it is met and every direct prerequisite counts.
fn counts(i: usize, v: &[u8], prereqs: &[Vec<usize>], memo: &mut [Option<bool>]) -> bool {
    if let Some(c) = memo[i] {
        return c;
    }
    let c = v[i] == 1 && prereqs[i].iter().all(|&j| counts(j, v, prereqs, memo));
    memo[i] = Some(c);
    c
}

fn eval(v: Vec<u8>) -> Evaluation {
    Evaluation { scores: v, feedback: FeedbackBundle::default(), meta: None }
}

#[test]
fn exhaustive_enumeration_over_twenty_dags() {
    let mut rng = SimRng::seed_from(2024);
    let mut checked = 0usize;
    for f in 0..20 {
        let k = 1 + f % 10;
        let fx = fixture(k, &mut rng);
        for mask in 0u32..(1 << k) {
            let v: Vec<u8> = (0..k).map(|i| ((mask >> i) & 1) as u8).collect();
            let ones = mask.count_ones() as f64;
            let mut memo = vec![None; k];
            let dep = (0..k).filter(|&i| counts(i, &v, &fx.prereqs, &mut memo)).count() as f64;
            let e = eval(v.clone());
            assert_eq!(aggregate_fitness(&v).unwrap(), ones / k as f64);
            assert_eq!(requirements_met(&e, &fx.set, MetMode::Independent).unwrap(), ones / k as f64);
            let d = requirements_met(&e, &fx.set, MetMode::Dependent).unwrap();
            assert_eq!(d, dep / k as f64, "fixture {f} mask {mask:b}");
            checked += 1;
        }
    }
    // 2 * (2 + 4 + ... + 1024)
    assert_eq!(checked, 2 * ((1 << 11) - 2));
}

#[test]
fn chain_example() {
    let set = validate_requirement_set(vec![
        Requirement::new("r1", "a"),
        Requirement::new("r2", "b").requires(["r1"]),
        Requirement::new("r3", "c").requires(["r2"]),
    ])
    .unwrap();
    let d = requirements_met(&eval(vec![1, 0, 1]), &set, MetMode::Dependent).unwrap();
    assert_eq!(d, 1.0 / 3.0);
}
