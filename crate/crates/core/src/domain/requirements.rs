use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::DomainError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub assertion: String,
    #[serde(default)]
    pub prerequisites: Vec<String>,
}

impl Requirement {
    pub fn new(id: impl Into<String>, assertion: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            assertion: assertion.into(),
            prerequisites: Vec::new(),
        }
    }

    pub fn requires<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.prerequisites.extend(ids.into_iter().map(Into::into));
        self
    }
}

/// An ordered, validated set of requirements. Position in the set is the
/// index into every scoring vector evaluated against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSet", into = "RawSet")]
pub struct RequirementSet {
    requirements: Vec<Requirement>,
}

#[derive(Serialize, Deserialize)]
struct RawSet {
    requirements: Vec<Requirement>,
    #[serde(default)]
    k: Option<usize>,
}

impl TryFrom<RawSet> for RequirementSet {
    type Error = DomainError;

    fn try_from(raw: RawSet) -> Result<Self, Self::Error> {
        if let Some(k) = raw.k {
            if k != raw.requirements.len() {
                return Err(DomainError::InvalidInput(format!(
                    "declared k={k} but {} requirements listed",
                    raw.requirements.len()
                )));
            }
        }
        validate_requirement_set(raw.requirements)
    }
}

impl From<RequirementSet> for RawSet {
    fn from(set: RequirementSet) -> Self {
        let k = Some(set.requirements.len());
        RawSet {
            requirements: set.requirements,
            k,
        }
    }
}

impl RequirementSet {
    pub fn k(&self) -> usize {
        self.requirements.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Requirement> {
        self.requirements.iter()
    }

    pub fn as_slice(&self) -> &[Requirement] {
        &self.requirements
    }

    pub fn get(&self, id: &str) -> Option<&Requirement> {
        self.index_of(id).map(|i| &self.requirements[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.requirements.iter().position(|r| r.id == id)
    }

    /// For each requirement, the indices of all transitive prerequisites.
    pub fn transitive_prerequisites(&self) -> Vec<BTreeSet<usize>> {
        let index: HashMap<&str, usize> = self
            .requirements
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut memo: Vec<Option<BTreeSet<usize>>> = vec![None; self.k()];
        fn visit(
            i: usize,
            reqs: &[Requirement],
            index: &HashMap<&str, usize>,
            memo: &mut Vec<Option<BTreeSet<usize>>>,
        ) -> BTreeSet<usize> {
            if let Some(done) = &memo[i] {
                return done.clone();
            }
            let mut acc = BTreeSet::new();
            for p in &reqs[i].prerequisites {
                let j = index[p.as_str()];
                acc.insert(j);
                acc.extend(visit(j, reqs, index, memo));
            }
            memo[i] = Some(acc.clone());
            acc
        }
        (0..self.k())
            .map(|i| visit(i, &self.requirements, &index, &mut memo))
            .collect()
    }
}

impl<'a> IntoIterator for &'a RequirementSet {
    type Item = &'a Requirement;
    type IntoIter = std::slice::Iter<'a, Requirement>;

    fn into_iter(self) -> Self::IntoIter {
        self.requirements.iter()
    }
}

/// Checks every requirement-set invariant and returns the canonical form
/// (trimmed ids and assertions, order preserved, duplicate prerequisite
/// references collapsed).
pub fn validate_requirement_set(
    requirements: Vec<Requirement>,
) -> Result<RequirementSet, DomainError> {
    if requirements.is_empty() {
        return Err(DomainError::EmptyRequirementSet);
    }
    let requirements: Vec<Requirement> = requirements
        .into_iter()
        .map(|r| {
            let mut seen = BTreeSet::new();
            Requirement {
                id: r.id.trim().to_string(),
                assertion: r.assertion.trim().to_string(),
                prerequisites: r
                    .prerequisites
                    .iter()
                    .map(|p| p.trim().to_string())
                    .filter(|p| seen.insert(p.clone()))
                    .collect(),
            }
        })
        .collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &requirements {
        if r.id.is_empty() {
            return Err(DomainError::InvalidInput("requirement with empty id".into()));
        }
        *counts.entry(r.id.as_str()).or_default() += 1;
    }
    let dups: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    if !dups.is_empty() {
        return Err(DomainError::DuplicateIds(dups));
    }

    for r in &requirements {
        if r.assertion.is_empty() {
            return Err(DomainError::EmptyAssertion { id: r.id.clone() });
        }
        let missing: Vec<String> = r
            .prerequisites
            .iter()
            .filter(|p| !counts.contains_key(p.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(DomainError::DanglingPrerequisite {
                id: r.id.clone(),
                missing,
            });
        }
    }

    if let Some(cycle) = find_cycle(&requirements) {
        return Err(DomainError::Cycle(cycle));
    }

    Ok(RequirementSet { requirements })
}

fn find_cycle(reqs: &[Requirement]) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let index: HashMap<&str, usize> = reqs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut marks = vec![Mark::New; reqs.len()];
    let mut stack: Vec<usize> = Vec::new();

    fn dfs(
        i: usize,
        reqs: &[Requirement],
        index: &HashMap<&str, usize>,
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        marks[i] = Mark::Active;
        stack.push(i);
        for p in &reqs[i].prerequisites {
            let j = index[p.as_str()];
            match marks[j] {
                Mark::Active => {
                    let start = stack.iter().position(|&s| s == j).unwrap();
                    return Some(stack[start..].iter().map(|&s| reqs[s].id.clone()).collect());
                }
                Mark::New => {
                    if let Some(c) = dfs(j, reqs, index, marks, stack) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        marks[i] = Mark::Done;
        None
    }

    for i in 0..reqs.len() {
        if marks[i] == Mark::New {
            if let Some(c) = dfs(i, reqs, &index, &mut marks, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}
