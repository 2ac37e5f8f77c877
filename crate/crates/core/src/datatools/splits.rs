use std::collections::{BTreeMap, HashMap};

use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataToolError;
use crate::data::{Dataset, Split, SplitAssignment};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Ratios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, DataToolError> {
        let r = Ratios { train, dev, test };
        let a = r.as_array();
        if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataToolError::BadRatios(a));
        }
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }
}

impl std::str::FromStr for Ratios {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad ratio `{p}`")))
            .collect::<Result<_, _>>()?;
        if v.len() != 3 {
            return Err(format!("ratios `{s}` must have three values"));
        }
        Ratios::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
    }
}

/// Seeded shuffle, then the first `round(train·n)` records go to train, the
/// next `round(dev·n)` to dev and the remainder to test.
pub fn split_random(dataset: &Dataset, ratios: Ratios, seed: u64) -> Result<SplitAssignment, DataToolError> {
    let ratios = Ratios::new(ratios.train, ratios.dev, ratios.test)?;
    let n = dataset.len();
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_dev = ((ratios.dev * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split-random"));
    let mut assignment = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            assignment[i] = Split::Train;
        } else if rank < n_train + n_dev {
            assignment[i] = Split::Dev;
        }
    }
    Ok(SplitAssignment::new(assignment))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// No subject string appears in two splits.
    #[default]
    Subject,
    /// No entity string (subject or object) appears in two splits.
    Entity,
}

impl std::str::FromStr for Strictness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subject" => Ok(Strictness::Subject),
            "entity" => Ok(Strictness::Entity),
            other => Err(format!("unknown strictness `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSplit {
    pub assignment: SplitAssignment,
    pub groups: usize,
    pub warnings: Vec<String>,
}

/// Groups of record indices that must share a split, in first-seen order.
fn groups(dataset: &Dataset, strictness: Strictness) -> Vec<Vec<usize>> {
    match strictness {
        Strictness::Subject => {
            let mut order: Vec<&str> = Vec::new();
            let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, r) in dataset.records.iter().enumerate() {
                let s = r.triple.subject();
                by_subject
                    .entry(s)
                    .or_insert_with(|| {
                        order.push(s);
                        Vec::new()
                    })
                    .push(i);
            }
            order.into_iter().map(|s| by_subject.remove(s).expect("present")).collect()
        }
        Strictness::Entity => {
            let mut ids: HashMap<&str, usize> = HashMap::new();
            for r in &dataset.records {
                for e in [r.triple.subject(), r.triple.object()] {
                    let next = ids.len();
                    ids.entry(e).or_insert(next);
                }
            }
            let mut uf = UnionFind::<usize>::new(ids.len());
            for r in &dataset.records {
                uf.union(ids[r.triple.subject()], ids[r.triple.object()]);
            }
            let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut first_seen: Vec<usize> = Vec::new();
            for (i, r) in dataset.records.iter().enumerate() {
                let root = uf.find(ids[r.triple.subject()]);
                by_root
                    .entry(root)
                    .or_insert_with(|| {
                        first_seen.push(root);
                        Vec::new()
                    })
                    .push(i);
            }
            first_seen.into_iter().map(|root| by_root.remove(&root).expect("present")).collect()
        }
    }
}

/// Concept-disjoint split. Groups are shuffled with the seed, stably sorted
/// by size (largest first), and each goes to the split furthest below its
/// target size.
pub fn split_concept(
    dataset: &Dataset,
    ratios: Ratios,
    seed: u64,
    strictness: Strictness,
) -> Result<ConceptSplit, DataToolError> {
    let ratios = Ratios::new(ratios.train, ratios.dev, ratios.test)?;
    let n = dataset.len() as f64;
    let mut groups = groups(dataset, strictness);
    groups.shuffle(&mut substream(seed, "split-concept"));
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let targets = ratios.as_array().map(|r| r * n);
    let largest = targets.iter().cloned().fold(0.0, f64::max);
    let mut filled = [0usize; 3];
    let mut assignment = vec![Split::Train; dataset.len()];
    let mut warnings = Vec::new();
    for g in &groups {
        if g.len() as f64 > largest {
            let r = &dataset.records[g[0]].triple;
            let msg = format!(
                "group of {} records containing `{}` exceeds the largest split target {:.1}",
                g.len(),
                r.subject(),
                largest
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut pick = 0;
        let mut best = f64::NEG_INFINITY;
        for (k, (&t, &f)) in targets.iter().zip(&filled).enumerate() {
            let deficit = t - f as f64;
            if deficit > best {
                best = deficit;
                pick = k;
            }
        }
        filled[pick] += g.len();
        for &i in g {
            assignment[i] = Split::ALL[pick];
        }
    }
    Ok(ConceptSplit {
        assignment: SplitAssignment::new(assignment),
        groups: groups.len(),
        warnings,
    })
}
