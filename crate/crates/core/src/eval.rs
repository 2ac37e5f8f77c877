//! Decision thresholds, classification metrics and pairwise-preference
//! precision.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Triple};
use crate::scoring::{Role, ScoreTriple};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no scores to evaluate")]
    Empty,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    #[default]
    Sweep,
    Bisection,
}

impl std::str::FromStr for ThresholdMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sweep" => Ok(ThresholdMethod::Sweep),
            "bisection" => Ok(ThresholdMethod::Bisection),
            other => Err(format!("unknown threshold method `{other}`")),
        }
    }
}

pub const BISECTION_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        (self.tp + self.tn) as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub threshold: f64,
    pub counts: Counts,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(l));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    Ok(())
}

/// Confusion counts with predictions `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Counts {
    let mut c = Counts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    confusion(scores, labels, threshold).f1()
}

/// Area under the ROC curve: probability that a positive outscores a
/// negative, ties counting one half. 0.5 when either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut neg_below, mut twice_correct) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_correct += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(0.5);
    }
    Ok(twice_correct as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn classification_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport, EvalError> {
    check(scores, labels)?;
    let counts = confusion(scores, labels, threshold);
    Ok(EvalReport {
        f1: counts.f1(),
        accuracy: counts.accuracy(),
        auc: auc(scores, labels)?,
        threshold,
        counts,
    })
}

fn sorted_unique(scores: &[f64]) -> Vec<f64> {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Candidate thresholds: one below the minimum, the midpoints between
/// consecutive distinct scores, one above the maximum. Each candidate
/// yields a distinct prediction set.
pub fn sweep_candidates(scores: &[f64]) -> Vec<f64> {
    let u = sorted_unique(scores);
    let mut out = Vec::with_capacity(u.len() + 1);
    out.push(u[0] - 1.0);
    for w in u.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        out.push(if mid > w[0] { mid } else { w[1] });
    }
    out.push(u[u.len() - 1] + 1.0);
    out
}

/// Dev-set decision threshold. With a single class present, returns a value
/// below the minimum (all positive) or above the maximum (all negative) and
/// logs a warning.
pub fn select_threshold(scores: &[f64], labels: &[u8], method: ThresholdMethod) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let u = sorted_unique(scores);
    let (min, max) = (u[0], u[u.len() - 1]);
    if positives == 0 || positives == labels.len() {
        log::warn!("threshold selection saw a single class; F1 is not informative");
        return Ok(if positives == 0 { max + 1.0 } else { min - 1.0 });
    }
    Ok(match method {
        ThresholdMethod::Sweep => {
            let mut best = (f64::NEG_INFINITY, 0.0);
            for theta in sweep_candidates(scores) {
                let f = f1_at(scores, labels, theta);
                if f > best.0 {
                    best = (f, theta);
                }
            }
            best.1
        }
        ThresholdMethod::Bisection => {
            let (mut lo, mut hi) = (min, max);
            for _ in 0..BISECTION_ITERATIONS {
                let mid = lo + (hi - lo) / 2.0;
                let left = f1_at(scores, labels, lo + (mid - lo) / 2.0);
                let right = f1_at(scores, labels, mid + (hi - mid) / 2.0);
                if right > left {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo + (hi - lo) / 2.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleFields {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl TripleFields {
    pub fn from_triple(t: &Triple) -> Self {
        TripleFields {
            subject: t.subject().to_string(),
            predicate: t.predicate().id.clone(),
            object: t.object().to_string(),
        }
    }

    pub fn to_triple(&self) -> Result<Triple, DataError> {
        Triple::from_parts(&self.subject, &self.predicate, &self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Salience,
    Necessity,
    Sufficiency,
}

impl Dimension {
    pub fn pick(self, s: &ScoreTriple) -> f64 {
        match self {
            Dimension::Salience => s.salience,
            Dimension::Necessity => s.necessity,
            Dimension::Sufficiency => s.sufficiency,
        }
    }
}

impl From<Role> for Dimension {
    fn from(r: Role) -> Self {
        match r {
            Role::Necessity => Dimension::Necessity,
            Role::Sufficiency => Dimension::Sufficiency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub better: Triple,
    pub worse: Triple,
    pub dimension: Dimension,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    better: TripleFields,
    worse: TripleFields,
    dimension: Dimension,
}

/// Reads `{better, worse, dimension}` lines.
pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| EvalError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let p: PairLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let better = p.better.to_triple().map_err(|e| malformed(e.to_string()))?;
        let worse = p.worse.to_triple().map_err(|e| malformed(e.to_string()))?;
        if better == worse {
            return Err(malformed("better and worse are the same triple".into()));
        }
        out.push(PreferencePair {
            better,
            worse,
            dimension: p.dimension,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PprefReport {
    /// Fraction of evaluated pairs ordered correctly; 0 when none evaluated.
    pub precision: f64,
    pub correct: usize,
    pub evaluated: usize,
    /// Indices of pairs with an unscorable triple.
    pub excluded: Vec<usize>,
}

/// Pairs count as correct only when the better triple scores strictly higher.
pub fn ppref_precision(scores: &HashMap<Triple, ScoreTriple>, pairs: &[PreferencePair]) -> PprefReport {
    let mut correct = 0;
    let mut evaluated = 0;
    let mut excluded = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        match (scores.get(&pair.better), scores.get(&pair.worse)) {
            (Some(b), Some(w)) => {
                evaluated += 1;
                if pair.dimension.pick(b) > pair.dimension.pick(w) {
                    correct += 1;
                }
            }
            _ => excluded.push(i),
        }
    }
    PprefReport {
        precision: if evaluated == 0 {
            0.0
        } else {
            correct as f64 / evaluated as f64
        },
        correct,
        evaluated,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_sweep() {
        let t = select_threshold(&[0.2, 0.8], &[0, 1], ThresholdMethod::Sweep).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(f1_at(&[0.2, 0.8], &[0, 1], t), 1.0);
    }

    #[test]
    fn single_class_thresholds() {
        let t = select_threshold(&[0.3, 0.6], &[1, 1], ThresholdMethod::Sweep).unwrap();
        assert!(t < 0.3);
        let t = select_threshold(&[0.3, 0.6], &[0, 0], ThresholdMethod::Bisection).unwrap();
        assert!(t > 0.6);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(select_threshold(&[], &[], ThresholdMethod::Sweep), Err(EvalError::Empty)));
        assert!(matches!(classification_metrics(&[0.1], &[1, 0], 0.0), Err(EvalError::LengthMismatch { .. })));
        assert!(auc(&[f64::NAN], &[1]).is_err());
    }

    #[test]
    fn metric_examples() {
        let r = classification_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((r.f1, r.accuracy, r.auc), (1.0, 1.0, 1.0));
        assert_eq!(auc(&[0.9, 0.8, 0.4, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
        let c = r.counts;
        assert_eq!(c.tp + c.fp + c.tn + c.fn_, 4);
    }

    fn pair(b: &str, w: &str) -> PreferencePair {
        PreferencePair {
            better: Triple::from_parts(b, "requires", "x").unwrap(),
            worse: Triple::from_parts(w, "requires", "x").unwrap(),
            dimension: Dimension::Salience,
        }
    }

    fn st(v: f64) -> ScoreTriple {
        ScoreTriple {
            necessity: v,
            sufficiency: v,
            salience: v,
        }
    }

    #[test]
    fn ppref_counts() {
        let mut scores = HashMap::new();
        for (name, v) in [("a", 0.9), ("b", 0.5), ("c", 0.1), ("d", 0.5)] {
            scores.insert(Triple::from_parts(name, "requires", "x").unwrap(), st(v));
        }
        let r = ppref_precision(&scores, &[pair("a", "b"), pair("b", "c"), pair("c", "a")]);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        let r = ppref_precision(&scores, &[pair("b", "d"), pair("d", "b")]);
        assert_eq!(r.precision, 0.0);
        let r = ppref_precision(&scores, &[pair("a", "zzz"), pair("a", "c")]);
        assert_eq!((r.evaluated, r.excluded.clone(), r.precision), (1, vec![0], 1.0));
    }

    #[test]
    fn pair_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        std::fs::write(
            &path,
            r#"{"better":{"subject":"a","predicate":"requires","object":"x"},"worse":{"subject":"b","predicate":"requires","object":"x"},"dimension":"necessity"}"#,
        )
        .unwrap();
        let pairs = load_pairs(&path).unwrap();
        assert_eq!(pairs[0].dimension, Dimension::Necessity);
    }

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut c, mut t, mut np, mut nn) = (0u64, 0u64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 { np += 1 } else { nn += 1 }
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    if scores[i] > scores[j] { c += 1 } else if scores[i] == scores[j] { t += 1 }
                }
            }
        }
        (c as f64 + 0.5 * t as f64) / (np * nn) as f64
    }

    fn data() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..12).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting((s, l) in data()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            prop_assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, l) in data()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn sweep_is_global_optimum((s, l) in data()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let sweep = select_threshold(&s, &l, ThresholdMethod::Sweep).unwrap();
            let bis = select_threshold(&s, &l, ThresholdMethod::Bisection).unwrap();
            let best = s.iter().map(|&t| f1_at(&s, &l, t)).fold(0.0, f64::max);
            prop_assert_eq!(f1_at(&s, &l, sweep), best);
            prop_assert!(f1_at(&s, &l, sweep) >= f1_at(&s, &l, bis));
        }

        #[test]
        fn metrics_are_permutation_invariant((s, l) in data(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut crate::rng::substream(seed, "perm"));
            let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let l2: Vec<u8> = idx.iter().map(|&i| l[i]).collect();
            prop_assert_eq!(classification_metrics(&s, &l, 1.0).unwrap(), classification_metrics(&s2, &l2, 1.0).unwrap());
        }
    }
}
