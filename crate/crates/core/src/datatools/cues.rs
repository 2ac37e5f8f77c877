use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DataToolError;
use crate::backend::vocab::split_words;
use crate::data::{AnnotatedTriple, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueOptions {
    pub min_n: usize,
    pub max_n: usize,
    /// Also draw cues from the predicate key. Off by default: every record
    /// of a predicate would share those cues.
    pub include_predicate: bool,
}

impl Default for CueOptions {
    fn default() -> Self {
        CueOptions {
            min_n: 1,
            max_n: 2,
            include_predicate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueEntry {
    pub cue: String,
    /// Number of instances whose text contains the cue.
    pub applicability: usize,
    /// `applicability / n`.
    pub coverage: f64,
    /// Applying instances per label: `[label 0, label 1]`.
    pub label_counts: [usize; 2],
    /// `None` when both labels are equally frequent.
    pub majority_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueReport {
    pub instances: usize,
    /// Sorted by coverage descending, then cue text.
    pub entries: Vec<CueEntry>,
}

impl CueReport {
    pub fn max_coverage(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.coverage)
    }

    /// Rank of each cue in the report.
    pub fn ranks(&self) -> BTreeMap<&str, usize> {
        self.entries.iter().enumerate().map(|(i, e)| (e.cue.as_str(), i)).collect()
    }
}

fn ngrams(words: &[String], min_n: usize, max_n: usize, out: &mut BTreeSet<String>) {
    for n in min_n.max(1)..=max_n {
        for w in words.windows(n) {
            out.insert(w.join(" "));
        }
    }
}

/// Distinct cues of one instance, split into those from the subject and
/// those from the object (predicate cues, if enabled, go with neither).
pub fn instance_cues(record: &AnnotatedTriple, options: &CueOptions) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
    let mut subject = BTreeSet::new();
    let mut object = BTreeSet::new();
    let mut predicate = BTreeSet::new();
    ngrams(&split_words(record.triple.subject()), options.min_n, options.max_n, &mut subject);
    ngrams(&split_words(record.triple.object()), options.min_n, options.max_n, &mut object);
    if options.include_predicate {
        let words: Vec<String> = record.triple.predicate().id.split('_').map(String::from).collect();
        ngrams(&words, options.min_n, options.max_n, &mut predicate);
    }
    (subject, object, predicate)
}

/// Applicability and coverage of every token n-gram. N-grams are taken
/// within each field, so none spans the subject/object boundary.
///
/// The textbook definition reads
/// `α_k = Σ_{i=1..n} 𝟙[∃j, k ∈ T_j^(i) ∧ k ∉ T_¬j^(i)]` with
/// `T_j^(i)` the tokens of instance `i` under label `j`, and `ξ_k = α_k / n`.
/// A single-text instance carries exactly one label, so this reduces to
/// "instance `i` contains `k`". The per-label counts are kept alongside so a
/// cue that predicts one label can be spotted.
pub fn cue_audit(dataset: &Dataset, options: &CueOptions) -> Result<CueReport, DataToolError> {
    if options.min_n == 0 || options.min_n > options.max_n {
        return Err(DataToolError::InvalidArgument(format!(
            "n-gram range {}..={} is empty",
            options.min_n, options.max_n
        )));
    }
    let labels = dataset
        .salient_labels()
        .ok_or_else(|| DataToolError::Unlabeled(dataset.name.clone()))?;
    let mut counts: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    for (record, &label) in dataset.records.iter().zip(&labels) {
        let (s, o, p) = instance_cues(record, options);
        let all: BTreeSet<String> = s.into_iter().chain(o).chain(p).collect();
        for cue in all {
            counts.entry(cue).or_default()[label as usize] += 1;
        }
    }
    let n = dataset.len();
    let mut entries: Vec<CueEntry> = counts
        .into_iter()
        .map(|(cue, label_counts)| {
            let applicability = label_counts[0] + label_counts[1];
            CueEntry {
                cue,
                applicability,
                coverage: applicability as f64 / n as f64,
                label_counts,
                majority_label: match label_counts[0].cmp(&label_counts[1]) {
                    std::cmp::Ordering::Greater => Some(0),
                    std::cmp::Ordering::Less => Some(1),
                    std::cmp::Ordering::Equal => None,
                },
            }
        })
        .collect();
    entries.sort_by(|a, b| b.applicability.cmp(&a.applicability).then_with(|| a.cue.cmp(&b.cue)));
    Ok(CueReport { instances: n, entries })
}
