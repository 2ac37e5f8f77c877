use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::cues::{instance_cues, CueOptions, CueReport};
use super::DataToolError;
use crate::data::{record_from_line, record_to_line, AnnotatedTriple, Dataset};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Subject,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Proposed,
    Confirmed,
    Rejected,
}

/// A proposed label-flipping edit of a record that carries a strong cue.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialCandidate {
    pub original: AnnotatedTriple,
    pub cue: String,
    pub replacement_field: Field,
    pub replacement_value: String,
    pub proposed_label: u8,
    pub status: CandidateStatus,
}

impl AdversarialCandidate {
    /// The edited triple labeled with the proposed label.
    pub fn edited(&self) -> Result<AnnotatedTriple, DataToolError> {
        let t = &self.original.triple;
        let triple = match self.replacement_field {
            Field::Subject => t.with_subject(&self.replacement_value)?,
            Field::Object => t.with_object(&self.replacement_value)?,
        };
        Ok(AnnotatedTriple::with_salient(triple, self.proposed_label))
    }
}

/// For each labeled record containing one of the top `top_percent` cues (by
/// coverage), replaces the entity that does not carry the cue with a seeded
/// draw from `pool` and inverts the label. The highest-ranked cue present
/// decides. Records whose pool offers no different value are skipped.
pub fn adversarial_candidates(
    dataset: &Dataset,
    report: &CueReport,
    options: &CueOptions,
    top_percent: f64,
    pool: &[String],
    seed: u64,
) -> Result<Vec<AdversarialCandidate>, DataToolError> {
    if pool.is_empty() {
        return Err(DataToolError::InvalidArgument("replacement pool is empty".into()));
    }
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(DataToolError::InvalidArgument(format!(
            "top_percent must be in (0, 100], got {top_percent}"
        )));
    }
    let k = (report.entries.len() as f64 * top_percent / 100.0).floor() as usize;
    let top = &report.entries[..k.min(report.entries.len())];
    let mut rng = substream(seed, "adversarial");
    let mut out = Vec::new();
    for record in &dataset.records {
        let Some(label) = record.salient else { continue };
        let (subject_cues, object_cues, predicate_cues) = instance_cues(record, options);
        let Some(entry) = top.iter().find(|e| {
            subject_cues.contains(&e.cue) || object_cues.contains(&e.cue) || predicate_cues.contains(&e.cue)
        }) else {
            continue;
        };
        let field = if object_cues.contains(&entry.cue) {
            Field::Subject
        } else {
            Field::Object
        };
        let current = match field {
            Field::Subject => record.triple.subject(),
            Field::Object => record.triple.object(),
        };
        let choices: Vec<&String> = pool
            .iter()
            .filter(|v| v.trim() != current && !v.trim().is_empty())
            .collect();
        let Some(value) = choices.choose(&mut rng) else { continue };
        out.push(AdversarialCandidate {
            original: record.clone(),
            cue: entry.cue.clone(),
            replacement_field: field,
            replacement_value: value.trim().to_string(),
            proposed_label: 1 - label,
            status: CandidateStatus::Proposed,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateLine {
    original: serde_json::Value,
    cue: String,
    replacement_field: Field,
    replacement_value: String,
    proposed_label: u8,
    status: CandidateStatus,
}

pub fn write_candidates(candidates: &[AdversarialCandidate], path: &Path) -> Result<(), DataToolError> {
    let mut text = String::new();
    for c in candidates {
        let original: serde_json::Value =
            serde_json::from_str(&record_to_line(&c.original)).expect("record line is JSON");
        let line = CandidateLine {
            original,
            cue: c.cue.clone(),
            replacement_field: c.replacement_field,
            replacement_value: c.replacement_value.clone(),
            proposed_label: c.proposed_label,
            status: c.status,
        };
        text.push_str(&serde_json::to_string(&line).expect("candidate serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| DataToolError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_candidates(path: &Path) -> Result<Vec<AdversarialCandidate>, DataToolError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataToolError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataToolError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let c: CandidateLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let original = record_from_line(&c.original.to_string()).map_err(|e| malformed(e.to_string()))?;
        if c.proposed_label > 1 || original.salient.map(|l| 1 - l) != Some(c.proposed_label) {
            return Err(malformed("proposed_label must invert the original label".into()));
        }
        out.push(AdversarialCandidate {
            original,
            cue: c.cue,
            replacement_field: c.replacement_field,
            replacement_value: c.replacement_value,
            proposed_label: c.proposed_label,
            status: c.status,
        });
    }
    Ok(out)
}

/// Copy of `dataset` with the edited records of confirmed candidates appended.
pub fn merge_confirmed(dataset: &Dataset, candidates: &[AdversarialCandidate]) -> Result<Dataset, DataToolError> {
    let mut merged = dataset.clone();
    for c in candidates.iter().filter(|c| c.status == CandidateStatus::Confirmed) {
        merged.records.push(c.edited()?);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, Triple};
    use crate::datatools::cue_audit;

    fn rec(s: &str, o: &str, l: u8) -> AnnotatedTriple {
        AnnotatedTriple::with_salient(Triple::from_parts(s, "requires", o).unwrap(), l)
    }

    fn data() -> Dataset {
        Dataset::new(
            "d",
            Schema::Simplified,
            vec![
                rec("running", "running shoes", 1),
                rec("jogging", "running shoes", 1),
                rec("swim", "pool", 0),
            ],
        )
    }

    fn opts() -> CueOptions {
        CueOptions { min_n: 2, max_n: 2, include_predicate: false }
    }

    #[test]
    fn running_shoes_example() {
        let d = data();
        let report = cue_audit(&d, &opts()).unwrap();
        assert_eq!(report.entries[0].cue, "running shoes");
        let pool = vec!["walking".to_string()];
        let c = adversarial_candidates(&d, &report, &opts(), 100.0, &pool, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].replacement_field, Field::Subject);
        assert_eq!(c[0].replacement_value, "walking");
        assert_eq!(c[0].proposed_label, 0);
        assert_eq!(c[0].status, CandidateStatus::Proposed);
        assert_eq!(c[0].edited().unwrap().triple, Triple::from_parts("walking", "requires", "running shoes").unwrap());
    }

    #[test]
    fn tiny_percent_gives_nothing() {
        let d = data();
        let report = cue_audit(&d, &opts()).unwrap();
        let pool = vec!["walking".to_string()];
        assert!(adversarial_candidates(&d, &report, &opts(), 1.0, &pool, 1).unwrap().is_empty());
        assert!(adversarial_candidates(&d, &report, &opts(), 50.0, &[], 1).is_err());
    }

    #[test]
    fn seeded_and_round_trips() {
        let d = data();
        let report = cue_audit(&d, &CueOptions::default()).unwrap();
        let pool: Vec<String> = ["walking", "cycling", "pool", "towel"].iter().map(|s| s.to_string()).collect();
        let a = adversarial_candidates(&d, &report, &CueOptions::default(), 50.0, &pool, 3).unwrap();
        let b = adversarial_candidates(&d, &report, &CueOptions::default(), 50.0, &pool, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| Some(c.proposed_label) == c.original.salient.map(|l| 1 - l)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_candidates(&a, &path).unwrap();
        let mut back = load_candidates(&path).unwrap();
        assert_eq!(back, a);
        back[0].status = CandidateStatus::Confirmed;
        let merged = merge_confirmed(&d, &back).unwrap();
        assert_eq!(merged.len(), d.len() + 1);
    }
}
