//! Domain types for commonsense triples and line-delimited dataset I/O.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"subject":"running","predicate":"requires","object":"running shoes","sufficiency":1,"necessity":1,"salient":1}
//! ```
//!
//! Optional `annotators` carries per-rater `[suf, nec, sal]` triplets so that
//! agreement statistics can be computed on aligned raters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Relation keys shipped with the tool and their display labels.
pub const BUILTIN_PREDICATES: [(&str, &str); 3] = [
    ("requires", "requires"),
    ("capable_of", "capable of"),
    ("complementary", "complementary to"),
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("label {value} for `{field}` is outside {{0, 0.5, 1}}")]
    LabelOutOfRange { field: &'static str, value: f64 },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Predicate {
    pub id: String,
    pub display: String,
}

impl Predicate {
    pub fn new(id: impl Into<String>, display: impl Into<String>) -> Result<Self, DataError> {
        let id = id.into().trim().to_string();
        if id.is_empty() {
            return Err(DataError::InvalidTriple("empty predicate id".into()));
        }
        Ok(Predicate {
            id,
            display: display.into().trim().to_string(),
        })
    }

    /// Resolves a key against the built-in registry; unknown keys get a
    /// display label with underscores turned into spaces.
    pub fn from_key(key: &str) -> Result<Self, DataError> {
        let key = key.trim();
        match BUILTIN_PREDICATES.iter().find(|(id, _)| *id == key) {
            Some((id, display)) => Predicate::new(*id, *display),
            None => Predicate::new(key, key.replace('_', " ")),
        }
    }
}

/// Registry of known predicates, unique by id.
#[derive(Debug, Clone)]
pub struct PredicateRegistry {
    entries: BTreeMap<String, Predicate>,
}

impl Default for PredicateRegistry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for (id, display) in BUILTIN_PREDICATES {
            entries.insert(id.to_string(), Predicate::new(id, display).unwrap());
        }
        PredicateRegistry { entries }
    }
}

impl PredicateRegistry {
    pub fn get(&self, id: &str) -> Option<&Predicate> {
        self.entries.get(id)
    }

    /// Adds a predicate, replacing any earlier entry with the same id.
    pub fn register(&mut self, predicate: Predicate) {
        self.entries.insert(predicate.id.clone(), predicate);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Predicate> {
        self.entries.values()
    }
}

/// A (subject, predicate, object) assertion. Subject and object are trimmed
/// and never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    subject: String,
    predicate: Predicate,
    object: String,
}

impl Triple {
    pub fn new(
        subject: impl AsRef<str>,
        predicate: Predicate,
        object: impl AsRef<str>,
    ) -> Result<Self, DataError> {
        let subject = subject.as_ref().trim();
        let object = object.as_ref().trim();
        if subject.is_empty() {
            return Err(DataError::InvalidTriple("empty subject".into()));
        }
        if object.is_empty() {
            return Err(DataError::InvalidTriple("empty object".into()));
        }
        Ok(Triple {
            subject: subject.to_string(),
            predicate,
            object: object.to_string(),
        })
    }

    /// Shorthand that resolves the predicate key through [`Predicate::from_key`].
    pub fn from_parts(subject: &str, predicate: &str, object: &str) -> Result<Self, DataError> {
        Triple::new(subject, Predicate::from_key(predicate)?, object)
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &Predicate {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn with_subject(&self, subject: &str) -> Result<Self, DataError> {
        Triple::new(subject, self.predicate.clone(), &self.object)
    }

    pub fn with_object(&self, object: &str) -> Result<Self, DataError> {
        Triple::new(&self.subject, self.predicate.clone(), object)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate.id, self.object)
    }
}

/// Three-point Likert value: rarely (0), occasionally (0.5), often (1).
pub fn check_likert(field: &'static str, value: f64) -> Result<f64, DataError> {
    if value == 0.0 || value == 0.5 || value == 1.0 {
        Ok(value)
    } else {
        Err(DataError::LabelOutOfRange { field, value })
    }
}

fn check_bit(field: &'static str, value: f64) -> Result<u8, DataError> {
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(DataError::LabelOutOfRange { field, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorLabel {
    pub sufficiency: f64,
    pub necessity: f64,
    pub salient: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTriple {
    pub triple: Triple,
    pub sufficiency: Option<f64>,
    pub necessity: Option<f64>,
    pub salient: Option<u8>,
    pub annotators: Option<Vec<AnnotatorLabel>>,
}

impl AnnotatedTriple {
    pub fn unlabeled(triple: Triple) -> Self {
        AnnotatedTriple {
            triple,
            sufficiency: None,
            necessity: None,
            salient: None,
            annotators: None,
        }
    }

    pub fn with_salient(triple: Triple, salient: u8) -> Self {
        AnnotatedTriple {
            salient: Some(salient),
            ..AnnotatedTriple::unlabeled(triple)
        }
    }

    pub fn fully_labeled(triple: Triple, sufficiency: f64, necessity: f64, salient: u8) -> Self {
        AnnotatedTriple {
            triple,
            sufficiency: Some(sufficiency),
            necessity: Some(necessity),
            salient: Some(salient),
            annotators: None,
        }
    }

    fn has_all_labels(&self) -> bool {
        self.sufficiency.is_some() && self.necessity.is_some() && self.salient.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// Triples with a binary salience label.
    Simplified,
    /// Triples with sufficiency, necessity and salience.
    Original,
    Unlabeled,
}

impl Schema {
    pub fn name(self) -> &'static str {
        match self {
            Schema::Simplified => "simplified",
            Schema::Original => "original",
            Schema::Unlabeled => "unlabeled",
        }
    }
}

impl std::str::FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simplified" => Ok(Schema::Simplified),
            "original" => Ok(Schema::Original),
            "unlabeled" => Ok(Schema::Unlabeled),
            other => Err(format!("unknown schema `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: Schema,
    pub records: Vec<AnnotatedTriple>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, schema: Schema, records: Vec<AnnotatedTriple>) -> Self {
        Dataset {
            name: name.into(),
            schema,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn triples(&self) -> Vec<Triple> {
        self.records.iter().map(|r| r.triple.clone()).collect()
    }

    /// Salience labels; `None` if any record is missing one.
    pub fn salient_labels(&self) -> Option<Vec<u8>> {
        self.records.iter().map(|r| r.salient).collect()
    }

    /// Index of the first record violating the schema, with a reason.
    pub fn schema_violation(&self) -> Option<(usize, &'static str)> {
        self.records.iter().enumerate().find_map(|(i, r)| {
            violation(self.schema, r).map(|why| (i, why))
        })
    }

    /// Records selected by index, keeping the schema.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            schema: self.schema,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

fn violation(schema: Schema, record: &AnnotatedTriple) -> Option<&'static str> {
    match schema {
        Schema::Simplified if record.salient.is_none() => Some("missing `salient`"),
        Schema::Original if !record.has_all_labels() => {
            Some("`original` schema needs sufficiency, necessity and salient")
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Total assignment of record indices to splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    assignment: Vec<Split>,
}

impl SplitAssignment {
    pub fn new(assignment: Vec<Split>) -> Self {
        SplitAssignment { assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.assignment[index]
    }

    pub fn as_slice(&self) -> &[Split] {
        &self.assignment
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == split)
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in &self.assignment {
            sizes[*s as usize] += 1;
        }
        sizes
    }

    /// True when every index `0..n` is assigned exactly once.
    pub fn is_total_partition(&self, n: usize) -> bool {
        self.assignment.len() == n
    }
}

/// On-disk line format. Field names are part of the file contract.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    subject: String,
    predicate: String,
    object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sufficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    necessity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "bit_as_integer")]
    salient: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotators: Option<Vec<[f64; 3]>>,
}

fn bit_as_integer<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(b) if *b == 0.0 || *b == 1.0 => s.serialize_u8(*b as u8),
        Some(b) => s.serialize_f64(*b),
        None => s.serialize_none(),
    }
}

impl RecordLine {
    fn from_record(record: &AnnotatedTriple) -> Self {
        RecordLine {
            subject: record.triple.subject.clone(),
            predicate: record.triple.predicate.id.clone(),
            object: record.triple.object.clone(),
            sufficiency: record.sufficiency,
            necessity: record.necessity,
            salient: record.salient.map(f64::from),
            annotators: record.annotators.as_ref().map(|labels| {
                labels
                    .iter()
                    .map(|a| [a.sufficiency, a.necessity, f64::from(a.salient)])
                    .collect()
            }),
        }
    }

    fn into_record(self) -> Result<AnnotatedTriple, DataError> {
        let triple = Triple::from_parts(&self.subject, &self.predicate, &self.object)?;
        let annotators = match self.annotators {
            Some(rows) => Some(
                rows.into_iter()
                    .map(|[suf, nec, sal]| {
                        Ok(AnnotatorLabel {
                            sufficiency: check_likert("annotators.sufficiency", suf)?,
                            necessity: check_likert("annotators.necessity", nec)?,
                            salient: check_bit("annotators.salient", sal)?,
                        })
                    })
                    .collect::<Result<Vec<_>, DataError>>()?,
            ),
            None => None,
        };
        Ok(AnnotatedTriple {
            triple,
            sufficiency: self
                .sufficiency
                .map(|v| check_likert("sufficiency", v))
                .transpose()?,
            necessity: self.necessity.map(|v| check_likert("necessity", v)).transpose()?,
            salient: self.salient.map(|v| check_bit("salient", v)).transpose()?,
            annotators,
        })
    }
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn record_to_line(record: &AnnotatedTriple) -> String {
    serde_json::to_string(&RecordLine::from_record(record)).expect("record serializes")
}

/// Parses one record line; the inverse of [`record_to_line`].
pub fn record_from_line(line: &str) -> Result<AnnotatedTriple, DataError> {
    let parsed: RecordLine =
        serde_json::from_str(line).map_err(|e| DataError::InvalidTriple(e.to_string()))?;
    parsed.into_record()
}

pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset, DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let record = parsed.into_record().map_err(|e| malformed(e.to_string()))?;
        if let Some(why) = violation(schema, &record) {
            return Err(malformed(why.to_string()));
        }
        records.push(record);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        schema,
        records,
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in &dataset.records {
        writeln!(out, "{}", record_to_line(record)).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub total: usize,
    pub salient: usize,
    pub not_salient: usize,
    pub unlabeled: usize,
}

impl LabelDistribution {
    pub fn positive_fraction(&self) -> Option<f64> {
        let labeled = self.salient + self.not_salient;
        (labeled > 0).then(|| self.salient as f64 / labeled as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    /// Extra occurrences beyond the first, summed over all repeated triples.
    pub duplicate_count: usize,
    pub duplicates: Vec<(String, Vec<usize>)>,
    pub per_predicate: BTreeMap<String, LabelDistribution>,
    pub overall: LabelDistribution,
    pub schema_violations: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn positive_fraction(&self) -> Option<f64> {
        self.overall.positive_fraction()
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut seen: HashMap<&Triple, Vec<usize>> = HashMap::new();
    let mut per_predicate: BTreeMap<String, LabelDistribution> = BTreeMap::new();
    let mut overall = LabelDistribution::default();
    let mut schema_violations = Vec::new();

    for (i, record) in dataset.records.iter().enumerate() {
        seen.entry(&record.triple).or_default().push(i);
        let entry = per_predicate
            .entry(record.triple.predicate.id.clone())
            .or_default();
        for dist in [entry, &mut overall] {
            dist.total += 1;
            match record.salient {
                Some(1) => dist.salient += 1,
                Some(_) => dist.not_salient += 1,
                None => dist.unlabeled += 1,
            }
        }
        if let Some(why) = violation(dataset.schema, record) {
            schema_violations.push((i, why.to_string()));
        }
    }

    let mut duplicates: Vec<(String, Vec<usize>)> = seen
        .into_iter()
        .filter(|(_, idx)| idx.len() > 1)
        .map(|(t, idx)| (t.to_string(), idx))
        .collect();
    duplicates.sort_by(|a, b| a.1[0].cmp(&b.1[0]));
    let duplicate_count = duplicates.iter().map(|(_, idx)| idx.len() - 1).sum();

    ValidationReport {
        records: dataset.records.len(),
        duplicate_count,
        duplicates,
        per_predicate,
        overall,
        schema_violations,
    }
}
