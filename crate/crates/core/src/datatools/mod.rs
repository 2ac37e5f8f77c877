//! Dataset construction and analysis: splits, lexical-cue audit,
//! adversarial candidates, agreement, regression and rank correlation.

mod adversarial;
mod cues;
mod splits;
mod stats;

pub use adversarial::{
    adversarial_candidates, load_candidates, merge_confirmed, write_candidates,
    AdversarialCandidate, CandidateStatus, Field,
};
pub use cues::{cue_audit, instance_cues, CueEntry, CueOptions, CueReport};
pub use splits::{split_concept, split_random, ConceptSplit, Ratios, Strictness};
pub use stats::{
    agreement_report, fleiss_kappa, ols, pearson, regression_fit, spearman_rho, AgreementReport,
    DimensionAgreement, RegressionReport,
};

use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum DataToolError {
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios([f64; 3]),
    #[error("dataset `{0}` has unlabeled records")]
    Unlabeled(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ratings table has a missing cell at item {item}")]
    MissingCell { item: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("{left} values but {right} values")]
    LengthMismatch { left: usize, right: usize },
    #[error(transparent)]
    Data(#[from] DataError),
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
