//! Masked-language-model backends.
//!
//! A backend answers [`MaskedQuery`] batches with log-probabilities of the
//! target tokens at masked positions. Backends that support gradients also
//! return the gradient of a weighted sum of those log-probabilities with
//! respect to injected prompt vectors; their own parameters are never
//! modified by either call.

mod reference;
mod remote;
mod uniform;
pub mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use reference::{ReferenceConfig, ReferenceMlm};
pub use remote::{remote_score, BackendServer, RemoteBackend, PROTOCOL_VERSION};
pub use uniform::UniformBackend;
pub use vocab::{TokenId, Vocab, MASK_ID, PLACEHOLDER_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid query {query}: {message}")]
    InvalidQuery { query: usize, message: String },
    #[error("injected vector has dimension {got}, backend expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend `{0}` does not support prompt gradients")]
    GradientsUnsupported(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {message} (payload: {excerpt})")]
    Protocol { message: String, excerpt: String },
    #[error("remote error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Fingerprint of the model parameters and configuration.
    pub identifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInjection {
    pub position: usize,
    pub vector: Vec<f64>,
}

/// One forward request. Tokens at `masked_positions` are replaced by the
/// mask token before the model sees them; `target_ids[k]` is scored at
/// `masked_positions[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedQuery {
    pub tokens: Vec<TokenId>,
    pub masked_positions: Vec<usize>,
    pub target_ids: Vec<TokenId>,
    pub prompt_injections: Vec<PromptInjection>,
}

impl MaskedQuery {
    pub fn validate(&self, index: usize, dim: usize) -> Result<(), BackendError> {
        let invalid = |message: String| BackendError::InvalidQuery {
            query: index,
            message,
        };
        let n = self.tokens.len();
        if self.masked_positions.len() != self.target_ids.len() {
            return Err(invalid(format!(
                "{} masked positions but {} targets",
                self.masked_positions.len(),
                self.target_ids.len()
            )));
        }
        let mut masked = HashSet::new();
        for &p in &self.masked_positions {
            if p >= n {
                return Err(invalid(format!("masked position {p} out of bounds ({n} tokens)")));
            }
            if !masked.insert(p) {
                return Err(invalid(format!("masked position {p} repeated")));
            }
        }
        let mut injected = HashSet::new();
        for inj in &self.prompt_injections {
            if inj.vector.len() != dim {
                return Err(BackendError::DimensionMismatch {
                    expected: dim,
                    got: inj.vector.len(),
                });
            }
            if inj.position >= n {
                return Err(invalid(format!("injection position {} out of bounds", inj.position)));
            }
            if masked.contains(&inj.position) {
                return Err(invalid(format!("injection at masked position {}", inj.position)));
            }
            if !injected.insert(inj.position) {
                return Err(invalid(format!("injection position {} repeated", inj.position)));
            }
            if inj.vector.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite injected vector".into()));
            }
        }
        Ok(())
    }

    /// Copy of the tokens with every masked position set to the mask id.
    pub fn masked_tokens(&self) -> Vec<TokenId> {
        let mut tokens = self.tokens.clone();
        for &p in &self.masked_positions {
            tokens[p] = MASK_ID;
        }
        tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub log_probs: Vec<f64>,
    /// One gradient per entry of the query's `prompt_injections`, same order.
    pub prompt_grads: Vec<Vec<f64>>,
}

pub trait MaskedLm: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn vocab(&self) -> &Vocab;

    fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.vocab().tokenize(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        self.vocab().detokenize(ids)
    }

    /// Per query, per masked position log-probability of the target id.
    fn forward_log_probs(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError>;

    /// Log-probabilities plus `∂(Σ w·log_probs)/∂(injected vectors)`, where
    /// `upstream_weights[q][k]` weights masked position `k` of query `q`.
    fn forward_with_prompt_grads(
        &self,
        queries: &[MaskedQuery],
        upstream_weights: &[Vec<f64>],
    ) -> Result<Vec<GradBundle>, BackendError>;

    fn supports_gradients(&self) -> bool;

    fn fingerprint(&self) -> String {
        self.info().identifier.clone()
    }
}

pub(crate) fn validate_batch(queries: &[MaskedQuery], dim: usize) -> Result<(), BackendError> {
    queries
        .iter()
        .enumerate()
        .try_for_each(|(i, q)| q.validate(i, dim))
}

pub(crate) fn validate_weights(
    queries: &[MaskedQuery],
    weights: &[Vec<f64>],
) -> Result<(), BackendError> {
    if queries.len() != weights.len() {
        return Err(BackendError::Config(format!(
            "{} queries but {} weight rows",
            queries.len(),
            weights.len()
        )));
    }
    for (i, (q, w)) in queries.iter().zip(weights).enumerate() {
        if q.masked_positions.len() != w.len() || w.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidQuery {
                query: i,
                message: "upstream weights must be finite, one per masked position".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query() -> MaskedQuery {
        MaskedQuery {
            tokens: vec![3, 4, 5, 2],
            masked_positions: vec![1],
            target_ids: vec![4],
            prompt_injections: vec![PromptInjection {
                position: 3,
                vector: vec![0.0; 4],
            }],
        }
    }

    #[test]
    fn query_invariants() {
        assert!(query().validate(0, 4).is_ok());
        assert!(matches!(
            query().validate(0, 3),
            Err(BackendError::DimensionMismatch { .. })
        ));
        let mut q = query();
        q.prompt_injections[0].position = 1;
        assert!(q.validate(0, 4).is_err());
        let mut q = query();
        q.masked_positions.push(1);
        q.target_ids.push(4);
        assert!(q.validate(0, 4).is_err());
        let mut q = query();
        q.target_ids.clear();
        assert!(q.validate(0, 4).is_err());
        let mut q = query();
        q.masked_positions = vec![9];
        assert!(q.validate(0, 4).is_err());
    }

    #[test]
    fn masked_tokens_overwrites_positions() {
        assert_eq!(query().masked_tokens(), vec![3, MASK_ID, 5, 2]);
    }
}
