use super::{
    validate_batch, validate_weights, BackendError, BackendInfo, GradBundle, MaskedLm,
    MaskedQuery, Vocab,
};

/// Context-free backend: every target gets log-probability `-ln V`.
///
/// Its vocabulary holds only the special tokens unless words are supplied,
/// so out-of-vocabulary words map to `[UNK]` (one token per word).
#[derive(Debug, Clone)]
pub struct UniformBackend {
    info: BackendInfo,
    vocab: Vocab,
}

impl UniformBackend {
    pub fn new(vocab_size: usize, embedding_dim: usize) -> Result<Self, BackendError> {
        UniformBackend::with_vocab(vocab_size, embedding_dim, Vocab::specials_only())
    }

    pub fn with_vocab(
        vocab_size: usize,
        embedding_dim: usize,
        vocab: Vocab,
    ) -> Result<Self, BackendError> {
        if vocab_size < 2 {
            return Err(BackendError::Config(format!(
                "uniform backend needs V >= 2, got {vocab_size}"
            )));
        }
        if embedding_dim == 0 {
            return Err(BackendError::Config("embedding dimension must be >= 1".into()));
        }
        Ok(UniformBackend {
            info: BackendInfo {
                vocab_size,
                embedding_dim,
                identifier: format!("uniform:v{vocab_size}:d{embedding_dim}"),
            },
            vocab,
        })
    }

    fn log_prob(&self) -> f64 {
        -(self.info.vocab_size as f64).ln()
    }
}

impl MaskedLm for UniformBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward_log_probs(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
        validate_batch(queries, self.info.embedding_dim)?;
        let lp = self.log_prob();
        Ok(queries
            .iter()
            .map(|q| vec![lp; q.masked_positions.len()])
            .collect())
    }

    fn forward_with_prompt_grads(
        &self,
        queries: &[MaskedQuery],
        upstream_weights: &[Vec<f64>],
    ) -> Result<Vec<GradBundle>, BackendError> {
        validate_weights(queries, upstream_weights)?;
        let log_probs = self.forward_log_probs(queries)?;
        let d = self.info.embedding_dim;
        Ok(queries
            .iter()
            .zip(log_probs)
            .map(|(q, log_probs)| GradBundle {
                log_probs,
                prompt_grads: vec![vec![0.0; d]; q.prompt_injections.len()],
            })
            .collect())
    }

    fn supports_gradients(&self) -> bool {
        true
    }
}
