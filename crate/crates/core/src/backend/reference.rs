//! Desk-scale bidirectional masked language model.
//!
//! Token embedding plus learned absolute positions, `layers` blocks of
//! multi-head self-attention and a tanh feed-forward layer (both residual),
//! and an output projection tied to the token embedding. Everything runs on
//! [`crate::tape`] in double precision.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::{TokenId, Vocab, MASK_ID, PLACEHOLDER_ID};
use super::{
    validate_batch, validate_weights, BackendError, BackendInfo, GradBundle, MaskedLm,
    MaskedQuery,
};
use crate::optim::Adam;
use crate::rng::substream;
use crate::tape::{Matrix, Tape, Var};

pub const MAX_VOCAB: usize = 512;
pub const MAX_DIM: usize = 64;
pub const MAX_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub seed: u64,
    pub embedding_dim: usize,
    pub layers: usize,
    /// Attention heads per layer; must divide `embedding_dim`.
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub max_vocab: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-token masking probability during training.
    pub mask_prob: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            seed: 0,
            embedding_dim: 32,
            layers: 1,
            heads: 4,
            ff_dim: 64,
            max_len: 48,
            max_vocab: MAX_VOCAB,
            steps: 1000,
            batch_size: 32,
            learning_rate: 3e-3,
            mask_prob: 0.3,
        }
    }
}

impl ReferenceConfig {
    pub fn new(seed: u64, embedding_dim: usize, layers: usize, steps: usize) -> Self {
        ReferenceConfig {
            seed,
            embedding_dim,
            layers,
            heads: [4, 2, 1].into_iter().find(|h| embedding_dim % h == 0).unwrap_or(1),
            ff_dim: 2 * embedding_dim,
            steps,
            ..ReferenceConfig::default()
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.to_string()));
        if self.embedding_dim == 0 || self.embedding_dim > MAX_DIM {
            return bad("embedding_dim must be in 1..=64");
        }
        if self.layers == 0 || self.layers > MAX_LAYERS {
            return bad("layers must be 1 or 2");
        }
        if self.heads == 0 || self.embedding_dim % self.heads != 0 {
            return bad("heads must divide embedding_dim");
        }
        if self.ff_dim == 0 || self.max_len == 0 || self.batch_size == 0 {
            return bad("ff_dim, max_len and batch_size must be positive");
        }
        if self.max_vocab < 5 || self.max_vocab > MAX_VOCAB {
            return bad("max_vocab must be in 5..=512");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return bad("mask_prob must be in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

const PER_LAYER: usize = 12;
const GLOBAL: usize = 5;

/// Parameter list: `tok_emb`, `pos_emb`, `out_bias`, `ln_gain`, `ln_bias`,
/// then per layer `wq, wk, wv, wo, ln1_gain, ln1_bias, w1, b1, w2, b2,
/// ln2_gain, ln2_bias`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Params {
    tensors: Vec<Arc<Matrix>>,
}

impl Params {
    fn init(config: &ReferenceConfig, vocab_size: usize) -> Self {
        let mut rng = substream(config.seed, "reference-init");
        let (d, f) = (config.embedding_dim, config.ff_dim);
        let mut tensors = vec![
            Matrix::normal(vocab_size, d, 0.1, &mut rng),
            Matrix::normal(config.max_len, d, 0.1, &mut rng),
            Matrix::zeros(1, vocab_size),
            Matrix::from_vec(1, d, vec![1.0; d]),
            Matrix::zeros(1, d),
        ];
        let sd = 1.0 / (d as f64).sqrt();
        for _ in 0..config.layers {
            for _ in 0..4 {
                tensors.push(Matrix::normal(d, d, sd, &mut rng));
            }
            tensors.push(Matrix::from_vec(1, d, vec![1.0; d]));
            tensors.push(Matrix::zeros(1, d));
            tensors.push(Matrix::normal(d, f, sd, &mut rng));
            tensors.push(Matrix::zeros(1, f));
            tensors.push(Matrix::normal(f, d, 1.0 / (f as f64).sqrt(), &mut rng));
            tensors.push(Matrix::zeros(1, d));
            tensors.push(Matrix::from_vec(1, d, vec![1.0; d]));
            tensors.push(Matrix::zeros(1, d));
        }
        Params {
            tensors: tensors.into_iter().map(Arc::new).collect(),
        }
    }

    /// Checks tensor count and shapes against a fresh initialization.
    fn check_shapes(&self, config: &ReferenceConfig, vocab_size: usize) -> Result<(), BackendError> {
        let expected = GLOBAL + PER_LAYER * config.layers;
        if self.tensors.len() != expected {
            return Err(BackendError::Config(format!(
                "saved model has {} tensors, expected {expected}",
                self.tensors.len()
            )));
        }
        let (d, f, v) = (config.embedding_dim, config.ff_dim, vocab_size);
        let mut shapes = vec![(v, d), (config.max_len, d), (1, v), (1, d), (1, d)];
        for _ in 0..config.layers {
            shapes.extend([(d, d), (d, d), (d, d), (d, d), (1, d), (1, d), (d, f), (1, f), (f, d), (1, d), (1, d), (1, d)]);
        }
        for (i, (t, want)) in self.tensors.iter().zip(shapes).enumerate() {
            if t.shape() != want {
                return Err(BackendError::Config(format!(
                    "saved tensor {i} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceMlm {
    config: ReferenceConfig,
    vocab: Vocab,
    params: Params,
    info: BackendInfo,
    /// Mean masked-token loss of the last training step, if any.
    final_loss: Option<f64>,
}

struct Example {
    tokens: Vec<TokenId>,
    masked: Vec<usize>,
    targets: Vec<TokenId>,
}

impl ReferenceMlm {
    /// Builds the vocabulary from `corpus` and trains for `config.steps`
    /// Adam steps on randomly masked sentences. Deterministic given the seed.
    pub fn train(corpus: &[Vec<String>], config: ReferenceConfig) -> Result<Self, BackendError> {
        config.validate()?;
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(BackendError::Config("empty corpus".into()));
        }
        let vocab = Vocab::from_corpus(corpus, config.max_vocab);
        let sentences: Vec<Vec<TokenId>> = corpus
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| {
                let mut ids = vocab.encode_words(s);
                ids.truncate(config.max_len);
                ids
            })
            .collect();
        let mut params = Params::init(&config, vocab.len());
        let mut adam = Adam::new(config.learning_rate, params.tensors.iter().map(|t| t.shape()));
        let mut rng = substream(config.seed, "reference-masking");
        let mut final_loss = None;

        for _ in 0..config.steps {
            let batch: Vec<Example> = (0..config.batch_size)
                .map(|_| {
                    let tokens = sentences.choose(&mut rng).expect("non-empty corpus").clone();
                    sample_mask(tokens, config.mask_prob, &mut rng)
                })
                .filter(|e| !e.masked.is_empty())
                .collect();
            if batch.is_empty() {
                continue;
            }
            let model = ModelView {
                config: &config,
                params: &params,
            };
            let results: Vec<(f64, Vec<Matrix>)> = batch
                .par_iter()
                .map(|ex| model.example_grads(ex))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Matrix> = params
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect();
            let mut loss = 0.0;
            for (l, g) in results {
                loss += l * scale;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(&gi);
                }
            }
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            let mut tensors: Vec<Matrix> = params.tensors.iter().map(|t| (**t).clone()).collect();
            adam.step(&mut tensors, &grads);
            params.tensors = tensors.into_iter().map(Arc::new).collect();
            final_loss = Some(loss);
        }

        Ok(ReferenceMlm::assemble(config, vocab, params, final_loss))
    }

    fn assemble(
        config: ReferenceConfig,
        vocab: Vocab,
        params: Params,
        final_loss: Option<f64>,
    ) -> Self {
        let identifier = format!("reference:{}", fingerprint(&config, &vocab, &params));
        let info = BackendInfo {
            vocab_size: vocab.len(),
            embedding_dim: config.embedding_dim,
            identifier,
        };
        ReferenceMlm {
            config,
            vocab,
            params,
            info,
            final_loss,
        }
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn final_training_loss(&self) -> Option<f64> {
        self.final_loss
    }

    /// Input embedding row of a token.
    pub fn token_embedding(&self, id: TokenId) -> Vec<f64> {
        self.params.tensors[0].row(id as usize).to_vec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SavedModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let saved: SavedModel =
            serde_json::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        saved.config.validate()?;
        saved.params.check_shapes(&saved.config, saved.vocab.len())?;
        Ok(ReferenceMlm::assemble(saved.config, saved.vocab, saved.params, None))
    }

    fn view(&self) -> ModelView<'_> {
        ModelView {
            config: &self.config,
            params: &self.params,
        }
    }

    fn check_query(&self, index: usize, q: &MaskedQuery) -> Result<(), BackendError> {
        if q.tokens.len() > self.config.max_len {
            return Err(BackendError::InvalidQuery {
                query: index,
                message: format!(
                    "{} tokens exceed the maximum length {}",
                    q.tokens.len(),
                    self.config.max_len
                ),
            });
        }
        let v = self.vocab.len() as TokenId;
        if let Some(bad) = q.tokens.iter().chain(&q.target_ids).find(|&&t| t >= v) {
            return Err(BackendError::InvalidQuery {
                query: index,
                message: format!("token id {bad} outside vocabulary of {v}"),
            });
        }
        Ok(())
    }

    fn check_batch(&self, queries: &[MaskedQuery]) -> Result<(), BackendError> {
        validate_batch(queries, self.config.embedding_dim)?;
        queries
            .iter()
            .enumerate()
            .try_for_each(|(i, q)| self.check_query(i, q))
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    config: ReferenceConfig,
    vocab: Vocab,
    params: Params,
}

fn fingerprint(config: &ReferenceConfig, vocab: &Vocab, params: &Params) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    for token in vocab.tokens() {
        hasher.update(token.as_bytes());
        hasher.update([0u8]);
    }
    for t in &params.tensors {
        hasher.update((t.rows() as u64).to_le_bytes());
        hasher.update((t.cols() as u64).to_le_bytes());
        for v in t.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

fn sample_mask<R: Rng>(tokens: Vec<TokenId>, prob: f64, rng: &mut R) -> Example {
    let candidates: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i] != PLACEHOLDER_ID)
        .collect();
    let mut masked: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < prob)
        .collect();
    if masked.is_empty() {
        if let Some(&p) = candidates.choose(rng) {
            masked.push(p);
        }
    }
    let targets = masked.iter().map(|&p| tokens[p]).collect();
    Example {
        tokens,
        masked,
        targets,
    }
}

struct ModelView<'a> {
    config: &'a ReferenceConfig,
    params: &'a Params,
}

impl ModelView<'_> {
    fn attend(&self, tape: &mut Tape, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let scores = tape.matmul_t(q, k);
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        tape.matmul(attn, v)
    }

    /// Builds the graph for one sequence and returns the `1 × k` row of
    /// target log-probabilities.
    fn forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        tokens: &[TokenId],
        injections: &[(usize, Var)],
        masked: &[usize],
        targets: &[TokenId],
    ) -> Var {
        let n = tokens.len();
        let d = self.config.embedding_dim;
        let mut input_ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        for &m in masked {
            input_ids[m] = MASK_ID as usize;
        }
        let (tok_emb, pos_emb, out_bias) = (p[0], p[1], p[2]);
        let mut x = tape.gather_rows(tok_emb, &input_ids);
        if !injections.is_empty() {
            x = tape.replace_rows(x, injections);
        }
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(pos_emb, &positions);
        let h = tape.add(x, pos);
        let mut h = tape.layer_norm_rows(h, p[3], p[4]);
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in 0..self.config.layers {
            let w = &p[GLOBAL + layer * PER_LAYER..GLOBAL + (layer + 1) * PER_LAYER];
            let q = tape.matmul(h, w[0]);
            let k = tape.matmul(h, w[1]);
            let v = tape.matmul(h, w[2]);
            let ctx = if heads == 1 {
                self.attend(tape, q, k, v, scale)
            } else {
                let parts: Vec<Var> = (0..heads)
                    .map(|i| {
                        let qh = tape.slice_cols(q, i * dh, dh);
                        let kh = tape.slice_cols(k, i * dh, dh);
                        let vh = tape.slice_cols(v, i * dh, dh);
                        self.attend(tape, qh, kh, vh, scale)
                    })
                    .collect();
                tape.concat_cols(&parts)
            };
            let out = tape.matmul(ctx, w[3]);
            let res = tape.add(h, out);
            h = tape.layer_norm_rows(res, w[4], w[5]);
            let ff = tape.matmul(h, w[6]);
            let ff = tape.add_row(ff, w[7]);
            let ff = tape.tanh(ff);
            let ff = tape.matmul(ff, w[8]);
            let ff = tape.add_row(ff, w[9]);
            let res = tape.add(h, ff);
            h = tape.layer_norm_rows(res, w[10], w[11]);
        }
        let hm = tape.gather_rows(h, masked);
        let logits = tape.matmul_t(hm, tok_emb);
        let logits = tape.add_row(logits, out_bias);
        let logp = tape.log_softmax_rows(logits);
        let entries: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .map(|(k, &t)| (k, t as usize))
            .collect();
        tape.pick(logp, &entries)
    }

    fn example_grads(&self, ex: &Example) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let p = self.params.register(&mut tape, true);
        let out = self.forward(&mut tape, &p, &ex.tokens, &[], &ex.masked, &ex.targets);
        let k = ex.masked.len() as f64;
        let loss = -tape.value(out).data().iter().sum::<f64>() / k;
        let seed = Matrix::row_vector(vec![-1.0 / k; ex.masked.len()]);
        let mut grads = tape.backward(out, seed);
        let gs = p
            .iter()
            .zip(&self.params.tensors)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
            .collect();
        (loss, gs)
    }

    fn query(&self, q: &MaskedQuery, weights: Option<&[f64]>) -> GradBundle {
        let mut tape = Tape::new();
        let p = self.params.register(&mut tape, false);
        let injections: Vec<(usize, Var)> = q
            .prompt_injections
            .iter()
            .map(|inj| {
                let row = Arc::new(Matrix::row_vector(inj.vector.clone()));
                let var = if weights.is_some() {
                    tape.param(row)
                } else {
                    tape.constant(row)
                };
                (inj.position, var)
            })
            .collect();
        let out = self.forward(
            &mut tape,
            &p,
            &q.tokens,
            &injections,
            &q.masked_positions,
            &q.target_ids,
        );
        let log_probs = tape.value(out).data().to_vec();
        let d = self.config.embedding_dim;
        let prompt_grads = match weights {
            None => vec![vec![0.0; d]; injections.len()],
            Some(_) if injections.is_empty() || q.masked_positions.is_empty() => {
                vec![vec![0.0; d]; injections.len()]
            }
            Some(w) => {
                let grads = tape.backward(out, Matrix::row_vector(w.to_vec()));
                injections
                    .iter()
                    .map(|(_, var)| {
                        grads
                            .get(*var)
                            .map(|g| g.data().to_vec())
                            .unwrap_or_else(|| vec![0.0; d])
                    })
                    .collect()
            }
        };
        GradBundle {
            log_probs,
            prompt_grads,
        }
    }
}

impl MaskedLm for ReferenceMlm {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward_log_probs(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.check_batch(queries)?;
        let view = self.view();
        Ok(queries
            .par_iter()
            .map(|q| {
                if q.masked_positions.is_empty() {
                    Vec::new()
                } else {
                    view.query(q, None).log_probs
                }
            })
            .collect())
    }

    fn forward_with_prompt_grads(
        &self,
        queries: &[MaskedQuery],
        upstream_weights: &[Vec<f64>],
    ) -> Result<Vec<GradBundle>, BackendError> {
        self.check_batch(queries)?;
        validate_weights(queries, upstream_weights)?;
        let view = self.view();
        let d = self.config.embedding_dim;
        Ok(queries
            .par_iter()
            .zip(upstream_weights.par_iter())
            .map(|(q, w)| {
                if q.masked_positions.is_empty() {
                    GradBundle {
                        log_probs: Vec::new(),
                        prompt_grads: vec![vec![0.0; d]; q.prompt_injections.len()],
                    }
                } else {
                    view.query(q, Some(w))
                }
            })
            .collect())
    }

    fn supports_gradients(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::PromptInjection;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tiny(steps: usize) -> ReferenceMlm {
        let corpus = vec![words("a b c ."), words("c a b ."), words("d b e [P] .")];
        ReferenceMlm::train(&corpus, ReferenceConfig::new(7, 8, 2, steps)).unwrap()
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(ReferenceMlm::train(&[], ReferenceConfig::default()).is_err());
        assert!(ReferenceMlm::train(&[vec![]], ReferenceConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(tiny(20).fingerprint(), tiny(20).fingerprint());
        assert_ne!(tiny(20).fingerprint(), tiny(0).fingerprint());
    }

    #[test]
    fn untrained_model_is_usable() {
        let m = tiny(0);
        let ids = m.tokenize("a b c .");
        let out = m
            .forward_log_probs(&[MaskedQuery {
                tokens: ids,
                masked_positions: vec![1],
                target_ids: vec![m.vocab().id("b")],
                prompt_injections: vec![],
            }])
            .unwrap();
        assert!(out[0][0].is_finite() && out[0][0] < 0.0);
    }

    #[test]
    fn softmax_normalizes_over_vocabulary() {
        let m = tiny(30);
        let tokens = m.tokenize("a b c .");
        let queries: Vec<MaskedQuery> = (0..m.vocab().len() as TokenId)
            .map(|t| MaskedQuery {
                tokens: tokens.clone(),
                masked_positions: vec![2],
                target_ids: vec![t],
                prompt_injections: vec![],
            })
            .collect();
        let total: f64 = m
            .forward_log_probs(&queries)
            .unwrap()
            .iter()
            .map(|v| v[0].exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn placeholder_embedding_injection_is_bit_identical() {
        let m = tiny(10);
        let tokens = m.tokenize("d b e [P] .");
        let base = MaskedQuery {
            tokens,
            masked_positions: vec![1],
            target_ids: vec![m.vocab().id("b")],
            prompt_injections: vec![],
        };
        let mut injected = base.clone();
        injected.prompt_injections = vec![PromptInjection {
            position: 3,
            vector: m.token_embedding(PLACEHOLDER_ID),
        }];
        let a = m.forward_log_probs(&[base]).unwrap();
        let b = m.forward_log_probs(&[injected]).unwrap();
        assert_eq!(a[0][0].to_bits(), b[0][0].to_bits());
    }

    #[test]
    fn prompt_grads_match_finite_differences() {
        let m = tiny(30);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tokens = m.tokenize("a [P] c [P] .");
        let q = MaskedQuery {
            tokens,
            masked_positions: vec![0, 2],
            target_ids: vec![m.vocab().id("a"), m.vocab().id("c")],
            prompt_injections: vec![
                PromptInjection { position: 1, vector: Matrix::normal(1, 8, 0.3, &mut rng).data().to_vec() },
                PromptInjection { position: 3, vector: Matrix::normal(1, 8, 0.3, &mut rng).data().to_vec() },
            ],
        };
        let w = vec![0.7, -1.3];
        let g = m.forward_with_prompt_grads(&[q.clone()], &[w.clone()]).unwrap();
        let plain = m.forward_log_probs(&[q.clone()]).unwrap();
        assert_eq!(g[0].log_probs, plain[0]);
        let objective = |q: &MaskedQuery| -> f64 {
            let lp = m.forward_log_probs(std::slice::from_ref(q)).unwrap();
            lp[0].iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let h = 1e-4;
        for j in 0..2 {
            for c in 0..8 {
                let mut plus = q.clone();
                plus.prompt_injections[j].vector[c] += h;
                let mut minus = q.clone();
                minus.prompt_injections[j].vector[c] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = g[0].prompt_grads[j][c];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4, "slot {j} coord {c}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_grads() {
        let m = tiny(5);
        let q = MaskedQuery {
            tokens: m.tokenize("a [P] c ."),
            masked_positions: vec![0],
            target_ids: vec![m.vocab().id("a")],
            prompt_injections: vec![PromptInjection { position: 1, vector: vec![0.1; 8] }],
        };
        let g = m.forward_with_prompt_grads(&[q], &[vec![0.0]]).unwrap();
        assert!(g[0].prompt_grads[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_saved_shapes_are_rejected() {
        let m = tiny(0);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v["config"]["layers"] = 1.into();
        assert!(ReferenceMlm::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v["config"]["ff_dim"] = 9.into();
        assert!(ReferenceMlm::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn json_round_trip_keeps_fingerprint() {
        let m = tiny(5);
        let back = ReferenceMlm::from_json(&m.to_json()).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
    }

    #[test]
    fn out_of_vocab_target_rejected() {
        let m = tiny(0);
        let q = MaskedQuery {
            tokens: m.tokenize("a b"),
            masked_positions: vec![0],
            target_ids: vec![10_000],
            prompt_injections: vec![],
        };
        assert!(m.forward_log_probs(&[q]).is_err());
    }
}
