//! Prompt and λ training against a frozen backend, plus the model artifact.
//!
//! Each mini-batch runs two backend passes: one to read the span
//! log-probabilities, and one with upstream weights `∂loss/∂log-prob` to
//! obtain gradients at the injected prompt vectors, which then flow back
//! through the prompt encoder.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, MaskedLm, MaskedQuery};
use crate::data::{AnnotatedTriple, Dataset};
use crate::eval::{self, EvalError, ThresholdMethod};
use crate::optim::Adam;
use crate::prompt::{PromptError, PromptGrads, PromptParams, PromptVectors, PARAM_NAMES};
use crate::rng::substream;
use crate::scoring::{
    collect_many, npmi_with_grad, score_bundle, LambdaSource, Probe, Role, ScoreConfig,
    ScoringError,
};
use crate::tape::Matrix;
use crate::templates::{PromptLayout, TemplateRegistry};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset `{dataset}` does not fit the {mode} loss: {message}")]
    Schema {
        dataset: String,
        mode: &'static str,
        message: String,
    },
    #[error("backend `{0}` cannot provide prompt gradients")]
    GradientsUnsupported(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}: {triples}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        triples: String,
    },
    #[error("backend parameters changed during training ({before} -> {after})")]
    BackendMutated { before: String, after: String },
    #[error("lambda left (0, 1) at epoch {0}")]
    LambdaEscaped(usize),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("model artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Simplified,
    Original,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Simplified => "simplified",
            LossMode::Original => "original",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simplified" => Ok(LossMode::Simplified),
            "original" => Ok(LossMode::Original),
            other => Err(format!("unknown loss mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub lambda_init: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub layout: PromptLayout,
    pub score_config: ScoreConfig,
    /// LSTM hidden size per direction; `None` means half the embedding dim.
    pub hidden_size: Option<usize>,
    pub early_stopping: bool,
    pub patience: usize,
    pub threshold_method: ThresholdMethod,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::Simplified,
            learning_rate: 1e-5,
            batch_size: 8,
            gamma: 0.1,
            lambda_init: 0.5,
            epochs: 10,
            seed: 0,
            train_fraction: 1.0,
            layout: PromptLayout::default(),
            score_config: ScoreConfig::default(),
            hidden_size: None,
            early_stopping: false,
            patience: 3,
            threshold_method: ThresholdMethod::Sweep,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction must be in (0, 1], got {}", self.train_fraction));
        }
        if self.score_config.lambda_source == LambdaSource::Learned
            && !(self.lambda_init > 0.0 && self.lambda_init < 1.0)
        {
            return bad(format!("lambda_init must be in (0, 1) when learned, got {}", self.lambda_init));
        }
        if self.layout.total() == 0 {
            return bad("training needs at least one prompt slot".into());
        }
        if self.hidden_size == Some(0) {
            return bad("hidden_size must be positive".into());
        }
        self.score_config.validate()?;
        Ok(())
    }

    pub fn hidden_for(&self, dim: usize) -> usize {
        self.hidden_size.unwrap_or((dim / 2).max(1))
    }
}

pub fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn length_check(a: usize, b: usize) -> Result<(), TrainingError> {
    if a != b {
        return Err(TrainingError::Config(format!("{a} predictions but {b} labels")));
    }
    if a == 0 {
        return Err(TrainingError::Config("empty batch".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn loss_simplified(predictions: &[f64], labels: &[f64]) -> Result<f64, TrainingError> {
    loss_simplified_grad(predictions, labels).map(|(l, _)| l)
}

pub fn loss_simplified_grad(predictions: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), TrainingError> {
    length_check(predictions.len(), labels.len())?;
    let n = predictions.len() as f64;
    let loss = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (y - p) * (y - p))
        .sum::<f64>()
        / n;
    let grad = predictions.iter().zip(labels).map(|(p, y)| 2.0 * (p - y) / n).collect();
    Ok((loss, grad))
}

/// `log(1 + Σ exp(x_j - x_i))` over pairs with `a_i > a_j`, and its gradient.
fn pair_term(x: &[f64], a: &[f64]) -> (f64, Vec<f64>) {
    let mut pairs = Vec::new();
    for i in 0..x.len() {
        for j in 0..x.len() {
            if a[i] > a[j] {
                pairs.push((i, j, x[j] - x[i]));
            }
        }
    }
    let mut grad = vec![0.0; x.len()];
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let m = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let sum = (-m).exp() + pairs.iter().map(|p| (p.2 - m).exp()).sum::<f64>();
    let loss = m + sum.ln();
    for &(i, j, z) in &pairs {
        let w = (z - loss).exp();
        grad[j] += w;
        grad[i] -= w;
    }
    (loss, grad)
}

/// In-batch pairwise ranking loss over salience, plus γ-weighted necessity
/// and sufficiency terms. Entries are `[salience, necessity, sufficiency]`.
pub fn loss_original(pred: &[[f64; 3]], annot: &[[f64; 3]], gamma: f64) -> Result<f64, TrainingError> {
    loss_original_grad(pred, annot, gamma).map(|(l, _)| l)
}

pub fn loss_original_grad(
    pred: &[[f64; 3]],
    annot: &[[f64; 3]],
    gamma: f64,
) -> Result<(f64, Vec<[f64; 3]>), TrainingError> {
    length_check(pred.len(), annot.len())?;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; pred.len()];
    for k in 0..3 {
        let weight = if k == 0 { 1.0 } else { gamma };
        if weight == 0.0 {
            continue;
        }
        let x: Vec<f64> = pred.iter().map(|p| p[k]).collect();
        let a: Vec<f64> = annot.iter().map(|p| p[k]).collect();
        let (l, g) = pair_term(&x, &a);
        loss += weight * l;
        for (out, gi) in grad.iter_mut().zip(g) {
            out[k] += weight * gi;
        }
    }
    Ok((loss, grad))
}

/// Trainable state: prompt parameters and the unconstrained λ parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PromptParams,
    pub lambda_param: f64,
}

/// Everything a batch evaluation needs besides the trainable state.
pub struct TrainContext<'a> {
    pub backend: &'a dyn MaskedLm,
    pub registry: &'a TemplateRegistry,
    pub config: &'a TrainConfig,
}

impl TrainContext<'_> {
    fn lambda(&self, state: &TrainState) -> f64 {
        match self.config.score_config.lambda_source {
            LambdaSource::Fixed(l) => l,
            LambdaSource::Learned => logistic(state.lambda_param),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub loss: f64,
    pub params: PromptGrads,
    pub lambda_param: f64,
}

fn annotations(record: &AnnotatedTriple) -> Option<[f64; 3]> {
    Some([
        f64::from(record.salient?),
        record.necessity?,
        record.sufficiency?,
    ])
}

struct Forward {
    probes: Vec<Probe>,
    loss: f64,
    d_bundles: Vec<[f64; 4]>,
    d_lambda: f64,
}

fn forward(
    state: &TrainState,
    batch: &[&AnnotatedTriple],
    ctx: &TrainContext<'_>,
    prompts: &PromptVectors,
) -> Result<Forward, TrainingError> {
    let cfg = ctx.config;
    let sc = &cfg.score_config;
    let probes: Vec<Probe> = batch
        .iter()
        .map(|r| Probe::build(ctx.registry, &r.triple, ctx.backend, cfg.layout, prompts))
        .collect::<Result<_, _>>()?;
    let flat: Vec<MaskedQuery> = probes.iter().flat_map(|p| p.queries.iter().cloned()).collect();
    let lp = ctx.backend.forward_log_probs(&flat)?;
    let lambda = ctx.lambda(state);

    let mut offset = 0;
    let mut parts = Vec::with_capacity(batch.len());
    for p in &probes {
        let n = p.queries.len();
        let (bundle, mask) = p.bundle(&lp[offset..offset + n]).clamped(sc.clamp_epsilon);
        offset += n;
        let (nec, g_nec) = npmi_with_grad(&bundle, Role::Necessity, sc)?;
        let (suf, g_suf) = npmi_with_grad(&bundle, Role::Sufficiency, sc)?;
        parts.push((nec, suf, g_nec, g_suf, mask));
    }
    let preds: Vec<[f64; 3]> = parts
        .iter()
        .map(|&(nec, suf, ..)| [lambda * suf + (1.0 - lambda) * nec, nec, suf])
        .collect();

    let (loss, d_pred): (f64, Vec<[f64; 3]>) = match cfg.loss_mode {
        LossMode::Simplified => {
            let s: Vec<f64> = preds.iter().map(|p| p[0]).collect();
            let y: Vec<f64> = batch.iter().map(|r| f64::from(r.salient.unwrap_or(0))).collect();
            let (l, g) = loss_simplified_grad(&s, &y)?;
            (l, g.into_iter().map(|v| [v, 0.0, 0.0]).collect())
        }
        LossMode::Original => {
            let a: Vec<[f64; 3]> = batch
                .iter()
                .map(|r| annotations(r).unwrap_or([0.0; 3]))
                .collect();
            loss_original_grad(&preds, &a, cfg.gamma)?
        }
    };

    let mut d_lambda = 0.0;
    let d_bundles = parts
        .iter()
        .zip(&d_pred)
        .map(|(&(nec, suf, g_nec, g_suf, mask), d)| {
            d_lambda += d[0] * (suf - nec);
            let d_nec = d[0] * (1.0 - lambda) + d[1];
            let d_suf = d[0] * lambda + d[2];
            let mut out = [0.0; 4];
            for k in 0..4 {
                if !mask[k] {
                    out[k] = d_nec * g_nec[k] + d_suf * g_suf[k];
                }
            }
            out
        })
        .collect();
    Ok(Forward {
        probes,
        loss,
        d_bundles,
        d_lambda,
    })
}

/// Batch loss at `state`.
pub fn batch_loss(
    state: &TrainState,
    batch: &[&AnnotatedTriple],
    ctx: &TrainContext<'_>,
) -> Result<f64, TrainingError> {
    let prompts = state.params.encode();
    Ok(forward(state, batch, ctx, &prompts)?.loss)
}

/// Batch loss and its gradient with respect to every prompt parameter and
/// the λ parameter.
pub fn batch_loss_and_grads(
    state: &TrainState,
    batch: &[&AnnotatedTriple],
    ctx: &TrainContext<'_>,
) -> Result<BatchGrads, TrainingError> {
    let prompts = state.params.encode();
    let fwd = forward(state, batch, ctx, &prompts)?;
    let mut queries = Vec::new();
    let mut weights = Vec::new();
    for (p, d) in fwd.probes.iter().zip(&fwd.d_bundles) {
        queries.extend(p.queries.iter().cloned());
        weights.extend(p.weights(*d));
    }
    let bundles = ctx.backend.forward_with_prompt_grads(&queries, &weights)?;
    let (l, d) = (state.params.slots(), state.params.dim());
    let mut upstream = Matrix::zeros(l, d);
    for b in &bundles {
        for (slot, g) in b.prompt_grads.iter().enumerate() {
            for (c, v) in g.iter().enumerate() {
                upstream.set(slot, c, upstream.get(slot, c) + v);
            }
        }
    }
    let params = state.params.backward(&upstream);
    let lambda_param = match ctx.config.score_config.lambda_source {
        LambdaSource::Learned => {
            let lambda = logistic(state.lambda_param);
            fwd.d_lambda * lambda * (1.0 - lambda)
        }
        LambdaSource::Fixed(_) => 0.0,
    };
    Ok(BatchGrads {
        loss: fwd.loss,
        params,
        lambda_param,
    })
}

/// Indices kept for training: `round(fraction · n)` of them, chosen with the
/// seed and returned in ascending order.
pub fn training_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "train-fraction"));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_auc: f64,
    pub dev_f1: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub prompt_params: PromptParams,
    /// Unconstrained λ parameter; λ = logistic(lambda_param) when learned.
    pub lambda_param: f64,
    pub threshold: f64,
    pub config: TrainConfig,
    pub backend_fingerprint: String,
    pub log: Vec<EpochLog>,
    pub templates: Vec<(String, String)>,
}

fn check_schema(dataset: &Dataset, mode: LossMode, needs: LossMode) -> Result<(), TrainingError> {
    let bad = dataset.records.iter().position(|r| match needs {
        LossMode::Simplified => r.salient.is_none(),
        LossMode::Original => annotations(r).is_none(),
    });
    match bad {
        Some(i) => Err(TrainingError::Schema {
            dataset: dataset.name.clone(),
            mode: mode.name(),
            message: format!("record {} lacks required labels", i + 1),
        }),
        None => Ok(()),
    }
}

/// Salience scores for a labeled dataset under `state`.
fn salience_scores(
    state: &TrainState,
    dataset: &Dataset,
    ctx: &TrainContext<'_>,
) -> Result<Vec<f64>, TrainingError> {
    let prompts = state.params.encode();
    let triples = dataset.triples();
    let lambda = ctx.lambda(state);
    collect_many(
        ctx.backend,
        ctx.registry,
        &triples,
        &prompts,
        ctx.config.layout,
        &ctx.config.score_config,
    )
    .into_iter()
    .map(|b| Ok(score_bundle(&b?, lambda, &ctx.config.score_config)?.salience))
    .collect()
}

/// Trains prompts and λ; the backend is only read.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    backend: &dyn MaskedLm,
    registry: &TemplateRegistry,
) -> Result<ModelArtifact, TrainingError> {
    config.validate()?;
    check_schema(train_set, config.loss_mode, config.loss_mode)?;
    check_schema(dev_set, config.loss_mode, LossMode::Simplified)?;
    if dev_set.is_empty() {
        return Err(TrainingError::Config("development set is empty".into()));
    }
    if !backend.supports_gradients() {
        return Err(TrainingError::GradientsUnsupported(backend.fingerprint()));
    }
    let before = backend.fingerprint();
    let d = backend.info().embedding_dim;
    let ctx = TrainContext {
        backend,
        registry,
        config,
    };
    let mut state = TrainState {
        params: PromptParams::init(config.seed, config.layout.total(), d, config.hidden_for(d))?,
        lambda_param: match config.score_config.lambda_source {
            LambdaSource::Learned => logit(config.lambda_init),
            LambdaSource::Fixed(l) => l,
        },
    };
    let used = training_subset(train_set.len(), config.train_fraction, config.seed);
    if used.is_empty() && config.epochs > 0 {
        return Err(TrainingError::Config("training subset is empty".into()));
    }
    let dev_labels = dev_set.salient_labels().expect("checked above");
    let mut shapes: Vec<(usize, usize)> = state.params.tensors().iter().map(Matrix::shape).collect();
    shapes.push((1, 1));
    let mut adam = Adam::new(config.learning_rate, shapes);
    let mut shuffle_rng = substream(config.seed, "epoch-shuffle");
    let mut log = Vec::new();
    let mut best: Option<(f64, TrainState)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let mut order = used.clone();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&AnnotatedTriple> = chunk.iter().map(|&i| &train_set.records[i]).collect();
            let g = batch_loss_and_grads(&state, &batch, &ctx)?;
            if !g.loss.is_finite() || !g.lambda_param.is_finite() || !g.params.iter().all(Matrix::is_finite) {
                let triples = batch.iter().map(|r| r.triple.to_string()).collect::<Vec<_>>().join(", ");
                log::error!("non-finite loss in epoch {epoch}, batch {b}: {triples}");
                return Err(TrainingError::NonFiniteLoss { epoch, batch: b, triples });
            }
            let mut tensors: Vec<Matrix> = state.params.tensors().to_vec();
            tensors.push(Matrix::scalar(state.lambda_param));
            let mut grads = g.params;
            grads.push(Matrix::scalar(g.lambda_param));
            adam.step(&mut tensors, &grads);
            let u = tensors.pop().expect("lambda slot").data()[0];
            if config.score_config.lambda_source == LambdaSource::Learned {
                state.lambda_param = u;
                let lambda = logistic(u);
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(TrainingError::LambdaEscaped(epoch));
                }
            }
            state.params.tensors_mut().clone_from_slice(&tensors);
            total += g.loss;
            batches += 1;
        }
        let dev_scores = salience_scores(&state, dev_set, &ctx)?;
        let theta = eval::select_threshold(&dev_scores, &dev_labels, config.threshold_method)?;
        let report = eval::classification_metrics(&dev_scores, &dev_labels, theta)?;
        let entry = EpochLog {
            epoch,
            train_loss: total / batches.max(1) as f64,
            dev_auc: report.auc,
            dev_f1: report.f1,
            lambda: ctx.lambda(&state),
        };
        log::info!(
            "epoch {epoch}: loss {:.6} dev auc {:.4} dev f1 {:.4} lambda {:.4}",
            entry.train_loss,
            entry.dev_auc,
            entry.dev_f1,
            entry.lambda
        );
        log.push(entry);
        if config.early_stopping {
            if best.as_ref().is_none_or(|(auc, _)| report.auc > *auc) {
                best = Some((report.auc, state.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    log::info!("early stopping after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, s)) = best {
        state = s;
    }

    let dev_scores = salience_scores(&state, dev_set, &ctx)?;
    let threshold = eval::select_threshold(&dev_scores, &dev_labels, config.threshold_method)?;
    let after = backend.fingerprint();
    if before != after {
        return Err(TrainingError::BackendMutated { before, after });
    }
    Ok(ModelArtifact {
        prompt_params: state.params,
        lambda_param: state.lambda_param,
        threshold,
        config: config.clone(),
        backend_fingerprint: before,
        log,
        templates: registry.pairs(),
    })
}

const MANIFEST_FILE: &str = "manifest.json";
const PARAMS_FILE: &str = "params.txt";

#[derive(Serialize, Deserialize)]
struct ArtifactManifest {
    format_version: u32,
    config: TrainConfig,
    backend_fingerprint: String,
    threshold: f64,
    lambda_param: f64,
    lambda: f64,
    slots: usize,
    dim: usize,
    hidden: usize,
    templates: Vec<(String, String)>,
    log: Vec<EpochLog>,
}

impl ModelArtifact {
    pub fn lambda(&self) -> f64 {
        match self.config.score_config.lambda_source {
            LambdaSource::Fixed(l) => l,
            LambdaSource::Learned => logistic(self.lambda_param),
        }
    }

    pub fn registry(&self) -> Result<TemplateRegistry, TrainingError> {
        TemplateRegistry::from_pairs(self.templates.iter().map(|(p, t)| (p.as_str(), t.as_str())))
            .map_err(|e| TrainingError::Config(e.to_string()))
    }

    /// Writes `manifest.json` and `params.txt` into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<(), TrainingError> {
        let err = |path: &Path, e: &dyn std::fmt::Display| TrainingError::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
        let manifest = ArtifactManifest {
            format_version: 1,
            config: self.config.clone(),
            backend_fingerprint: self.backend_fingerprint.clone(),
            threshold: self.threshold,
            lambda_param: self.lambda_param,
            lambda: self.lambda(),
            slots: self.prompt_params.slots(),
            dim: self.prompt_params.dim(),
            hidden: self.prompt_params.hidden(),
            templates: self.templates.clone(),
            log: self.log.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text + "\n").map_err(|e| err(&path, &e))?;
        let mut params = String::new();
        for (name, m) in self.prompt_params.named() {
            let _ = writeln!(params, "{name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(params, "{}", row.join(" "));
            }
        }
        let path = dir.join(PARAMS_FILE);
        std::fs::write(&path, params).map_err(|e| err(&path, &e))
    }

    pub fn load(dir: &Path) -> Result<Self, TrainingError> {
        let err = |path: &Path, message: String| TrainingError::Artifact {
            path: path.to_path_buf(),
            message,
        };
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| err(&mpath, e.to_string()))?;
        let manifest: ArtifactManifest =
            serde_json::from_str(&text).map_err(|e| err(&mpath, e.to_string()))?;
        let ppath = dir.join(PARAMS_FILE);
        let text = std::fs::read_to_string(&ppath).map_err(|e| err(&ppath, e.to_string()))?;
        let mut lines = text.lines().enumerate();
        let mut named = Vec::new();
        while let Some((i, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            let bad_header = || err(&ppath, format!("line {}: bad header `{header}`", i + 1));
            if parts.len() != 3 || !PARAM_NAMES.contains(&parts[0]) {
                return Err(bad_header());
            }
            let rows: usize = parts[1].parse().map_err(|_| bad_header())?;
            let cols: usize = parts[2].parse().map_err(|_| bad_header())?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (j, line) = lines
                    .next()
                    .ok_or_else(|| err(&ppath, format!("{} truncated", parts[0])))?;
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| {
                        err(&ppath, format!("line {}: bad number `{tok}`", j + 1))
                    })?);
                }
            }
            if data.len() != rows * cols {
                return Err(err(&ppath, format!("{} has {} values, expected {}", parts[0], data.len(), rows * cols)));
            }
            named.push((parts[0].to_string(), Matrix::from_vec(rows, cols, data)));
        }
        let prompt_params = PromptParams::from_named(manifest.slots, manifest.dim, manifest.hidden, named)?;
        if !manifest.threshold.is_finite() {
            return Err(err(&mpath, "threshold is not finite".into()));
        }
        Ok(ModelArtifact {
            prompt_params,
            lambda_param: manifest.lambda_param,
            threshold: manifest.threshold,
            config: manifest.config,
            backend_fingerprint: manifest.backend_fingerprint,
            log: manifest.log,
            templates: manifest.templates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ReferenceConfig, ReferenceMlm, UniformBackend, Vocab};
    use crate::data::{Schema, Triple};

    #[test]
    fn simplified_examples() {
        assert_eq!(loss_simplified(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(loss_simplified(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(loss_simplified(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(loss_simplified(&[0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn original_examples() {
        assert_eq!(loss_original(&[[0.3, 0.2, 0.1]], &[[1.0, 1.0, 1.0]], 0.1).unwrap(), 0.0);
        let l = loss_original(&[[0.4, 0.0, 0.0], [0.4, 0.0, 0.0]], &[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 0.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let good = loss_original(&[[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 0.0).unwrap();
        let bad = loss_original(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 0.0).unwrap();
        assert!((good - 4.539889921686465e-5).abs() < 1e-15);
        assert!(good < bad);
    }

    #[test]
    fn original_gradient_matches_finite_differences() {
        let pred = [[0.3, -0.2, 0.5], [0.1, 0.4, -0.3], [-0.5, 0.2, 0.0]];
        let annot = [[1.0, 0.5, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.5]];
        let (_, g) = loss_original_grad(&pred, &annot, 0.3).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let h = 1e-6;
                let mut p = pred;
                p[i][k] += h;
                let mut m = pred;
                m[i][k] -= h;
                let num = (loss_original(&p, &annot, 0.3).unwrap() - loss_original(&m, &annot, 0.3).unwrap()) / (2.0 * h);
                assert!((num - g[i][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(training_subset(100, 0.2, 3).len(), 20);
        assert_eq!(training_subset(100, 0.2, 3), training_subset(100, 0.2, 3));
        assert_eq!(training_subset(10, 1.0, 1), (0..10).collect::<Vec<_>>());
    }

    fn tiny_world() -> (ReferenceMlm, Dataset) {
        let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let corpus = vec![
            words("run requires shoe ."),
            words("swim requires pool ."),
            words("run requires pool ."),
            words("swim [P] requires [P] shoe [P] ."),
        ];
        let backend = ReferenceMlm::train(&corpus, ReferenceConfig::new(1, 8, 1, 20)).unwrap();
        let records = vec![
            AnnotatedTriple::fully_labeled(Triple::from_parts("run", "requires", "shoe").unwrap(), 1.0, 0.5, 1),
            AnnotatedTriple::fully_labeled(Triple::from_parts("swim", "requires", "pool").unwrap(), 1.0, 1.0, 1),
            AnnotatedTriple::fully_labeled(Triple::from_parts("run", "requires", "pool").unwrap(), 0.0, 0.0, 0),
            AnnotatedTriple::fully_labeled(Triple::from_parts("swim", "requires", "shoe").unwrap(), 0.5, 0.0, 0),
        ];
        (backend, Dataset::new("tiny", Schema::Original, records))
    }

    fn small_config(mode: LossMode) -> TrainConfig {
        TrainConfig {
            loss_mode: mode,
            layout: PromptLayout::new(1, 1, 1),
            learning_rate: 1e-2,
            batch_size: 2,
            epochs: 2,
            gamma: 0.5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn train_keeps_backend_frozen_and_is_deterministic() {
        let (backend, data) = tiny_world();
        let reg = TemplateRegistry::default();
        let cfg = small_config(LossMode::Original);
        let a = train(&cfg, &data, &data, &backend, &reg).unwrap();
        let b = train(&cfg, &data, &data, &backend, &reg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.backend_fingerprint, backend.fingerprint());
        assert_eq!(a.log.len(), 2);
        assert!(a.lambda() > 0.0 && a.lambda() < 1.0);
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (backend, data) = tiny_world();
        let mut cfg = small_config(LossMode::Simplified);
        cfg.epochs = 0;
        let a = train(&cfg, &data, &data, &backend, &TemplateRegistry::default()).unwrap();
        assert_eq!(a.prompt_params, PromptParams::init(cfg.seed, 3, 8, 4).unwrap());
        assert_eq!(a.lambda(), 0.5);
        assert!(a.log.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (backend, data) = tiny_world();
        let reg = TemplateRegistry::default();
        let uniform = UniformBackend::with_vocab(10, 8, Vocab::specials_only()).unwrap();
        let cfg = small_config(LossMode::Original);
        let unlabeled = Dataset::new(
            "u",
            Schema::Unlabeled,
            vec![AnnotatedTriple::unlabeled(Triple::from_parts("run", "requires", "shoe").unwrap())],
        );
        assert!(matches!(train(&cfg, &unlabeled, &data, &backend, &reg), Err(TrainingError::Schema { .. })));
        assert!(train(&cfg, &data, &data, &uniform, &reg).is_ok());
        let mut bad = cfg.clone();
        bad.layout = PromptLayout::none();
        assert!(matches!(train(&bad, &data, &data, &backend, &reg), Err(TrainingError::Config(_))));
        let mut bad = cfg;
        bad.train_fraction = 0.0;
        assert!(train(&bad, &data, &data, &backend, &reg).is_err());
    }

    #[test]
    fn artifact_round_trip() {
        let (backend, data) = tiny_world();
        let a = train(&small_config(LossMode::Simplified), &data, &data, &backend, &TemplateRegistry::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = ModelArtifact::load(dir.path()).unwrap();
        assert_eq!(a, b);
        std::fs::write(dir.path().join(PARAMS_FILE), "pseudo_table 1 1\nnope\n").unwrap();
        assert!(ModelArtifact::load(dir.path()).is_err());
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let (backend, data) = tiny_world();
        let reg = TemplateRegistry::default();
        for mode in [LossMode::Simplified, LossMode::Original] {
            let cfg = small_config(mode);
            let ctx = TrainContext { backend: &backend, registry: &reg, config: &cfg };
            let state = TrainState {
                params: PromptParams::init(4, 3, 8, 4).unwrap(),
                lambda_param: 0.3,
            };
            let batch: Vec<&AnnotatedTriple> = data.records.iter().collect();
            let g = batch_loss_and_grads(&state, &batch, &ctx).unwrap();
            let h = 1e-5;
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            for t in [0usize, 1, 7, 10] {
                let (rows, cols) = state.params.tensors()[t].shape();
                for (r, c) in [(0, 0), (rows - 1, cols - 1)] {
                    let mut plus = state.clone();
                    let v = plus.params.tensors()[t].get(r, c);
                    plus.params.tensors_mut()[t].set(r, c, v + h);
                    let mut minus = state.clone();
                    minus.params.tensors_mut()[t].set(r, c, v - h);
                    let n = (batch_loss(&plus, &batch, &ctx).unwrap() - batch_loss(&minus, &batch, &ctx).unwrap()) / (2.0 * h);
                    assert!(rel(g.params[t].get(r, c), n) < 1e-3, "{mode:?} tensor {t}: {} vs {n}", g.params[t].get(r, c));
                }
            }
            let mut plus = state.clone();
            plus.lambda_param += h;
            let mut minus = state.clone();
            minus.lambda_param -= h;
            let n = (batch_loss(&plus, &batch, &ctx).unwrap() - batch_loss(&minus, &batch, &ctx).unwrap()) / (2.0 * h);
            assert!(rel(g.lambda_param, n) < 1e-3, "{mode:?} lambda: {} vs {n}", g.lambda_param);
        }
    }
}
