//! Span pseudo-log-likelihoods, PMI-based necessity and sufficiency, and the
//! combined salience score.
//!
//! Necessity compares `log P(s|p,o)` against `α·log P(s|p)`; sufficiency
//! compares `log P(o|s,p)` against `α·log P(o|p)`. In normalized mode the
//! difference is divided by a positive denominator: the `joint` form uses
//! `-log P(s|p,o) - α·log P(o|p)` for necessity and
//! `-log P(o|s,p) - α·log P(s|p)` for sufficiency; the `standard` form uses
//! only the role's own conditional.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, MaskedLm, MaskedQuery};
use crate::data::Triple;
use crate::prompt::PromptVectors;
use crate::templates::{render_variants, PromptLayout, RenderedInput, TemplateError, TemplateRegistry};
use crate::training::ModelArtifact;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("invalid scoring configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    Joint,
    Standard,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "normalized" => Ok(ScoreMode::Normalized),
            other => Err(format!("unknown score mode `{other}`")),
        }
    }
}

impl std::str::FromStr for Denominator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "joint" => Ok(Denominator::Joint),
            "standard" => Ok(Denominator::Standard),
            other => Err(format!("unknown denominator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    Fixed(f64),
    /// Learned during training; unsupervised scoring falls back to 0.5.
    Learned,
}

pub const UNSUPERVISED_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub alpha: f64,
    pub mode: ScoreMode,
    pub denominator: Denominator,
    pub clamp_epsilon: f64,
    pub lambda_source: LambdaSource,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            alpha: 0.66,
            mode: ScoreMode::Normalized,
            denominator: Denominator::Joint,
            clamp_epsilon: 1e-6,
            lambda_source: LambdaSource::Learned,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ScoringError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon.is_finite()) {
            return Err(ScoringError::Config("clamp_epsilon must be positive".into()));
        }
        if let LambdaSource::Fixed(l) = self.lambda_source {
            if !(0.0..=1.0).contains(&l) {
                return Err(ScoringError::LambdaOutOfRange(l));
            }
        }
        Ok(())
    }

    /// λ used when no trained model is supplied.
    pub fn unsupervised_lambda(&self) -> f64 {
        match self.lambda_source {
            LambdaSource::Fixed(l) => l,
            LambdaSource::Learned => UNSUPERVISED_LAMBDA,
        }
    }
}

/// The four span log-probabilities, in the order
/// `[log P(o|s,p), log P(s|p,o), log P(o|p), log P(s|p)]` when viewed as an array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBundle {
    pub lp_o_given_sp: f64,
    pub lp_s_given_po: f64,
    pub lp_o_given_p: f64,
    pub lp_s_given_p: f64,
}

pub const O_GIVEN_SP: usize = 0;
pub const S_GIVEN_PO: usize = 1;
pub const O_GIVEN_P: usize = 2;
pub const S_GIVEN_P: usize = 3;

impl ProbabilityBundle {
    pub fn from_array(a: [f64; 4]) -> Self {
        ProbabilityBundle {
            lp_o_given_sp: a[O_GIVEN_SP],
            lp_s_given_po: a[S_GIVEN_PO],
            lp_o_given_p: a[O_GIVEN_P],
            lp_s_given_p: a[S_GIVEN_P],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.lp_o_given_sp,
            self.lp_s_given_po,
            self.lp_o_given_p,
            self.lp_s_given_p,
        ]
    }

    /// Exchanges the subject and object roles.
    pub fn swapped(self) -> Self {
        ProbabilityBundle {
            lp_o_given_sp: self.lp_s_given_po,
            lp_s_given_po: self.lp_o_given_sp,
            lp_o_given_p: self.lp_s_given_p,
            lp_s_given_p: self.lp_o_given_p,
        }
    }

    /// Caps every value at `-epsilon`; the mask marks clamped entries.
    pub fn clamped(self, epsilon: f64) -> (Self, [bool; 4]) {
        let raw = self.to_array();
        let mut mask = [false; 4];
        let mut out = raw;
        for i in 0..4 {
            if raw[i] > -epsilon {
                out[i] = -epsilon;
                mask[i] = true;
            }
        }
        (ProbabilityBundle::from_array(out), mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Necessity,
    Sufficiency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub necessity: f64,
    pub sufficiency: f64,
    pub salience: f64,
}

/// Necessity or sufficiency for a bundle.
pub fn npmi_score(bundle: &ProbabilityBundle, role: Role, config: &ScoreConfig) -> Result<f64, ScoringError> {
    npmi_with_grad(bundle, role, config).map(|(v, _)| v)
}

/// Score plus its gradient with respect to the bundle array.
pub fn npmi_with_grad(
    bundle: &ProbabilityBundle,
    role: Role,
    config: &ScoreConfig,
) -> Result<(f64, [f64; 4]), ScoringError> {
    let lp = bundle.to_array();
    if lp.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::Degenerate(format!("non-finite log-probability in {lp:?}")));
    }
    let (own, marginal, other) = match role {
        Role::Necessity => (S_GIVEN_PO, S_GIVEN_P, O_GIVEN_P),
        Role::Sufficiency => (O_GIVEN_SP, O_GIVEN_P, S_GIVEN_P),
    };
    let alpha = config.alpha;
    let numerator = lp[own] - alpha * lp[marginal];
    let mut grad = [0.0; 4];
    if config.mode == ScoreMode::Raw {
        grad[own] = 1.0;
        grad[marginal] = -alpha;
        return Ok((numerator, grad));
    }
    let denominator = match config.denominator {
        Denominator::Joint => -lp[own] - alpha * lp[other],
        Denominator::Standard => -lp[own],
    };
    if !(denominator > 0.0) || !denominator.is_finite() {
        let names = ["log P(o|s,p)", "log P(s|p,o)", "log P(o|p)", "log P(s|p)"];
        return Err(ScoringError::Degenerate(format!(
            "{role:?} denominator {denominator} is not positive ({} = {}, {} = {})",
            names[own], lp[own], names[other], lp[other]
        )));
    }
    let value = numerator / denominator;
    let d2 = denominator * denominator;
    grad[own] = (denominator + numerator) / d2;
    grad[marginal] = -alpha / denominator;
    if config.denominator == Denominator::Joint {
        grad[other] += alpha * numerator / d2;
    }
    Ok((value, grad))
}

pub fn combine_salience(nec: f64, suf: f64, lambda: f64) -> Result<f64, ScoringError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ScoringError::LambdaOutOfRange(lambda));
    }
    Ok(lambda * suf + (1.0 - lambda) * nec)
}

/// Sum over the plan's steps of the target log-probability at each step.
pub fn span_pll(
    backend: &dyn MaskedLm,
    rendered: &RenderedInput,
    plan_index: usize,
    prompts: &[Vec<f64>],
) -> Result<f64, ScoringError> {
    let plan = rendered
        .plans
        .get(plan_index)
        .ok_or_else(|| ScoringError::Config(format!("no mask plan {plan_index}")))?;
    if plan.steps.is_empty() {
        return Err(ScoringError::Config("empty mask plan".into()));
    }
    let queries = rendered.step_queries(plan, prompts);
    let out = backend.forward_log_probs(&queries)?;
    Ok(out.iter().map(|v| v[0]).sum())
}

/// All backend queries needed for one triple's bundle.
#[derive(Debug, Clone)]
pub struct Probe {
    pub queries: Vec<MaskedQuery>,
    /// Bundle entry fed by the first masked position of each query.
    pub components: Vec<usize>,
}

impl Probe {
    pub fn build(
        registry: &TemplateRegistry,
        triple: &Triple,
        backend: &dyn MaskedLm,
        layout: PromptLayout,
        prompts: &[Vec<f64>],
    ) -> Result<Self, ScoringError> {
        if !prompts.is_empty() && prompts.len() != layout.total() {
            return Err(ScoringError::Config(format!(
                "{} prompt vectors for a layout with {} slots",
                prompts.len(),
                layout.total()
            )));
        }
        let r = render_variants(registry, triple, backend.vocab(), layout)?;
        let mut queries = Vec::new();
        let mut components = Vec::new();
        for (input, plan, component) in [
            (&r.t1, &r.t1.plans[0], O_GIVEN_SP),
            (&r.t2, &r.t2.plans[0], S_GIVEN_PO),
            (&r.t3, &r.t3.plans[0], O_GIVEN_P),
            (&r.t3, &r.t3.plans[1], S_GIVEN_P),
        ] {
            let qs = input.step_queries(plan, prompts);
            components.extend(std::iter::repeat_n(component, qs.len()));
            queries.extend(qs);
        }
        Ok(Probe { queries, components })
    }

    /// Unclamped bundle from the backend's answers to `self.queries`.
    pub fn bundle(&self, log_probs: &[Vec<f64>]) -> ProbabilityBundle {
        let mut sums = [0.0; 4];
        for (c, lp) in self.components.iter().zip(log_probs) {
            sums[*c] += lp[0];
        }
        ProbabilityBundle::from_array(sums)
    }

    /// Upstream weights that route `d_bundle[c]` to every query feeding `c`.
    pub fn weights(&self, d_bundle: [f64; 4]) -> Vec<Vec<f64>> {
        self.queries
            .iter()
            .zip(&self.components)
            .map(|(q, &c)| {
                let mut w = vec![0.0; q.masked_positions.len()];
                w[0] = d_bundle[c];
                w
            })
            .collect()
    }
}

/// Clamped bundle for one triple.
pub fn collect_probabilities(
    backend: &dyn MaskedLm,
    registry: &TemplateRegistry,
    triple: &Triple,
    prompts: &[Vec<f64>],
    layout: PromptLayout,
    config: &ScoreConfig,
) -> Result<ProbabilityBundle, ScoringError> {
    let probe = Probe::build(registry, triple, backend, layout, prompts)?;
    let lp = backend.forward_log_probs(&probe.queries)?;
    Ok(probe.bundle(&lp).clamped(config.clamp_epsilon).0)
}

/// Necessity, sufficiency and salience from a clamped bundle.
pub fn score_bundle(
    bundle: &ProbabilityBundle,
    lambda: f64,
    config: &ScoreConfig,
) -> Result<ScoreTriple, ScoringError> {
    let necessity = npmi_score(bundle, Role::Necessity, config)?;
    let sufficiency = npmi_score(bundle, Role::Sufficiency, config)?;
    Ok(ScoreTriple {
        necessity,
        sufficiency,
        salience: combine_salience(necessity, sufficiency, lambda)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    /// One entry per input triple; `None` where scoring failed.
    pub scores: Vec<Option<ScoreTriple>>,
    pub bundles: Vec<Option<ProbabilityBundle>>,
    pub failures: Vec<TripleFailure>,
}

const CHUNK: usize = 32;

/// Clamped bundles for many triples, batching backend calls. Per-triple
/// failures are returned in place rather than aborting.
pub fn collect_many(
    backend: &dyn MaskedLm,
    registry: &TemplateRegistry,
    triples: &[Triple],
    prompts: &[Vec<f64>],
    layout: PromptLayout,
    config: &ScoreConfig,
) -> Vec<Result<ProbabilityBundle, ScoringError>> {
    let mut out = Vec::with_capacity(triples.len());
    for chunk in triples.chunks(CHUNK) {
        let probes: Vec<Result<Probe, ScoringError>> = chunk
            .iter()
            .map(|t| Probe::build(registry, t, backend, layout, prompts))
            .collect();
        let flat: Vec<MaskedQuery> = probes
            .iter()
            .flatten()
            .flat_map(|p| p.queries.iter().cloned())
            .collect();
        match backend.forward_log_probs(&flat) {
            Ok(lp) => {
                let mut offset = 0;
                for probe in probes {
                    out.push(probe.map(|p| {
                        let n = p.queries.len();
                        let b = p.bundle(&lp[offset..offset + n]);
                        offset += n;
                        b.clamped(config.clamp_epsilon).0
                    }));
                }
            }
            Err(_) => {
                for probe in probes {
                    out.push(probe.and_then(|p| {
                        let lp = backend.forward_log_probs(&p.queries)?;
                        Ok(p.bundle(&lp).clamped(config.clamp_epsilon).0)
                    }));
                }
            }
        }
    }
    out
}

/// Scores triples with a trained model, or unsupervised (no prompt slots,
/// fixed λ) when `model` is `None`.
pub fn score_batch(
    backend: &dyn MaskedLm,
    registry: &TemplateRegistry,
    triples: &[Triple],
    model: Option<&ModelArtifact>,
    config: &ScoreConfig,
) -> Result<BatchScores, ScoringError> {
    config.validate()?;
    let (prompts, layout, lambda): (PromptVectors, PromptLayout, f64) = match model {
        Some(m) => {
            if m.prompt_params.dim() != backend.info().embedding_dim {
                return Err(ScoringError::Config(format!(
                    "model prompts have dimension {}, backend expects {}",
                    m.prompt_params.dim(),
                    backend.info().embedding_dim
                )));
            }
            let lambda = match config.lambda_source {
                LambdaSource::Fixed(l) => l,
                LambdaSource::Learned => m.lambda(),
            };
            (m.prompt_params.encode(), m.config.layout, lambda)
        }
        None => (Vec::new(), PromptLayout::none(), config.unsupervised_lambda()),
    };
    let bundles = collect_many(backend, registry, triples, &prompts, layout, config);
    let mut result = BatchScores {
        scores: Vec::with_capacity(triples.len()),
        bundles: Vec::with_capacity(triples.len()),
        failures: Vec::new(),
    };
    for (index, b) in bundles.into_iter().enumerate() {
        match b.and_then(|b| score_bundle(&b, lambda, config).map(|s| (b, s))) {
            Ok((b, s)) => {
                result.scores.push(Some(s));
                result.bundles.push(Some(b));
            }
            Err(e) => {
                result.scores.push(None);
                result.bundles.push(None);
                result.failures.push(TripleFailure {
                    index,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{UniformBackend, Vocab};
    use proptest::prelude::*;

    const LN10: f64 = std::f64::consts::LN_10;

    fn uniform() -> UniformBackend {
        UniformBackend::with_vocab(10, 4, Vocab::from_tokens(["running", "shoes", "requires", "."])).unwrap()
    }

    fn config(alpha: f64, mode: ScoreMode, denominator: Denominator) -> ScoreConfig {
        ScoreConfig {
            alpha,
            mode,
            denominator,
            ..ScoreConfig::default()
        }
    }

    #[test]
    fn frozen_npmi_value() {
        let b = ProbabilityBundle {
            lp_o_given_sp: -1.0,
            lp_s_given_po: 0.5f64.ln(),
            lp_o_given_p: 0.1f64.ln(),
            lp_s_given_p: 0.25f64.ln(),
        };
        let joint = npmi_score(&b, Role::Necessity, &config(0.66, ScoreMode::Normalized, Denominator::Joint)).unwrap();
        assert!((joint - 0.100_235_787_693_514_5).abs() < 1e-12);
        let raw = npmi_score(&b, Role::Necessity, &config(0.66, ScoreMode::Raw, Denominator::Joint)).unwrap();
        assert!((raw - 0.221_807_097_779_182_5).abs() < 1e-12);
        let std = npmi_score(&b, Role::Necessity, &config(0.66, ScoreMode::Normalized, Denominator::Standard)).unwrap();
        assert!((std - 0.32).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator_reported() {
        let b = ProbabilityBundle::from_array([0.0; 4]);
        let err = npmi_score(&b, Role::Necessity, &ScoreConfig::default()).unwrap_err();
        assert!(err.to_string().contains("log P(s|p,o)"));
    }

    #[test]
    fn combine_endpoints() {
        assert_eq!(combine_salience(0.2, 0.6, 1.0).unwrap(), 0.6);
        assert_eq!(combine_salience(0.2, 0.6, 0.0).unwrap(), 0.2);
        assert!((combine_salience(0.2, 0.6, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(combine_salience(0.3, 0.3, 0.37).unwrap(), 0.3);
        assert!(combine_salience(0.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn uniform_bundle_and_plls() {
        let b = uniform();
        let reg = TemplateRegistry::default();
        let t = Triple::from_parts("running", "requires", "running shoes").unwrap();
        let bundle = collect_probabilities(&b, &reg, &t, &[], PromptLayout::none(), &ScoreConfig::default()).unwrap();
        assert_eq!(bundle.to_array().map(|v| (v / LN10).round()), [-2.0, -1.0, -2.0, -1.0]);
        let r = render_variants(&reg, &t, b.vocab(), PromptLayout::none()).unwrap();
        assert!((span_pll(&b, &r.t1, 0, &[]).unwrap() + 2.0 * LN10).abs() < 1e-12);
        assert!((span_pll(&b, &r.t3, 1, &[]).unwrap() + LN10).abs() < 1e-12);
    }

    #[test]
    fn clamping_caps_degenerate_values() {
        let (b, mask) = ProbabilityBundle::from_array([0.0, -2.0, 1.0, -1e-9]).clamped(1e-6);
        assert_eq!(b.to_array(), [-1e-6, -2.0, -1e-6, -1e-6]);
        assert_eq!(mask, [true, false, true, true]);
    }

    #[test]
    fn unsupervised_uniform_scores_are_zero() {
        let b = uniform();
        let triples = vec![
            Triple::from_parts("running", "requires", "running shoes").unwrap(),
            Triple::from_parts("running", "requires", "running shoes").unwrap(),
            Triple::from_parts("x", "nope", "y").unwrap(),
        ];
        let cfg = config(1.0, ScoreMode::Normalized, Denominator::Joint);
        let out = score_batch(&b, &TemplateRegistry::default(), &triples, None, &cfg).unwrap();
        let s = out.scores[0].unwrap();
        assert!(s.necessity.abs() < 1e-12 && s.sufficiency.abs() < 1e-12);
        assert_eq!(out.scores[0], out.scores[1]);
        assert!(out.scores[2].is_none());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].index, 2);
        assert!(score_batch(&b, &TemplateRegistry::default(), &[], None, &cfg).unwrap().scores.is_empty());
    }

    fn arb_bundle() -> impl Strategy<Value = ProbabilityBundle> {
        prop::array::uniform4(-12.0f64..-1e-3).prop_map(ProbabilityBundle::from_array)
    }

    proptest! {
        #[test]
        fn role_symmetry(b in arb_bundle(), alpha in 0.0f64..1.5) {
            for mode in [ScoreMode::Raw, ScoreMode::Normalized] {
                for den in [Denominator::Joint, Denominator::Standard] {
                    let c = config(alpha, mode, den);
                    let nec = npmi_score(&b, Role::Necessity, &c).unwrap();
                    let suf = npmi_score(&b.swapped(), Role::Sufficiency, &c).unwrap();
                    prop_assert_eq!(nec, suf);
                }
            }
        }

        #[test]
        fn raw_is_normalized_numerator(b in arb_bundle(), alpha in 0.0f64..1.5) {
            let raw = npmi_score(&b, Role::Necessity, &config(alpha, ScoreMode::Raw, Denominator::Joint)).unwrap();
            let norm = npmi_score(&b, Role::Necessity, &config(alpha, ScoreMode::Normalized, Denominator::Joint)).unwrap();
            let d = -b.lp_s_given_po - alpha * b.lp_o_given_p;
            prop_assert!((raw / d - norm).abs() < 1e-12);
        }

        #[test]
        fn independence_gives_zero(b in arb_bundle()) {
            let mut b = b;
            b.lp_s_given_po = b.lp_s_given_p;
            for mode in [ScoreMode::Raw, ScoreMode::Normalized] {
                let v = npmi_score(&b, Role::Necessity, &config(1.0, mode, Denominator::Joint)).unwrap();
                prop_assert!(v.abs() < 1e-15);
            }
        }

        #[test]
        fn gradient_matches_finite_differences(b in arb_bundle(), alpha in 0.0f64..1.5) {
            for role in [Role::Necessity, Role::Sufficiency] {
                for den in [Denominator::Joint, Denominator::Standard] {
                    let c = config(alpha, ScoreMode::Normalized, den);
                    let (_, g) = npmi_with_grad(&b, role, &c).unwrap();
                    for i in 0..4 {
                        let h = 1e-6;
                        let mut p = b.to_array();
                        p[i] += h;
                        let mut m = b.to_array();
                        m[i] -= h;
                        let num = (npmi_score(&ProbabilityBundle::from_array(p), role, &c).unwrap()
                            - npmi_score(&ProbabilityBundle::from_array(m), role, &c).unwrap()) / (2.0 * h);
                        prop_assert!((num - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
                    }
                }
            }
        }
    }
}
