//! Hard templates per predicate and the three masked variants built from them.
//!
//! A rendered sequence is laid out as
//! `prefix, subject, n_pre slots, middle, n_mid slots, object, n_post slots, suffix`,
//! where prefix/middle/suffix are the template text around `[X]` and `[Y]`.
//! Prompt slots carry the placeholder token id; their embeddings are
//! replaced downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{MaskedQuery, PromptInjection, TokenId, Vocab, PLACEHOLDER_ID};
use crate::data::{Predicate, Triple};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{pattern}` must contain exactly one [X] and one [Y], with [X] first")]
    BadPattern { pattern: String },
    #[error("no template registered for predicate `{0}`")]
    Unregistered(String),
    #[error("{role} `{text}` tokenizes to an empty sequence")]
    EmptyTokenization { role: &'static str, text: String },
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

pub const DEFAULT_TEMPLATES: [(&str, &str); 3] = [
    ("requires", "[X] requires [Y]."),
    ("capable_of", "[X] is capable of [Y]."),
    ("complementary", "[X] is complementary to [Y]."),
];

pub const CHINESE_TEMPLATES: [(&str, &str); 3] = [
    ("requires", "[X]需要[Y]。"),
    ("capable_of", "[X]能够[Y]。"),
    ("complementary", "[X]和[Y]互补。"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardTemplate {
    predicate: String,
    pattern: String,
}

impl HardTemplate {
    pub fn new(predicate: &str, pattern: &str) -> Result<Self, TemplateError> {
        let bad = || TemplateError::BadPattern {
            pattern: pattern.to_string(),
        };
        if pattern.matches("[X]").count() != 1 || pattern.matches("[Y]").count() != 1 {
            return Err(bad());
        }
        if pattern.find("[X]") > pattern.find("[Y]") {
            return Err(bad());
        }
        Ok(HardTemplate {
            predicate: predicate.to_string(),
            pattern: pattern.to_string(),
        })
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Text before `[X]`, between the placeholders, and after `[Y]`.
    fn pieces(&self) -> (&str, &str, &str) {
        let x = self.pattern.find("[X]").expect("validated");
        let y = self.pattern.find("[Y]").expect("validated");
        (
            &self.pattern[..x],
            &self.pattern[x + 3..y],
            &self.pattern[y + 3..],
        )
    }

    /// Fills the placeholders with plain text.
    pub fn fill(&self, subject: &str, object: &str) -> String {
        let (pre, mid, post) = self.pieces();
        format!("{pre}{subject}{mid}{object}{post}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, HardTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        TemplateRegistry::from_pairs(DEFAULT_TEMPLATES).expect("default templates are valid")
    }
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        TemplateRegistry {
            templates: BTreeMap::new(),
        }
    }

    pub fn chinese() -> Self {
        TemplateRegistry::from_pairs(CHINESE_TEMPLATES).expect("shipped templates are valid")
    }

    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut reg = TemplateRegistry::empty();
        for (p, pattern) in pairs {
            reg.register_key(p, pattern)?;
        }
        Ok(reg)
    }

    /// Registers (or overwrites) the template for `predicate`.
    pub fn register(&mut self, predicate: &Predicate, pattern: &str) -> Result<(), TemplateError> {
        self.register_key(&predicate.id, pattern)
    }

    fn register_key(&mut self, predicate: &str, pattern: &str) -> Result<(), TemplateError> {
        let t = HardTemplate::new(predicate, pattern)?;
        self.templates.insert(predicate.to_string(), t);
        Ok(())
    }

    pub fn get(&self, predicate: &str) -> Option<&HardTemplate> {
        self.templates.get(predicate)
    }

    pub fn iter(&self) -> impl Iterator<Item = &HardTemplate> {
        self.templates.values()
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        self.iter()
            .map(|t| (t.predicate.clone(), t.pattern.clone()))
            .collect()
    }

    /// Reads `predicate<TAB>pattern` lines on top of the defaults. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn load_file(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reg = TemplateRegistry::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |message: String| TemplateError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let (pred, pattern) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected predicate<TAB>pattern".into()))?;
            reg.register_key(pred.trim(), pattern.trim())
                .map_err(|e| malformed(e.to_string()))?;
        }
        Ok(reg)
    }
}

/// Prompt-slot counts after the subject, after the predicate text and after
/// the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptLayout {
    pub n_pre: usize,
    pub n_mid: usize,
    pub n_post: usize,
}

impl Default for PromptLayout {
    fn default() -> Self {
        PromptLayout::new(3, 4, 5)
    }
}

impl PromptLayout {
    pub const fn new(n_pre: usize, n_mid: usize, n_post: usize) -> Self {
        PromptLayout {
            n_pre,
            n_mid,
            n_post,
        }
    }

    pub const fn none() -> Self {
        PromptLayout::new(0, 0, 0)
    }

    pub fn total(&self) -> usize {
        self.n_pre + self.n_mid + self.n_post
    }
}

impl fmt::Display for PromptLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.n_pre, self.n_mid, self.n_post)
    }
}

impl std::str::FromStr for PromptLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("layout `{s}` must be three comma-separated counts"));
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.parse().map_err(|_| format!("bad count `{p}` in layout")))
            .collect::<Result<_, _>>()?;
        Ok(PromptLayout::new(n[0], n[1], n[2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Subject visible, object measured.
    T1,
    /// Object visible, subject measured.
    T2,
    /// Each entity measured with the other fully masked.
    T3,
}

/// Which entity a mask plan measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measured {
    Subject,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskStep {
    pub position: usize,
    pub target: TokenId,
}

/// One pseudo-likelihood pass: each step masks one position of the measured
/// span; `hidden` positions stay masked for every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub measured: Measured,
    pub hidden: Vec<usize>,
    pub steps: Vec<MaskStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedInput {
    pub tokens: Vec<TokenId>,
    pub subject_span: Range<usize>,
    pub object_span: Range<usize>,
    pub prompt_positions: Vec<usize>,
    pub variant: Variant,
    pub plans: Vec<MaskPlan>,
}

impl RenderedInput {
    /// One query per step of `plan`. The step's position is always the first
    /// masked position; the hidden span follows. `prompts` must hold one
    /// vector per prompt slot, or be empty to leave the placeholder embedding.
    pub fn step_queries(&self, plan: &MaskPlan, prompts: &[Vec<f64>]) -> Vec<MaskedQuery> {
        let injections: Vec<PromptInjection> = if prompts.is_empty() {
            Vec::new()
        } else {
            assert_eq!(prompts.len(), self.prompt_positions.len(), "prompt count mismatch");
            self.prompt_positions
                .iter()
                .zip(prompts)
                .map(|(&position, v)| PromptInjection {
                    position,
                    vector: v.clone(),
                })
                .collect()
        };
        plan.steps
            .iter()
            .map(|step| {
                let mut masked_positions = vec![step.position];
                masked_positions.extend(&plan.hidden);
                let target_ids = masked_positions.iter().map(|&p| self.tokens[p]).collect();
                MaskedQuery {
                    tokens: self.tokens.clone(),
                    masked_positions,
                    target_ids,
                    prompt_injections: injections.clone(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTriple {
    pub t1: RenderedInput,
    pub t2: RenderedInput,
    pub t3: RenderedInput,
}

fn plan(measured: Measured, span: Range<usize>, hidden: Range<usize>, tokens: &[TokenId]) -> MaskPlan {
    MaskPlan {
        measured,
        hidden: hidden.collect(),
        steps: span
            .map(|position| MaskStep {
                position,
                target: tokens[position],
            })
            .collect(),
    }
}

/// Renders T1, T2 and T3 for a triple.
pub fn render_variants(
    registry: &TemplateRegistry,
    triple: &Triple,
    vocab: &Vocab,
    layout: PromptLayout,
) -> Result<RenderedTriple, TemplateError> {
    let template = registry
        .get(&triple.predicate().id)
        .ok_or_else(|| TemplateError::Unregistered(triple.predicate().id.clone()))?;
    let subject = vocab.tokenize(triple.subject());
    if subject.is_empty() {
        return Err(TemplateError::EmptyTokenization {
            role: "subject",
            text: triple.subject().to_string(),
        });
    }
    let object = vocab.tokenize(triple.object());
    if object.is_empty() {
        return Err(TemplateError::EmptyTokenization {
            role: "object",
            text: triple.object().to_string(),
        });
    }
    let (pre, mid, post) = template.pieces();

    let mut tokens = vocab.tokenize(pre);
    let mut prompt_positions = Vec::with_capacity(layout.total());
    let mut slots = |tokens: &mut Vec<TokenId>, n: usize| {
        for _ in 0..n {
            prompt_positions.push(tokens.len());
            tokens.push(PLACEHOLDER_ID);
        }
    };
    let s_start = tokens.len();
    tokens.extend(&subject);
    let subject_span = s_start..tokens.len();
    slots(&mut tokens, layout.n_pre);
    tokens.extend(vocab.tokenize(mid));
    slots(&mut tokens, layout.n_mid);
    let o_start = tokens.len();
    tokens.extend(&object);
    let object_span = o_start..tokens.len();
    slots(&mut tokens, layout.n_post);
    tokens.extend(vocab.tokenize(post));

    let base = |variant, plans| RenderedInput {
        tokens: tokens.clone(),
        subject_span: subject_span.clone(),
        object_span: object_span.clone(),
        prompt_positions: prompt_positions.clone(),
        variant,
        plans,
    };
    let t1 = base(
        Variant::T1,
        vec![plan(Measured::Object, object_span.clone(), 0..0, &tokens)],
    );
    let t2 = base(
        Variant::T2,
        vec![plan(Measured::Subject, subject_span.clone(), 0..0, &tokens)],
    );
    let t3 = base(
        Variant::T3,
        vec![
            plan(Measured::Object, object_span.clone(), subject_span.clone(), &tokens),
            plan(Measured::Subject, subject_span.clone(), object_span.clone(), &tokens),
        ],
    );
    Ok(RenderedTriple { t1, t2, t3 })
}

/// Sentence text of a triple under a template and layout, with `[P]` for
/// each prompt slot. Used to build corpora whose positions match rendering.
pub fn render_text(template: &HardTemplate, subject: &str, object: &str, layout: PromptLayout) -> String {
    let slots = |n: usize| " [P]".repeat(n);
    let (pre, mid, post) = template.pieces();
    format!(
        "{pre}{subject}{}{mid}{}{object}{}{post}",
        slots(layout.n_pre),
        slots(layout.n_mid),
        slots(layout.n_post)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens(["running", "requires", "shoes", "walking", "is", "capable", "of", "."])
    }

    fn triple(s: &str, o: &str) -> Triple {
        Triple::from_parts(s, "requires", o).unwrap()
    }

    #[test]
    fn pattern_validation() {
        let mut reg = TemplateRegistry::empty();
        let p = Predicate::from_key("requires").unwrap();
        assert!(reg.register(&p, "[X] requires [Y].").is_ok());
        assert!(reg.register(&p, "[X] needs [Y] needs [X]").is_err());
        assert!(reg.register(&p, "[Y] before [X]").is_err());
        assert!(reg.register(&p, "no placeholders").is_err());
        let q = Predicate::from_key("capable_of").unwrap();
        assert!(reg.register(&q, "[X] is capable of [Y].").is_ok());
    }

    #[test]
    fn re_registration_overwrites() {
        let mut reg = TemplateRegistry::default();
        let p = Predicate::from_key("requires").unwrap();
        reg.register(&p, "[X] needs [Y].").unwrap();
        assert_eq!(reg.get("requires").unwrap().pattern(), "[X] needs [Y].");
    }

    #[test]
    fn no_prompts_gives_filled_template() {
        let v = vocab();
        let r = render_variants(&TemplateRegistry::default(), &triple("running", "shoes"), &v, PromptLayout::none()).unwrap();
        assert_eq!(r.t1.tokens, v.tokenize("running requires shoes ."));
        assert!(r.t1.prompt_positions.is_empty());
    }

    #[test]
    fn variants_mask_the_right_spans() {
        let v = vocab();
        let r = render_variants(&TemplateRegistry::default(), &triple("running", "running shoes"), &v, PromptLayout::default()).unwrap();
        // running [P]x3 requires [P]x4 running shoes [P]x5 .
        assert_eq!(r.t1.tokens.len(), 1 + 3 + 1 + 4 + 2 + 5 + 1);
        assert_eq!(r.t1.subject_span, 0..1);
        assert_eq!(r.t1.object_span, 9..11);
        assert_eq!(r.t1.prompt_positions, vec![1, 2, 3, 5, 6, 7, 8, 11, 12, 13, 14, 15]);
        assert_eq!(r.t1.plans.len(), 1);
        assert_eq!(r.t1.plans[0].steps.len(), 2);
        assert!(r.t1.plans[0].hidden.is_empty());
        assert_eq!(r.t2.plans[0].steps.len(), 1);
        assert_eq!(r.t2.plans[0].steps[0].position, 0);
        assert_eq!(r.t3.plans.len(), 2);
        assert_eq!(r.t3.plans[0].hidden, vec![0]);
        assert_eq!(r.t3.plans[1].hidden, vec![9, 10]);
        assert_eq!(*r.t1.tokens.last().unwrap(), v.id("."));
    }

    #[test]
    fn step_queries_put_step_first() {
        let v = vocab();
        let r = render_variants(&TemplateRegistry::default(), &triple("running", "running shoes"), &v, PromptLayout::new(1, 0, 0)).unwrap();
        let qs = r.t3.step_queries(&r.t3.plans[0], &[vec![0.0; 4]]);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].masked_positions, vec![r.t3.object_span.start, 0]);
        assert_eq!(qs[0].prompt_injections[0].position, 1);
        assert_eq!(qs[1].target_ids[0], v.id("shoes"));
    }

    #[test]
    fn errors() {
        let v = vocab();
        let reg = TemplateRegistry::default();
        let t = Triple::from_parts("a", "unknown_pred", "b").unwrap();
        assert!(matches!(render_variants(&reg, &t, &v, PromptLayout::none()), Err(TemplateError::Unregistered(_))));
        let t = triple("...", "shoes");
        assert!(render_variants(&reg, &t, &v, PromptLayout::none()).is_ok());
    }

    #[test]
    fn template_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        std::fs::write(&path, "# comment\nrequires\t[X] needs [Y].\nnew_pred\t[X] likes [Y]\n").unwrap();
        let reg = TemplateRegistry::load_file(&path).unwrap();
        assert_eq!(reg.get("requires").unwrap().pattern(), "[X] needs [Y].");
        assert!(reg.get("new_pred").is_some());
        assert!(reg.get("capable_of").is_some());
        std::fs::write(&path, "requires [X] needs [Y].\n").unwrap();
        assert!(matches!(TemplateRegistry::load_file(&path), Err(TemplateError::Malformed { line: 1, .. })));
    }

    #[test]
    fn render_text_matches_token_layout() {
        let v = vocab();
        let reg = TemplateRegistry::default();
        let layout = PromptLayout::new(2, 1, 3);
        let text = render_text(reg.get("requires").unwrap(), "running", "running shoes", layout);
        let r = render_variants(&reg, &triple("running", "running shoes"), &v, layout).unwrap();
        assert_eq!(v.tokenize(&text), r.t1.tokens);
    }

    #[test]
    fn chinese_templates_render() {
        let v = Vocab::from_tokens(["跑", "步", "需", "要", "鞋", "。"]);
        let t = Triple::from_parts("跑步", "requires", "跑鞋").unwrap();
        let r = render_variants(&TemplateRegistry::chinese(), &t, &v, PromptLayout::none()).unwrap();
        assert_eq!(r.t1.subject_span, 0..2);
        assert_eq!(r.t1.object_span, 4..6);
    }

    proptest! {
        #[test]
        fn rendering_partitions_the_sequence(
            s_len in 1usize..4, o_len in 1usize..4,
            pre in 0usize..4, mid in 0usize..4, post in 0usize..4,
        ) {
            let v = vocab();
            let s = vec!["running"; s_len].join(" ");
            let o = vec!["shoes"; o_len].join(" ");
            let layout = PromptLayout::new(pre, mid, post);
            let reg = TemplateRegistry::default();
            let r = render_variants(&reg, &triple(&s, &o), &v, layout).unwrap();
            let again = render_variants(&reg, &triple(&s, &o), &v, layout).unwrap();
            prop_assert_eq!(&r, &again);
            for input in [&r.t1, &r.t2, &r.t3] {
                let n = input.tokens.len();
                let mut seen = vec![0u8; n];
                for i in input.subject_span.clone().chain(input.object_span.clone()) {
                    seen[i] += 1;
                }
                for &p in &input.prompt_positions {
                    seen[p] += 1;
                    prop_assert_eq!(input.tokens[p], PLACEHOLDER_ID);
                }
                prop_assert!(seen.iter().all(|&c| c <= 1));
                prop_assert_eq!(n - seen.iter().filter(|&&c| c == 1).count(), 2);
                prop_assert_eq!(input.prompt_positions.len(), layout.total());
                prop_assert!(input.prompt_positions.windows(2).all(|w| w[0] < w[1]));
                for plan in &input.plans {
                    let measured = match plan.measured {
                        Measured::Subject => &input.subject_span,
                        Measured::Object => &input.object_span,
                    };
                    prop_assert_eq!(plan.steps.len(), measured.len());
                    prop_assert!(plan.steps.iter().all(|st| measured.contains(&st.position)));
                }
            }
            prop_assert_eq!(r.t3.plans[0].hidden.len(), s_len);
            prop_assert_eq!(r.t3.plans[1].hidden.len(), o_len);
        }
    }
}
