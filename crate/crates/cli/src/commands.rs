use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use salience::backend::{BackendError, BackendServer, MaskedLm, ReferenceConfig, ReferenceMlm};
use salience::data::{load_dataset, write_dataset, DataError, Dataset, Schema, Split, Triple};
use salience::datatools::{
    adversarial_candidates, agreement_report, cue_audit, load_candidates, merge_confirmed, regression_fit,
    spearman_rho, split_concept, split_random, write_candidates, CueOptions, DataToolError,
};
use salience::eval::{
    classification_metrics, f1_at, load_pairs, ppref_precision, select_threshold, EvalError, TripleFields,
};
use salience::prompt::PromptError;
use salience::scoring::{score_batch, LambdaSource, ScoreConfig, ScoreTriple, ScoringError};
use salience::synthetic::{generate, SyntheticError};
use salience::templates::{TemplateError, TemplateRegistry};
use salience::training::{train, ModelArtifact, TrainConfig, TrainingError};
use serde::{Deserialize, Serialize};

use crate::config::{open_backend, registry, FileConfig};
use crate::run::{Row, Run};
use crate::{AnalyzeCommand, Cli, Command, CueFlags, ScoreFlags, TrainFlags};

/// A configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(e) = cause.downcast_ref::<salience::Error>() {
            return e.category();
        }
        macro_rules! tag {
            ($($ty:ty => $name:literal),* $(,)?) => {
                $(if cause.is::<$ty>() { return $name; })*
            };
        }
        tag!(
            ConfigError => "config",
            DataError => "data",
            TemplateError => "template",
            BackendError => "backend",
            ScoringError => "scoring",
            PromptError => "prompt",
            TrainingError => "training",
            EvalError => "eval",
            DataToolError => "datatools",
            SyntheticError => "synthetic",
            toml::de::Error => "config",
            serde_json::Error => "data",
            std::io::Error => "io",
        );
    }
    "internal"
}

pub fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 3,
        "io" => 4,
        "data" => 5,
        "template" => 6,
        "backend" => 7,
        "scoring" | "prompt" => 8,
        "training" => 9,
        "eval" => 10,
        "datatools" => 11,
        "synthetic" => 12,
        _ => 1,
    }
}

struct Ctx {
    cli: Cli,
    file: FileConfig,
    seed: u64,
}

impl Ctx {
    fn backend(&self, run: &mut Run) -> Result<Arc<dyn MaskedLm>> {
        if let Some(path) = self.cli.backend_model.as_deref() {
            run.input(path)?;
        }
        let backend = open_backend(&self.cli.backend, &self.file.backend, self.cli.backend_model.as_deref())?;
        run.set_backend(backend.fingerprint());
        Ok(backend)
    }

    fn registry(&self) -> Result<TemplateRegistry> {
        registry(self.cli.template_file.as_deref())
    }

    fn start(&self, name: &str) -> Result<Run> {
        Run::start(&self.cli.out, name, self.seed)
    }

    fn load(&self, run: &mut Run, path: &Path, schema: Schema) -> Result<Dataset> {
        run.input(path)?;
        Ok(load_dataset(path, schema)?)
    }

    /// Training configuration after applying file values, then flags.
    fn train_config(&self, flags: &TrainFlags, score: &ScoreFlags) -> Result<(TrainConfig, Vec<String>)> {
        let mut c = self.file.train.clone();
        let mut set = Vec::new();
        c.seed = self.seed;
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = flags.$field.clone() {
                    c.$field = v;
                    set.push(stringify!($field).replace('_', "-"));
                })*
            };
        }
        apply!(loss_mode, learning_rate, batch_size, gamma, lambda_init, epochs, train_fraction, layout, early_stopping, patience, threshold_method);
        if let Some(h) = flags.hidden_size {
            c.hidden_size = Some(h);
            set.push("hidden-size".into());
        }
        set.extend(apply_score_flags(&mut c.score_config, score));
        c.validate()?;
        Ok((c, set))
    }
}

fn apply_score_flags(c: &mut ScoreConfig, flags: &ScoreFlags) -> Vec<String> {
    let mut set = Vec::new();
    if let Some(v) = flags.alpha {
        c.alpha = v;
        set.push("alpha".into());
    }
    if let Some(v) = flags.score_mode {
        c.mode = v;
        set.push("score-mode".into());
    }
    if let Some(v) = flags.denominator {
        c.denominator = v;
        set.push("denominator".into());
    }
    if let Some(v) = flags.clamp_epsilon {
        c.clamp_epsilon = v;
        set.push("clamp-epsilon".into());
    }
    if let Some(v) = flags.lambda {
        c.lambda_source = LambdaSource::Fixed(v);
        set.push("lambda".into());
    }
    set
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(file.train.seed);
    let ctx = Ctx { cli, file, seed };
    match &ctx.cli.command {
        Command::Split(a) => split(&ctx, a),
        Command::AuditCues(a) => audit_cues(&ctx, a),
        Command::Adversarial(a) => adversarial(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Threshold(a) => threshold(&ctx, a),
        Command::Ppref(a) => ppref(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::SweepFraction(a) => sweep_fraction(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

fn split(ctx: &Ctx, a: &crate::SplitArgs) -> Result<()> {
    let mut run = ctx.start("split")?;
    let data = ctx.load(&mut run, &a.input, a.schema)?;
    run.set_config(
        serde_json::json!({"mode": a.mode, "ratios": a.ratios, "strictness": a.strictness, "schema": a.schema}),
        None,
        Vec::new(),
    );
    let (assignment, groups, warnings) = if a.mode == "concept" {
        let s = split_concept(&data, a.ratios, ctx.seed, a.strictness)?;
        (s.assignment, Some(s.groups), s.warnings.len())
    } else {
        (split_random(&data, a.ratios, ctx.seed)?, None, 0)
    };
    let mut lines = String::new();
    for (i, s) in assignment.as_slice().iter().enumerate() {
        lines.push_str(&serde_json::json!({"index": i, "split": s}).to_string());
        lines.push('\n');
    }
    run.write("assignment.jsonl", &lines)?;
    for split in Split::ALL {
        let name = format!("{}.jsonl", split.name());
        let subset = data.subset(format!("{}-{}", data.name, split.name()), &assignment.indices(split));
        write_dataset(&subset, &run.path(&name))?;
        run.output(&name);
    }
    let [train, dev, test] = assignment.sizes();
    let mut row = Row::new()
        .with("mode", &a.mode)
        .with("records", data.len())
        .with("train", train)
        .with("dev", dev)
        .with("test", test);
    if let Some(g) = groups {
        row = row.with("groups", g).with("warnings", warnings);
    }
    run.metrics(&[row])?;
    run.finish()
}

fn cue_options(f: &CueFlags) -> CueOptions {
    CueOptions {
        min_n: f.min_n,
        max_n: f.max_n,
        include_predicate: f.include_predicate,
    }
}

fn audit_cues(ctx: &Ctx, a: &crate::AuditArgs) -> Result<()> {
    let mut run = ctx.start("audit-cues")?;
    let data = ctx.load(&mut run, &a.input, a.schema)?;
    let options = cue_options(&a.cues);
    run.set_config(&options, None, Vec::new());
    let report = cue_audit(&data, &options)?;
    let mut lines = String::new();
    for e in &report.entries {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    run.write("cues.jsonl", &lines)?;
    let rows: Vec<Row> = report
        .entries
        .iter()
        .take(a.top.max(1))
        .enumerate()
        .map(|(rank, e)| {
            Row::new()
                .with("rank", rank + 1)
                .with("cue", &e.cue)
                .with("applicability", e.applicability)
                .with("coverage", e.coverage)
                .with("label_0", e.label_counts[0])
                .with("label_1", e.label_counts[1])
        })
        .collect();
    if rows.is_empty() {
        run.metrics(&[Row::new().with("instances", report.instances).with("cues", 0)])?;
    } else {
        run.metrics(&rows)?;
    }
    run.finish()
}

fn adversarial(ctx: &Ctx, a: &crate::AdversarialArgs) -> Result<()> {
    let mut run = ctx.start("adversarial")?;
    let data = ctx.load(&mut run, &a.input, a.schema)?;
    let options = cue_options(&a.cues);
    run.set_config(
        serde_json::json!({"cues": options, "top_percent": a.top_percent}),
        None,
        Vec::new(),
    );
    if let Some(path) = &a.merge {
        run.input(path)?;
        let candidates = load_candidates(path)?;
        let merged = merge_confirmed(&data, &candidates)?;
        write_dataset(&merged, &run.path("merged.jsonl"))?;
        run.output("merged.jsonl");
        run.metrics(&[Row::new()
            .with("records", data.len())
            .with("added", merged.len() - data.len())
            .with("merged", merged.len())])?;
        return run.finish();
    }
    let pool_path = a.pool.as_ref().ok_or_else(|| ConfigError("--pool is required".into()))?;
    run.input(pool_path)?;
    let pool: Vec<String> = std::fs::read_to_string(pool_path)
        .with_context(|| format!("reading {}", pool_path.display()))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let report = cue_audit(&data, &options)?;
    let candidates = adversarial_candidates(&data, &report, &options, a.top_percent, &pool, ctx.seed)?;
    write_candidates(&candidates, &run.path("candidates.jsonl"))?;
    run.output("candidates.jsonl");
    run.metrics(&[Row::new()
        .with("records", data.len())
        .with("cues", report.entries.len())
        .with("candidates", candidates.len())])?;
    run.finish()
}

fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}

fn pretrain(ctx: &Ctx, a: &crate::PretrainArgs) -> Result<()> {
    let mut run = ctx.start("pretrain")?;
    run.input(&a.corpus)?;
    let corpus = read_corpus(&a.corpus)?;
    let mut config = ctx.file.reference.clone().unwrap_or_default();
    config.seed = ctx.seed;
    let mut set = Vec::new();
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag {
                config.$field = v;
                set.push(stringify!($flag).replace('_', "-"));
            })*
        };
    }
    apply!(embedding_dim => embedding_dim, layers => layers, heads => heads, steps => steps, mlm_learning_rate => learning_rate);
    if a.embedding_dim.is_some() && a.heads.is_none() && config.embedding_dim % config.heads != 0 {
        config.heads = ReferenceConfig::new(0, config.embedding_dim, 1, 0).heads;
    }
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let mlm = ReferenceMlm::train(&corpus, config)?;
    run.write("backend.json", &mlm.to_json())?;
    run.metrics(&[Row::new()
        .with("sentences", corpus.len())
        .with("vocab_size", mlm.info().vocab_size)
        .with("final_loss", mlm.final_training_loss())
        .with("fingerprint", mlm.fingerprint())])?;
    run.finish()
}

fn synth(ctx: &Ctx, a: &crate::SynthArgs) -> Result<()> {
    let mut run = ctx.start("synth")?;
    let mut config = ctx.file.synthetic.clone();
    config.seed = ctx.seed;
    let mut set = Vec::new();
    if let Some(v) = a.subjects {
        config.subjects = v;
        config.objects = v;
        set.push("subjects".into());
    }
    if let Some(v) = a.triples {
        config.triples = v;
        set.push("triples".into());
    }
    if let Some(v) = a.corpus_sentences {
        config.corpus_sentences = v;
        set.push("corpus-sentences".into());
    }
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let data = generate(&config)?;
    let corpus: String = data.corpus.iter().map(|s| s.join(" ") + "\n").collect();
    run.write("corpus.txt", &corpus)?;
    for (name, d) in [("train.jsonl", &data.train), ("dev.jsonl", &data.dev), ("test.jsonl", &data.test)] {
        write_dataset(d, &run.path(name))?;
        run.output(name);
    }
    run.metrics(&[Row::new()
        .with("corpus_sentences", data.corpus.len())
        .with("train", data.train.len())
        .with("dev", data.dev.len())
        .with("test", data.test.len())
        .with("median_npmi", data.median_npmi)])?;
    run.finish()
}

fn train_cmd(ctx: &Ctx, a: &crate::TrainArgs) -> Result<()> {
    let mut run = ctx.start("train")?;
    let (config, set) = ctx.train_config(&a.train_flags, &a.score_flags)?;
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let schema = match config.loss_mode {
        salience::training::LossMode::Simplified => Schema::Simplified,
        salience::training::LossMode::Original => Schema::Original,
    };
    let train_set = ctx.load(&mut run, &a.train, schema)?;
    let dev_set = ctx.load(&mut run, &a.dev, Schema::Simplified)?;
    let backend = ctx.backend(&mut run)?;
    let registry = ctx.registry()?;
    let model = train(&config, &train_set, &dev_set, backend.as_ref(), &registry)?;
    model.save(&run.path("model"))?;
    for name in ["model/manifest.json", "model/params.txt"] {
        run.output(name);
    }
    let rows: Vec<Row> = model
        .log
        .iter()
        .map(|e| {
            Row::new()
                .with("epoch", e.epoch)
                .with("train_loss", e.train_loss)
                .with("dev_auc", e.dev_auc)
                .with("dev_f1", e.dev_f1)
                .with("lambda", e.lambda)
        })
        .collect();
    if rows.is_empty() {
        run.metrics(&[Row::new().with("epochs", 0).with("threshold", model.threshold)])?;
    } else {
        run.metrics(&rows)?;
    }
    run.finish()
}

/// Loads the model (if any) and the score configuration it implies.
fn model_and_config(ctx: &Ctx, run: &mut Run, model: Option<&PathBuf>, flags: &ScoreFlags) -> Result<(Option<ModelArtifact>, ScoreConfig, Vec<String>)> {
    let model = match model {
        Some(dir) => {
            for f in ["manifest.json", "params.txt"] {
                run.input(&dir.join(f))?;
            }
            Some(ModelArtifact::load(dir)?)
        }
        None => None,
    };
    let mut config = model
        .as_ref()
        .map_or_else(|| ctx.file.train.score_config.clone(), |m| m.config.score_config.clone());
    let set = apply_score_flags(&mut config, flags);
    config.validate()?;
    Ok((model, config, set))
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    #[serde(flatten)]
    triple: TripleFields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    necessity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sufficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    salience: Option<f64>,
    /// Salience above the decision threshold, when one is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn compute_scores(ctx: &Ctx, run: &mut Run, model: Option<&ModelArtifact>, config: &ScoreConfig, triples: &[Triple]) -> Result<(Vec<Option<ScoreTriple>>, Vec<(usize, String)>)> {
    let backend = ctx.backend(run)?;
    let registry = match (model, &ctx.cli.template_file) {
        (Some(m), None) => m.registry()?,
        _ => ctx.registry()?,
    };
    let batch = score_batch(backend.as_ref(), &registry, triples, model, config)?;
    let failures = batch.failures.into_iter().map(|f| (f.index, f.message)).collect();
    Ok((batch.scores, failures))
}

fn score(ctx: &Ctx, a: &crate::ScoreArgs) -> Result<()> {
    let mut run = ctx.start("score")?;
    let data = ctx.load(&mut run, &a.input, Schema::Unlabeled)?;
    let (model, config, set) = model_and_config(ctx, &mut run, a.model.as_ref(), &a.score_flags)?;
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let triples = data.triples();
    let (scores, failures) = compute_scores(ctx, &mut run, model.as_ref(), &config, &triples)?;
    let errors: HashMap<usize, String> = failures.into_iter().collect();
    let threshold = a.threshold.or(model.as_ref().map(|m| m.threshold));
    let mut lines = String::new();
    for (i, (t, s)) in triples.iter().zip(&scores).enumerate() {
        let line = ScoreLine {
            triple: TripleFields::from_triple(t),
            necessity: s.map(|s| s.necessity),
            sufficiency: s.map(|s| s.sufficiency),
            salience: s.map(|s| s.salience),
            label: s.zip(threshold).map(|(s, t)| u8::from(s.salience >= t)),
            error: errors.get(&i).cloned(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    run.write("scores.jsonl", &lines)?;
    run.metrics(&[Row::new()
        .with("triples", triples.len())
        .with("scored", scores.iter().flatten().count())
        .with("failed", errors.len())
        .with("supervised", model.is_some())])?;
    run.finish()
}

fn read_scores(path: &Path, data: &Dataset) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != data.len() {
        bail!(ConfigError(format!(
            "{} has {} scores but the dataset has {} records",
            path.display(),
            lines.len(),
            data.len()
        )));
    }
    lines
        .iter()
        .zip(&data.records)
        .enumerate()
        .map(|(i, (line, record))| {
            let s: ScoreLine = serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            if s.triple.to_triple()? != record.triple {
                bail!(ConfigError(format!("{}:{}: triple does not match dataset record", path.display(), i + 1)));
            }
            s.salience
                .ok_or_else(|| anyhow!(ConfigError(format!("{}:{}: triple was not scored", path.display(), i + 1))))
        })
        .collect()
}

/// Salience scores for a labeled dataset, from a score file or by scoring.
fn labeled_scores(
    ctx: &Ctx,
    run: &mut Run,
    input: &Path,
    model: Option<&PathBuf>,
    scores: Option<&PathBuf>,
    flags: &ScoreFlags,
) -> Result<(Vec<f64>, Vec<u8>, Option<ModelArtifact>)> {
    let data = ctx.load(run, input, Schema::Simplified)?;
    let labels = data.salient_labels().expect("simplified schema is labeled");
    if let Some(path) = scores {
        run.input(path)?;
        run.set_config(serde_json::json!({"scores": path.display().to_string()}), None, Vec::new());
        return Ok((read_scores(path, &data)?, labels, None));
    }
    let (model, config, set) = model_and_config(ctx, run, model, flags)?;
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let (scores, failures) = compute_scores(ctx, run, model.as_ref(), &config, &data.triples())?;
    if let Some((i, message)) = failures.first() {
        bail!(ScoringError::Degenerate(format!("record {}: {message}", i + 1)));
    }
    Ok((scores.into_iter().map(|s| s.expect("no failures").salience).collect(), labels, model))
}

fn eval(ctx: &Ctx, a: &crate::EvalArgs) -> Result<()> {
    let mut run = ctx.start("eval")?;
    let (scores, labels, model) =
        labeled_scores(ctx, &mut run, &a.input, a.model.as_ref(), a.scores.as_ref(), &a.score_flags)?;
    let threshold = a.threshold.or(model.as_ref().map(|m| m.threshold)).unwrap_or(0.5);
    let r = classification_metrics(&scores, &labels, threshold)?;
    run.metrics(&[Row::new()
        .with("n", scores.len())
        .with("f1", r.f1)
        .with("accuracy", r.accuracy)
        .with("auc", r.auc)
        .with("threshold", r.threshold)
        .with("tp", r.counts.tp)
        .with("fp", r.counts.fp)
        .with("tn", r.counts.tn)
        .with("fn", r.counts.fn_)])?;
    run.finish()
}

fn threshold(ctx: &Ctx, a: &crate::ThresholdArgs) -> Result<()> {
    let mut run = ctx.start("threshold")?;
    let (scores, labels, _) =
        labeled_scores(ctx, &mut run, &a.input, a.model.as_ref(), a.scores.as_ref(), &a.score_flags)?;
    let t = select_threshold(&scores, &labels, a.method)?;
    run.metrics(&[Row::new()
        .with("method", a.method)
        .with("threshold", t)
        .with("f1", f1_at(&scores, &labels, t))])?;
    run.finish()
}

fn ppref(ctx: &Ctx, a: &crate::PprefArgs) -> Result<()> {
    let mut run = ctx.start("ppref")?;
    run.input(&a.pairs)?;
    let pairs = load_pairs(&a.pairs)?;
    let (model, config, set) = model_and_config(ctx, &mut run, a.model.as_ref(), &a.score_flags)?;
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let mut triples: Vec<Triple> = Vec::new();
    for p in &pairs {
        for t in [&p.better, &p.worse] {
            if !triples.contains(t) {
                triples.push(t.clone());
            }
        }
    }
    let (scores, _) = compute_scores(ctx, &mut run, model.as_ref(), &config, &triples)?;
    let table: HashMap<Triple, ScoreTriple> = triples
        .into_iter()
        .zip(scores)
        .filter_map(|(t, s)| s.map(|s| (t, s)))
        .collect();
    let r = ppref_precision(&table, &pairs);
    run.metrics(&[Row::new()
        .with("pairs", pairs.len())
        .with("precision", r.precision)
        .with("correct", r.correct)
        .with("evaluated", r.evaluated)
        .with("excluded", r.excluded.len())])?;
    run.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct XyLine {
    x: f64,
    y: f64,
}

fn analyze(ctx: &Ctx, a: &AnalyzeCommand) -> Result<()> {
    match a {
        AnalyzeCommand::Regression { input } => {
            let mut run = ctx.start("analyze regression")?;
            let data = ctx.load(&mut run, input, Schema::Original)?;
            let r = regression_fit(&data)?;
            let row = Row::new()
                .with("n", r.n)
                .with("sufficiency", r.coefficients[0])
                .with("necessity", r.coefficients[1])
                .with("intercept", r.coefficients[2])
                .with("sufficiency_p", r.t_p_values[0])
                .with("necessity_p", r.t_p_values[1])
                .with("r_squared", r.r_squared)
                .with("f_statistic", r.f_statistic)
                .with("f_p_value", r.f_p_value);
            run.write(
                "regression.json",
                &(serde_json::to_string_pretty(&r)? + "\n"),
            )?;
            run.metrics(&[row])?;
            run.finish()
        }
        AnalyzeCommand::Kappa { input } => {
            let mut run = ctx.start("analyze kappa")?;
            let data = ctx.load(&mut run, input, Schema::Unlabeled)?;
            let r = agreement_report(&data)?;
            let rows: Vec<Row> = [("sufficiency", &r.sufficiency), ("necessity", &r.necessity), ("salient", &r.salient)]
                .into_iter()
                .map(|(name, d)| {
                    Row::new()
                        .with("dimension", name)
                        .with("kappa", d.kappa)
                        .with("items", r.items)
                        .with("raters", r.raters)
                })
                .collect();
            run.metrics(&rows)?;
            run.finish()
        }
        AnalyzeCommand::Spearman { input } => {
            let mut run = ctx.start("analyze spearman")?;
            run.input(input)?;
            let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: XyLine = serde_json::from_str(line).with_context(|| format!("{}:{}", input.display(), i + 1))?;
                x.push(v.x);
                y.push(v.y);
            }
            let rho = spearman_rho(&x, &y)?;
            run.metrics(&[Row::new().with("n", x.len()).with("spearman_rho", rho)])?;
            run.finish()
        }
    }
}

pub const SWEEP_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

fn sweep_fraction(ctx: &Ctx, a: &crate::SweepArgs) -> Result<()> {
    let mut run = ctx.start("sweep-fraction")?;
    let (config, set) = ctx.train_config(&a.train_flags, &a.score_flags)?;
    run.set_config(&config, ctx.cli.config.as_deref(), set);
    let schema = match config.loss_mode {
        salience::training::LossMode::Simplified => Schema::Simplified,
        salience::training::LossMode::Original => Schema::Original,
    };
    let train_set = ctx.load(&mut run, &a.train, schema)?;
    let dev_set = ctx.load(&mut run, &a.dev, Schema::Simplified)?;
    let test_set = ctx.load(&mut run, &a.test, Schema::Simplified)?;
    let labels = test_set.salient_labels().expect("simplified schema is labeled");
    let backend = ctx.backend(&mut run)?;
    let registry = ctx.registry()?;
    let mut rows = Vec::new();
    for fraction in SWEEP_FRACTIONS {
        let c = TrainConfig {
            train_fraction: fraction,
            ..config.clone()
        };
        let model = train(&c, &train_set, &dev_set, backend.as_ref(), &registry)?;
        let batch = score_batch(backend.as_ref(), &registry, &test_set.triples(), Some(&model), &c.score_config)?;
        if let Some(f) = batch.failures.first() {
            bail!(ScoringError::Degenerate(format!("test record {}: {}", f.index + 1, f.message)));
        }
        let scores: Vec<f64> = batch.scores.iter().map(|s| s.expect("no failures").salience).collect();
        let r = classification_metrics(&scores, &labels, model.threshold)?;
        rows.push(
            Row::new()
                .with("fraction", fraction)
                .with("train_records", salience::training::training_subset(train_set.len(), fraction, c.seed).len())
                .with("f1", r.f1)
                .with("accuracy", r.accuracy)
                .with("auc", r.auc),
        );
    }
    run.metrics(&rows)?;
    run.finish()
}

fn serve(ctx: &Ctx, a: &crate::ServeArgs) -> Result<()> {
    if matches!(ctx.cli.backend, crate::config::BackendChoice::Remote(_)) {
        bail!(ConfigError("serve needs a local backend".into()));
    }
    let mut run = ctx.start("serve")?;
    let backend = ctx.backend(&mut run)?;
    let server = BackendServer::start(backend.clone(), &a.addr)?;
    run.set_config(
        serde_json::json!({"addr": server.addr(), "backend": backend.fingerprint()}),
        None,
        Vec::new(),
    );
    run.finish()?;
    println!("serving {} on {}", backend.fingerprint(), server.addr());
    server.wait();
    Ok(())
}
