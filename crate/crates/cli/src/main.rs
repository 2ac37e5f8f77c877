mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use salience::datatools::{Ratios, Strictness};
use salience::eval::ThresholdMethod;
use salience::scoring::{Denominator, ScoreMode};
use salience::templates::PromptLayout;
use salience::training::LossMode;

use config::BackendChoice;

#[derive(Parser, Debug)]
#[command(name = "salience", version, about = "Salience scoring of commonsense triples")]
pub struct Cli {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports and artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TOML config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// uniform, reference or remote:<address>.
    #[arg(long, global = true, env = "SALIENCE_BACKEND", default_value = "uniform")]
    pub backend: BackendChoice,
    /// Saved reference model (written by `pretrain`).
    #[arg(long, global = true)]
    pub backend_model: Option<PathBuf>,
    /// `predicate<TAB>pattern` lines overriding the default templates.
    #[arg(long, global = true)]
    pub template_file: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Partition a dataset into train/dev/test.
    Split(SplitArgs),
    /// Rank lexical cues by applicability and coverage.
    AuditCues(AuditArgs),
    /// Propose label-flipping edits of cue-bearing records, or merge confirmed ones.
    Adversarial(AdversarialArgs),
    /// Train the reference masked language model on a corpus.
    Pretrain(PretrainArgs),
    /// Generate a synthetic world, its corpus and labeled splits.
    Synth(SynthArgs),
    /// Train prompts and the salience weight.
    Train(TrainArgs),
    /// Score triples, with a trained model or unsupervised.
    Score(ScoreArgs),
    /// Classification metrics on a labeled dataset.
    Eval(EvalArgs),
    /// Choose a decision threshold on a labeled dataset.
    Threshold(ThresholdArgs),
    /// Pairwise-preference precision.
    Ppref(PprefArgs),
    /// Agreement, regression and rank-correlation analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Train at increasing fractions of the training set.
    SweepFraction(SweepArgs),
    /// Serve the selected backend over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Prompt-slot counts `pre,mid,post`.
    #[arg(long)]
    pub layout: Option<PromptLayout>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub early_stopping: Option<bool>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub threshold_method: Option<ThresholdMethod>,
}

#[derive(Args, Debug, Default)]
pub struct ScoreFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub score_mode: Option<ScoreMode>,
    #[arg(long)]
    pub denominator: Option<Denominator>,
    #[arg(long)]
    pub clamp_epsilon: Option<f64>,
    /// Fixed λ instead of the learned one.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "unlabeled")]
    pub schema: salience::data::Schema,
    #[arg(long, value_parser = ["random", "concept"], default_value = "random")]
    pub mode: String,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: Ratios,
    #[arg(long, default_value = "subject")]
    pub strictness: Strictness,
}

#[derive(Args, Debug)]
pub struct CueFlags {
    #[arg(long, default_value_t = 1)]
    pub min_n: usize,
    #[arg(long, default_value_t = 2)]
    pub max_n: usize,
    #[arg(long)]
    pub include_predicate: bool,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "simplified")]
    pub schema: salience::data::Schema,
    #[command(flatten)]
    pub cues: CueFlags,
    /// Cues listed in the metrics report.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
}

#[derive(Args, Debug)]
pub struct AdversarialArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "simplified")]
    pub schema: salience::data::Schema,
    /// Replacement values, one per line.
    #[arg(long, required_unless_present = "merge")]
    pub pool: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub top_percent: f64,
    #[command(flatten)]
    pub cues: CueFlags,
    /// Candidate file whose confirmed entries are appended to the input.
    #[arg(long)]
    pub merge: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// One whitespace-tokenized sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mlm_learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub triples: Option<usize>,
    #[arg(long)]
    pub corpus_sentences: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[command(flatten)]
    pub train_flags: TrainFlags,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Trained model directory; omitted means unsupervised scoring.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labels each score; defaults to the model threshold.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "scores")]
    pub model: Option<PathBuf>,
    /// Score file from `score`, aligned with the input.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Overrides the model threshold (default 0.5 without a model).
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "scores")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value = "sweep")]
    pub method: ThresholdMethod,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct PprefArgs {
    /// `{better, worse, dimension}` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Least squares of salience on sufficiency and necessity.
    Regression {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fleiss' kappa per label dimension from per-annotator labels.
    Kappa {
        #[arg(long)]
        input: PathBuf,
    },
    /// Spearman correlation of `{"x": .., "y": ..}` lines.
    Spearman {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub train_flags: TrainFlags,
    #[command(flatten)]
    pub score_flags: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = commands::category(&e);
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(commands::exit_code(category))
        }
    }
}
