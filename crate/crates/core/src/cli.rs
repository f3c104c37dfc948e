//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation or domain error, 2 I/O error.
//! Relative input paths that do not exist are looked up under
//! `$PREFETCH_SIM_DATA_DIR` when it is set.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::confidence::{self, ConfidenceModel, TrainConfig};
use crate::corpus::{Corpus, CorpusError, NormalizationPolicy};
use crate::manifest::RunManifest;
use crate::metrics::{self, MetricsReport, ReportFormat};
use crate::predict::{self, PredictError, PredictorConfig, PredictorKind};
use crate::similarity::{self, LabelKind, LabelRow, Scorer, ScorerConfig, ScorerKind, SimilarityError};
use crate::simulator::{self, ConfidenceSource, GateConfig, SuccessCriterion};
use crate::synth::{self, SynthConfig};

pub const DATA_DIR_ENV: &str = "PREFETCH_SIM_DATA_DIR";

#[derive(Debug)]
pub enum CliError {
    Domain(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Domain(e.to_string())
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

fn domain<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Domain(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "prefetch-sim", version, about = "Confidence-gated response prefetching simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus file and report every invalid line.
    Validate(ValidateArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Generate literal and thresholded similarity labels for every decision step.
    GenLabels(GenLabelsArgs),
    /// Train a confidence model on one label kind.
    Train(TrainArgs),
    /// Replay a corpus through the prefetch gate and report metrics.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyPreset {
    None,
    Casefold,
    Spoken,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Normalization preset, or use --policy-file for a JSON policy.
    #[arg(long, value_enum, default_value = "none")]
    pub policy: PolicyPreset,
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    #[arg(long, default_value = "und")]
    pub language: String,
}

impl CorpusArgs {
    fn policy(&self) -> Result<NormalizationPolicy, CliError> {
        if let Some(path) = &self.policy_file {
            let path = resolve_input(path);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            return serde_json::from_str(&text)
                .map_err(|e| domain(format!("{}: {e}", path.display())));
        }
        Ok(match self.policy {
            PolicyPreset::None => NormalizationPolicy::none(),
            PolicyPreset::Casefold => NormalizationPolicy::case_fold_only(),
            PolicyPreset::Spoken => NormalizationPolicy::spoken(),
        })
    }

    fn load(&self) -> Result<(Corpus, PathBuf), CliError> {
        let path = resolve_input(&self.corpus);
        let corpus = crate::corpus::load_corpus(&path, self.policy()?)?.with_language(&self.language);
        Ok((corpus, path))
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![resolve_input(&self.corpus)];
        v.extend(self.policy_file.as_deref().map(resolve_input));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorChoice {
    Oracle,
    Noisy,
    PrefixEcho,
    File,
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    #[arg(long, value_enum, default_value = "noisy")]
    pub predictor: PredictorChoice,
    #[arg(long, default_value_t = 0.3)]
    pub truncate_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    pub swap_prob: f64,
    /// Predictions JSONL for `--predictor file`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PredictorArgs {
    fn config(&self) -> PredictorConfig {
        let kind = match self.predictor {
            PredictorChoice::Oracle => PredictorKind::Oracle,
            PredictorChoice::Noisy => PredictorKind::NoisyOracle,
            PredictorChoice::PrefixEcho => PredictorKind::PrefixEcho,
            PredictorChoice::File => PredictorKind::FileBacked,
        };
        PredictorConfig {
            kind,
            noise_truncate_prob: self.truncate_prob,
            noise_swap_prob: self.swap_prob,
            seed: self.seed,
            predictions_path: self.predictions.as_deref().map(resolve_input),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerChoice {
    Exact,
    TokenCosine,
    CharNgram,
    Embedding,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value = "token-cosine")]
    pub scorer: ScorerChoice,
    #[arg(long, default_value_t = 3)]
    pub ngram: usize,
    /// Embedding JSONL for `--scorer embedding`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

impl ScorerArgs {
    fn config(&self) -> ScorerConfig {
        let kind = match self.scorer {
            ScorerChoice::Exact => ScorerKind::Exact,
            ScorerChoice::TokenCosine => ScorerKind::TokenCosine,
            ScorerChoice::CharNgram => ScorerKind::CharNgramCosine,
            ScorerChoice::Embedding => ScorerKind::EmbeddingFile,
        };
        ScorerConfig {
            kind,
            ngram_order: self.ngram,
            embedding_path: self.embeddings.as_deref().map(resolve_input),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attach word timestamps.
    #[arg(long)]
    pub timed: bool,
    #[arg(long, default_value_t = 0.1)]
    pub no_history_prob: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenLabelsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.75,0.80,0.85,0.90,0.95")]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Label JSONL from gen-labels.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub label_kind: LabelKindArg,
    /// Threshold for `--label-kind sbert`.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelKindArg {
    Sbert,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Confidence model JSON from `train`.
    #[arg(long, conflicts_with = "oracle_confidence", required_unless_present = "oracle_confidence")]
    pub model: Option<PathBuf>,
    /// Fire exactly when the current prediction would succeed.
    #[arg(long)]
    pub oracle_confidence: bool,
    /// Confidence threshold the gate must exceed.
    #[arg(long, default_value_t = 0.5)]
    pub gate: f64,
    #[arg(long, value_enum, default_value = "literal")]
    pub success: LabelKindArg,
    #[arg(long)]
    pub success_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub t_response_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub t_ep_extra_ms: u64,
    /// One run per success definition: literal plus sbert at each threshold.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.75,0.80,0.85,0.90,0.95")]
    pub thresholds: Vec<f64>,
    /// Drop utterances without dialogue history.
    #[arg(long)]
    pub require_history: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,
}

pub fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_owned()
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn manifest_with_inputs(
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[PathBuf],
) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new(command, config, seed);
    for p in inputs {
        m.add_input(p).map_err(io_err(p))?;
    }
    Ok(m)
}

/// Runs a parsed command, returning the text to print on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::GenLabels(a) => cmd_gen_labels(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<String, CliError> {
    let path = resolve_input(&a.corpus.corpus);
    let policy = a.corpus.policy()?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let errors = Corpus::diagnose_jsonl(&text, &policy);
    if errors.is_empty() {
        let n = text.lines().filter(|l| !l.trim().is_empty()).count();
        return Ok(format!("{}: {n} utterances ok\n", path.display()));
    }
    let msg = errors
        .iter()
        .map(|e| format!("{}: {e}", path.display()))
        .collect::<Vec<_>>()
        .join("\n");
    Err(CliError::Domain(msg))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, CliError> {
    let cfg = SynthConfig {
        n_utterances: a.n,
        seed: a.seed,
        timed: a.timed,
        no_history_prob: a.no_history_prob,
    };
    if !(0.0..=1.0).contains(&cfg.no_history_prob) {
        return Err(domain("no_history_prob must be in [0, 1]"));
    }
    let corpus = Corpus::new(synth::synthesize(&cfg), NormalizationPolicy::none())?;
    write(&a.out, &corpus.to_jsonl())?;
    let manifest = RunManifest::new("synth", json!({ "synth": cfg }), a.seed);
    write(&sidecar(&a.out), &manifest.to_json())?;
    Ok(format!("wrote {} utterances to {}\n", corpus.len(), a.out.display()))
}

pub fn cmd_gen_labels(a: &GenLabelsArgs) -> Result<String, CliError> {
    let (corpus, _) = a.corpus.load()?;
    let pcfg = a.predictor.config();
    let scfg = a.scorer.config();
    let predictor = predict::build_predictor(&pcfg, &corpus)?;
    let scorer = Scorer::new(scfg.clone(), &corpus.normalization)?;
    let rows = similarity::make_labels(&corpus, predictor.as_ref(), &scorer, &a.thresholds)
        .map_err(domain)?;

    let mut out = String::new();
    for r in &rows {
        out.push_str(&serde_json::to_string(r).expect("label row serializes"));
        out.push('\n');
    }
    write(&a.out, &out)?;

    let mut inputs = a.corpus.inputs();
    inputs.extend(pcfg.predictions_path.clone());
    inputs.extend(scfg.embedding_path.clone());
    let config = json!({
        "corpus": a.corpus.corpus,
        "policy": corpus.normalization,
        "language": corpus.language_tag,
        "predictor": pcfg,
        "scorer": scfg,
        "thresholds": a.thresholds,
    });
    let manifest = manifest_with_inputs("gen-labels", config, a.predictor.seed, &inputs)?;
    write(&sidecar(&a.out), &manifest.to_json())?;

    let kinds = 1 + a.thresholds.len();
    let mut msg = format!(
        "wrote {} label rows ({} decision steps x {kinds} label kinds) to {}\n",
        rows.len(),
        rows.len() / kinds,
        a.out.display()
    );
    if rows.is_empty() {
        msg.push_str("warning: no eligible decision steps (utterances need history and >= 2 units)\n");
    }
    Ok(msg)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| domain(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    let labels_path = resolve_input(&a.labels);
    let rows = read_labels(&labels_path)?;
    let (kind, threshold) = match a.label_kind {
        LabelKindArg::Literal => (LabelKind::Literal, None),
        LabelKindArg::Sbert => (
            LabelKind::Sbert,
            Some(a.threshold.ok_or_else(|| domain("--threshold is required for sbert labels"))?),
        ),
    };
    let tag = similarity::label_tag(kind, threshold);
    let selected: Vec<LabelRow> = rows.into_iter().filter(|r| r.tag() == tag).collect();
    if selected.is_empty() {
        return Err(domain(format!("no label rows of kind {tag} in {}", labels_path.display())));
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        gamma: a.gamma,
        seed: a.seed,
    };
    let outcome = confidence::train(&selected, &cfg).map_err(domain)?;
    let mut model_json = serde_json::to_string_pretty(&outcome.model).expect("model serializes");
    model_json.push('\n');
    write(&a.out, &model_json)?;
    let config = json!({ "labels": a.labels, "label_kind": tag, "train": cfg });
    let manifest = manifest_with_inputs("train", config, a.seed, &[labels_path])?;
    write(&sidecar(&a.out), &manifest.to_json())?;
    Ok(format!(
        "trained_on={tag} rows={} final_loss={:.6} accuracy={:.4}\n",
        selected.len(),
        outcome.final_loss,
        outcome.accuracy
    ))
}

pub fn read_model(path: &Path) -> Result<ConfidenceModel, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let model: ConfidenceModel =
        serde_json::from_str(&text).map_err(|e| domain(format!("{}: {e}", path.display())))?;
    if model.weights.len() != confidence::FEATURE_DIM {
        return Err(domain(format!(
            "{}: model has {} weights, expected {}",
            path.display(),
            model.weights.len(),
            confidence::FEATURE_DIM
        )));
    }
    Ok(model)
}

fn check_threshold(t: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(domain(format!("threshold {t} outside [0, 1]")))
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let (mut corpus, _) = a.corpus.load()?;
    if a.require_history {
        corpus.utterances.retain(|u| !u.history.is_empty());
    }
    let pcfg = a.predictor.config();
    let scfg = a.scorer.config();
    let predictor = predict::build_predictor(&pcfg, &corpus)?;
    let scorer = Scorer::new(scfg.clone(), &corpus.normalization)?;

    let mut inputs = a.corpus.inputs();
    inputs.extend(pcfg.predictions_path.clone());
    inputs.extend(scfg.embedding_path.clone());
    let (source, source_echo) = match &a.model {
        Some(path) => {
            let path = resolve_input(path);
            let model = read_model(&path)?;
            let echo = json!({ "model": path, "trained_on": model.trained_on });
            inputs.push(path);
            (ConfidenceSource::Model(model), echo)
        }
        None => (ConfidenceSource::Oracle, json!("oracle")),
    };

    let criteria: Vec<SuccessCriterion> = if a.sweep {
        std::iter::once(Ok(SuccessCriterion::Literal))
            .chain(a.thresholds.iter().map(|&t| {
                check_threshold(t).map(|success_threshold| SuccessCriterion::Sbert { success_threshold })
            }))
            .collect::<Result<_, _>>()?
    } else {
        vec![match a.success {
            LabelKindArg::Literal => SuccessCriterion::Literal,
            LabelKindArg::Sbert => SuccessCriterion::Sbert {
                success_threshold: check_threshold(
                    a.success_threshold
                        .ok_or_else(|| domain("--success-threshold is required for sbert success"))?,
                )?,
            },
        }]
    };

    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for success in criteria {
        let gate = GateConfig {
            confidence_threshold: a.gate,
            success,
            t_response_ms: a.t_response_ms,
            t_ep_extra_ms: a.t_ep_extra_ms,
        };
        let outcomes = simulator::simulate_corpus(&corpus, predictor.as_ref(), &scorer, &source, &gate)
            .map_err(domain)?;
        let echo = json!({
            "corpus": a.corpus.corpus,
            "policy": corpus.normalization,
            "language": corpus.language_tag,
            "require_history": a.require_history,
            "predictor": pcfg,
            "scorer": scfg,
            "confidence": source_echo,
            "gate": gate,
        });
        let report = metrics::aggregate(&outcomes, &corpus, &scorer, echo).map_err(domain)?;
        let tag = success.tag();
        let file = if a.sweep {
            format!("outcomes_{tag}.jsonl")
        } else {
            "outcomes.jsonl".to_owned()
        };
        write(&a.out.join(file), &simulator::outcomes_to_jsonl(&outcomes))?;
        reports.push((tag, report));
    }

    write(&a.out.join("report.json"), &metrics::write_reports(&reports, ReportFormat::Json))?;
    write(&a.out.join("report.csv"), &metrics::write_reports(&reports, ReportFormat::Csv))?;
    let config = json!({
        "corpus": a.corpus.corpus,
        "policy": corpus.normalization,
        "predictor": pcfg,
        "scorer": scfg,
        "confidence": source_echo,
        "gate": a.gate,
        "success": if a.sweep { "sweep".to_owned() } else { reports[0].0.clone() },
        "thresholds": a.thresholds,
        "t_response_ms": a.t_response_ms,
        "t_ep_extra_ms": a.t_ep_extra_ms,
        "require_history": a.require_history,
    });
    let manifest = manifest_with_inputs("simulate", config, a.predictor.seed, &inputs)?;
    write(&a.out.join("manifest.json"), &manifest.to_json())?;

    Ok(metrics::write_reports(&reports, a.format.into()))
}
