//! Simulation and evaluation harness for confidence-gated dialogue response
//! prefetching.
//!
//! A corpus of user turns is replayed unit by unit. A completion predictor
//! guesses the whole utterance from each prefix, a confidence model decides
//! when to commit to a prefetched response, and the run is scored with
//! successful/failed/non-prefetch rates, prediction gains, user-perceived
//! latency and response-quality metrics.

pub mod cli;
pub mod confidence;
pub mod corpus;
pub mod manifest;
pub mod metrics;
pub mod predict;
pub mod similarity;
pub mod simulator;
pub mod synth;

pub use confidence::{ConfidenceModel, FeatureVector, TrainConfig};
pub use corpus::{load_corpus, Corpus, NormalizationPolicy, TimedUnit, TimedUtterance, UnitKind};
pub use metrics::{aggregate, MetricsReport, ReportFormat};
pub use predict::{build_predictor, CompletionPredictor, PredictorConfig, PredictorKind};
pub use similarity::{make_labels, rouge1_f1, LabelKind, LabelRow, Scorer, ScorerConfig, ScorerKind};
pub use simulator::{
    compute_upl, simulate_corpus, simulate_utterance, ConfidenceSource, GateConfig,
    PrefetchOutcome, SuccessCriterion,
};
