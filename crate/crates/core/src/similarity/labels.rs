use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Scorer, SimilarityError};
use crate::corpus::{Corpus, UnitKind};
use crate::predict::{CompletionPredictor, PredictError};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("utterance {utterance_id}: {source}")]
    Predict {
        utterance_id: String,
        #[source]
        source: PredictError,
    },
    #[error("utterance {utterance_id}: {source}")]
    Score {
        utterance_id: String,
        #[source]
        source: SimilarityError,
    },
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Positive when the similarity score exceeds the threshold.
    Sbert,
    /// Positive only on exact match with the complete utterance.
    Literal,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Sbert => "sbert",
            LabelKind::Literal => "literal",
        })
    }
}

/// `"literal"` or `"sbert_0.85"`.
pub fn label_tag(kind: LabelKind, threshold: Option<f64>) -> String {
    match (kind, threshold) {
        (LabelKind::Sbert, Some(t)) => format!("sbert_{t:.2}"),
        (LabelKind::Sbert, None) => "sbert".into(),
        (LabelKind::Literal, _) => "literal".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub utterance_id: String,
    pub step: usize,
    pub history: Vec<String>,
    pub partial: String,
    pub predicted_full: String,
    pub label_kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub label: bool,
    pub score: f64,
    #[serde(default = "default_unit_kind")]
    pub unit_kind: UnitKind,
}

fn default_unit_kind() -> UnitKind {
    UnitKind::Word
}

impl LabelRow {
    pub fn tag(&self) -> String {
        label_tag(self.label_kind, self.threshold)
    }
}

/// Emits one literal row and one row per threshold for every decision step
/// of every utterance that has dialogue history.
///
/// Predictions are normalized with the corpus policy before comparison.
pub fn make_labels(
    corpus: &Corpus,
    predictor: &dyn CompletionPredictor,
    scorer: &Scorer,
    thresholds: &[f64],
) -> Result<Vec<LabelRow>, LabelError> {
    if let Some(&t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(LabelError::Threshold(t));
    }
    let per_utterance: Vec<Vec<LabelRow>> = corpus
        .utterances
        .par_iter()
        .filter(|u| !u.history.is_empty())
        .map(|u| {
            let full = u.full_text();
            let mut rows = Vec::new();
            for prefix in u.enumerate_prefixes() {
                let pred = predictor
                    .predict(u, prefix.step, &prefix.partial)
                    .map_err(|source| LabelError::Predict {
                        utterance_id: u.utterance_id.clone(),
                        source,
                    })?;
                let predicted_full = corpus.normalize(&pred.full);
                let score = scorer
                    .score(&predicted_full, &full)
                    .map_err(|source| LabelError::Score {
                        utterance_id: u.utterance_id.clone(),
                        source,
                    })?;
                let row = |label_kind, threshold, label| LabelRow {
                    utterance_id: u.utterance_id.clone(),
                    step: prefix.step,
                    history: u.history.clone(),
                    partial: prefix.partial.clone(),
                    predicted_full: predicted_full.clone(),
                    label_kind,
                    threshold,
                    label,
                    score,
                    unit_kind: u.unit_kind,
                };
                rows.push(row(LabelKind::Literal, None, predicted_full == full));
                for &t in thresholds {
                    rows.push(row(LabelKind::Sbert, Some(t), score > t));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_, LabelError>>()?;
    Ok(per_utterance.into_iter().flatten().collect())
}
