//! Prefetch gating loop and user-perceived latency accounting.
//!
//! Each utterance is replayed unit by unit. At every decision step the
//! predictor proposes a complete utterance and the confidence source scores
//! it; the first step whose confidence exceeds the gate commits a prefetch.
//! The committed prediction is then judged against the real utterance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{featurize, predict_confidence, ConfidenceError, ConfidenceModel};
use crate::corpus::{Corpus, TimedUtterance};
use crate::predict::{CompletionPredictor, PredictError};
use crate::similarity::{label_tag, LabelKind, Scorer, SimilarityError};

#[derive(Debug, Error)]
pub enum SimError {
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
    #[error("utterance {utterance_id}: {source}")]
    Confidence {
        utterance_id: String,
        #[source]
        source: ConfidenceError,
    },
    #[error("invalid gate config: {0}")]
    Config(String),
}

/// What counts as a successful prefetch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "success_kind", rename_all = "snake_case")]
pub enum SuccessCriterion {
    Literal,
    Sbert { success_threshold: f64 },
}

impl SuccessCriterion {
    pub fn tag(&self) -> String {
        match self {
            SuccessCriterion::Literal => label_tag(LabelKind::Literal, None),
            SuccessCriterion::Sbert { success_threshold } => {
                label_tag(LabelKind::Sbert, Some(*success_threshold))
            }
        }
    }

    pub fn is_met(&self, scorer: &Scorer, predicted: &str, full: &str) -> Result<bool, SimilarityError> {
        match self {
            SuccessCriterion::Literal => Ok(predicted == full),
            SuccessCriterion::Sbert { success_threshold } => {
                Ok(scorer.score(predicted, full)? > *success_threshold)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub confidence_threshold: f64,
    #[serde(flatten)]
    pub success: SuccessCriterion,
    pub t_response_ms: u64,
    pub t_ep_extra_ms: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            confidence_threshold: 0.5,
            success: SuccessCriterion::Literal,
            t_response_ms: 0,
            t_ep_extra_ms: 0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(SimError::Config(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if let SuccessCriterion::Sbert { success_threshold } = self.success {
            if !(0.0..=1.0).contains(&success_threshold) {
                return Err(SimError::Config(format!(
                    "success_threshold {success_threshold} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Where the gate's confidence comes from.
#[derive(Debug, Clone)]
pub enum ConfidenceSource {
    Model(ConfidenceModel),
    /// 1 when the prediction at the current step meets the success
    /// criterion, else 0. An upper bound on any trained model.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Prefetched,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Success {
    Success,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchOutcome {
    pub utterance_id: String,
    pub decision: Decision,
    pub decision_step: Option<usize>,
    pub success: Success,
    pub gain_fraction: Option<f64>,
    pub gain_ms: Option<i64>,
    pub c_gain: Option<u64>,
    pub upl_ms: Option<i64>,
    pub prefetched_prediction: Option<String>,
    pub prefetched_response: Option<String>,
}

impl PrefetchOutcome {
    pub fn is_success(&self) -> bool {
        self.success == Success::Success
    }
}

/// User-perceived latency. A successful prefetch started `-t_pf_ms` before
/// end of speech is ready at `t_pf + t_response`, but never before end-point
/// detection; a failed (or absent) prefetch answers after end-point detection.
pub fn compute_upl(t_ep_ms: i64, t_pf_ms: Option<i64>, t_response_ms: i64, success: bool) -> i64 {
    let upl = match (success, t_pf_ms) {
        (true, Some(t_pf)) => t_ep_ms.max(t_pf + t_response_ms),
        _ => t_ep_ms + t_response_ms,
    };
    upl.max(0)
}

fn confidence_at(
    source: &ConfidenceSource,
    u: &TimedUtterance,
    partial: &str,
    predicted: &str,
    success_now: impl FnOnce() -> Result<bool, SimError>,
) -> Result<f64, SimError> {
    match source {
        ConfidenceSource::Oracle => Ok(if success_now()? { 1.0 } else { 0.0 }),
        ConfidenceSource::Model(model) => {
            let fv = featurize(&u.history, partial, predicted, u.unit_kind);
            predict_confidence(model, &fv).map_err(|source| SimError::Confidence {
                utterance_id: u.utterance_id.clone(),
                source,
            })
        }
    }
}

pub fn simulate_utterance(
    u: &TimedUtterance,
    corpus: &Corpus,
    predictor: &dyn CompletionPredictor,
    scorer: &Scorer,
    confidence: &ConfidenceSource,
    gate: &GateConfig,
) -> Result<PrefetchOutcome, SimError> {
    let full = u.full_text();
    let n = u.unit_count();
    let t_ep = u.eos_time().map(|eos| (eos + gate.t_ep_extra_ms) as i64);
    let t_response = gate.t_response_ms as i64;
    let judge = |predicted: &str| {
        gate.success
            .is_met(scorer, predicted, &full)
            .map_err(|source| SimError::Score {
                utterance_id: u.utterance_id.clone(),
                source,
            })
    };

    for prefix in u.enumerate_prefixes() {
        let pred = predictor
            .predict(u, prefix.step, &prefix.partial)
            .map_err(|source| SimError::Predict {
                utterance_id: u.utterance_id.clone(),
                source,
            })?;
        let predicted = corpus.normalize(&pred.full);
        let p = confidence_at(confidence, u, &prefix.partial, &predicted, || judge(&predicted))?;
        if p <= gate.confidence_threshold {
            continue;
        }

        let t = prefix.step;
        let success = judge(&predicted)?;
        let gain_ms = match (u.eos_time(), u.unit_end(t)) {
            (Some(eos), Some(end)) => Some(eos as i64 - end as i64),
            _ => None,
        };
        let upl_ms = t_ep.map(|t_ep| compute_upl(t_ep, gain_ms.map(|g| -g), t_response, success));
        let c_gain = full.chars().count() - prefix.partial.chars().count();
        return Ok(PrefetchOutcome {
            utterance_id: u.utterance_id.clone(),
            decision: Decision::Prefetched,
            decision_step: Some(t),
            success: if success { Success::Success } else { Success::Fail },
            gain_fraction: Some((n - t) as f64 / n as f64),
            gain_ms,
            c_gain: Some(c_gain as u64),
            upl_ms,
            prefetched_response: Some(corpus.normalize(&pred.response_or_template())),
            prefetched_prediction: Some(predicted),
        });
    }

    Ok(PrefetchOutcome {
        utterance_id: u.utterance_id.clone(),
        decision: Decision::None,
        decision_step: None,
        success: Success::NotApplicable,
        gain_fraction: None,
        gain_ms: None,
        c_gain: None,
        upl_ms: t_ep.map(|t_ep| compute_upl(t_ep, None, t_response, false)),
        prefetched_prediction: None,
        prefetched_response: None,
    })
}

/// One outcome per utterance, in corpus order. Utterances are simulated in
/// parallel; the first error in corpus order is returned.
pub fn simulate_corpus(
    corpus: &Corpus,
    predictor: &dyn CompletionPredictor,
    scorer: &Scorer,
    confidence: &ConfidenceSource,
    gate: &GateConfig,
) -> Result<Vec<PrefetchOutcome>, SimError> {
    gate.validate()?;
    corpus
        .utterances
        .par_iter()
        .map(|u| simulate_utterance(u, corpus, predictor, scorer, confidence, gate))
        .collect()
}

pub fn outcomes_to_jsonl(outcomes: &[PrefetchOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NormalizationPolicy, TimedUnit, UnitKind};
    use crate::predict::{OraclePredictor, PrefixEchoPredictor};
    use crate::similarity::ScorerKind;

    fn corpus_of(texts: &[&str]) -> Corpus {
        let us = texts
            .iter()
            .enumerate()
            .map(|(i, t)| TimedUtterance::from_text(format!("u{i}"), UnitKind::Word, t, vec!["h".into()]))
            .collect();
        Corpus::new(us, NormalizationPolicy::none()).unwrap()
    }

    fn scorer() -> Scorer {
        Scorer::of_kind(ScorerKind::TokenCosine)
    }

    #[test]
    fn upl_cases() {
        assert_eq!(compute_upl(1000, Some(-400), 300, true), 1000);
        assert_eq!(compute_upl(1000, None, 300, false), 1300);
        assert_eq!(compute_upl(1000, Some(-100), 1500, true), 1400);
        assert_eq!(compute_upl(0, Some(-500), 100, true), 0);
    }

    #[test]
    fn oracle_fires_at_first_step() {
        let c = corpus_of(&["what is the weather"]);
        let o = simulate_utterance(
            &c.utterances[0],
            &c,
            &OraclePredictor,
            &scorer(),
            &ConfidenceSource::Oracle,
            &GateConfig::default(),
        )
        .unwrap();
        assert_eq!(o.decision_step, Some(1));
        assert_eq!(o.success, Success::Success);
        assert_eq!(o.gain_fraction, Some(0.75));
        assert_eq!(o.c_gain, Some(("what is the weather".len() - "what".len()) as u64));
        assert_eq!(o.gain_ms, None);
        assert_eq!(o.upl_ms, None);
    }

    #[test]
    fn prefix_echo_always_fails_literal() {
        let c = corpus_of(&["what is the weather", "book a table for two", "hi there"]);
        let mut model = ConfidenceModel::zeros(2.0, "x");
        model.weights[5] = 5.0;
        let out = simulate_corpus(
            &c,
            &PrefixEchoPredictor,
            &scorer(),
            &ConfidenceSource::Model(model),
            &GateConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.decision == Decision::Prefetched && o.success == Success::Fail));
    }

    #[test]
    fn gate_at_one_never_fires() {
        let c = corpus_of(&["what is the weather"]);
        let mut model = ConfidenceModel::zeros(2.0, "x");
        model.weights[5] = 30.0;
        let gate = GateConfig {
            confidence_threshold: 1.0,
            ..GateConfig::default()
        };
        let o = simulate_utterance(
            &c.utterances[0],
            &c,
            &OraclePredictor,
            &scorer(),
            &ConfidenceSource::Model(model),
            &gate,
        )
        .unwrap();
        assert_eq!(o.decision, Decision::None);
        assert_eq!(o.success, Success::NotApplicable);
        assert!(o.decision_step.is_none() && o.gain_fraction.is_none() && o.prefetched_response.is_none());
    }

    #[test]
    fn empty_and_single_unit_corpora() {
        let empty = Corpus::new(vec![], NormalizationPolicy::none()).unwrap();
        let out = simulate_corpus(&empty, &OraclePredictor, &scorer(), &ConfidenceSource::Oracle, &GateConfig::default()).unwrap();
        assert!(out.is_empty());
        let c = corpus_of(&["yes"]);
        let out = simulate_corpus(&c, &OraclePredictor, &scorer(), &ConfidenceSource::Oracle, &GateConfig::default()).unwrap();
        assert_eq!(out[0].decision, Decision::None);
    }

    #[test]
    fn timed_gain_and_upl() {
        let mut u = TimedUtterance::from_text("t", UnitKind::Word, "a b c", vec!["h".into()]);
        u.units = vec![
            TimedUnit::timed("a", 0, 300),
            TimedUnit::timed("b", 350, 700),
            TimedUnit::timed("c", 750, 1200),
        ];
        let c = Corpus::new(vec![u], NormalizationPolicy::none()).unwrap();
        let gate = GateConfig {
            t_response_ms: 500,
            t_ep_extra_ms: 200,
            ..GateConfig::default()
        };
        let o = simulate_utterance(&c.utterances[0], &c, &OraclePredictor, &scorer(), &ConfidenceSource::Oracle, &gate).unwrap();
        assert_eq!(o.gain_ms, Some(900));
        // t_ep = 1400, t_pf + t_resp = -900 + 500
        assert_eq!(o.upl_ms, Some(1400));
    }

    #[test]
    fn missing_prediction_reports_utterance() {
        let c = corpus_of(&["a b"]);
        let err = simulate_corpus(
            &c,
            &crate::predict::FileBackedPredictor::default(),
            &scorer(),
            &ConfidenceSource::Oracle,
            &GateConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("u0"), "{err}");
    }

    #[test]
    fn gate_config_serializes_flat() {
        let g = GateConfig {
            success: SuccessCriterion::Sbert { success_threshold: 0.9 },
            ..GateConfig::default()
        };
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["success_kind"], "sbert");
        assert_eq!(v["success_threshold"], 0.9);
        let back: GateConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }
}
