//! Completion predictors: map a partial utterance (plus context) to a
//! hypothesis of the complete utterance.
//!
//! The reference predictors are deterministic stand-ins for a fine-tuned
//! language model. `FileBacked` replays predictions generated elsewhere.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TimedUtterance};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate prediction for ({utterance_id}, step {step})")]
    Duplicate {
        line: usize,
        utterance_id: String,
        step: usize,
    },
    #[error("no prediction for ({utterance_id}, step {step})")]
    Missing { utterance_id: String, step: usize },
    #[error("invalid predictor config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Oracle,
    NoisyOracle,
    PrefixEcho,
    FileBacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub noise_truncate_prob: f64,
    pub noise_swap_prob: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions_path: Option<PathBuf>,
}

impl PredictorConfig {
    pub fn of_kind(kind: PredictorKind) -> Self {
        PredictorConfig {
            kind,
            noise_truncate_prob: 0.0,
            noise_swap_prob: 0.0,
            seed: 0,
            predictions_path: None,
        }
    }

    pub fn noisy(truncate: f64, swap: f64, seed: u64) -> Self {
        PredictorConfig {
            kind: PredictorKind::NoisyOracle,
            noise_truncate_prob: truncate,
            noise_swap_prob: swap,
            seed,
            predictions_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        for (name, p) in [
            ("noise_truncate_prob", self.noise_truncate_prob),
            ("noise_swap_prob", self.noise_swap_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PredictError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.kind == PredictorKind::FileBacked && self.predictions_path.is_none() {
            return Err(PredictError::Config(
                "file_backed predictor needs a predictions file".into(),
            ));
        }
        Ok(())
    }
}

/// One externally generated prediction row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub utterance_id: String,
    pub step: usize,
    pub partial: String,
    pub predicted_full: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_response: Option<String>,
}

/// Predictor output for one decision step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub full: String,
    pub response: Option<String>,
}

impl Prediction {
    fn text(full: String) -> Self {
        Prediction {
            full,
            response: None,
        }
    }

    /// The carried response, or the deterministic template when absent.
    pub fn response_or_template(&self) -> String {
        self.response
            .clone()
            .unwrap_or_else(|| template_response(&self.full))
    }
}

/// Stand-in system response for predictors that do not generate one.
pub fn template_response(predicted_full: &str) -> String {
    format!("here is what i found for {predicted_full}")
}

pub trait CompletionPredictor: Send + Sync {
    /// Predicts the complete utterance after `step` units of `utterance`
    /// have been recognized. `partial` is the recognized prefix text.
    fn predict(
        &self,
        utterance: &TimedUtterance,
        step: usize,
        partial: &str,
    ) -> Result<Prediction, PredictError>;
}

/// Returns the hidden complete utterance verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl CompletionPredictor for OraclePredictor {
    fn predict(&self, u: &TimedUtterance, _: usize, _: &str) -> Result<Prediction, PredictError> {
        Ok(Prediction::text(u.full_text()))
    }
}

/// Predicts that the user has already finished speaking.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrefixEchoPredictor;

impl CompletionPredictor for PrefixEchoPredictor {
    fn predict(&self, _: &TimedUtterance, _: usize, partial: &str) -> Result<Prediction, PredictError> {
        Ok(Prediction::text(partial.to_owned()))
    }
}

/// The oracle completion corrupted by seeded noise on the unrevealed units:
/// with probability `truncate_prob` the final unit is dropped, and each
/// remaining unrevealed unit is replaced by a different vocabulary unit with
/// probability `swap_prob`. Revealed units are never touched.
#[derive(Debug, Clone)]
pub struct NoisyOraclePredictor {
    truncate_prob: f64,
    swap_prob: f64,
    seed: u64,
    vocabulary: Vec<String>,
}

impl NoisyOraclePredictor {
    pub fn new(truncate_prob: f64, swap_prob: f64, seed: u64, vocabulary: Vec<String>) -> Self {
        NoisyOraclePredictor {
            truncate_prob,
            swap_prob,
            seed,
            vocabulary,
        }
    }

    fn rng_for(&self, utterance_id: &str, step: usize) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed ^ fnv1a64(utterance_id.as_bytes()));
        h = splitmix64(h ^ step as u64);
        ChaCha8Rng::seed_from_u64(h)
    }
}

impl CompletionPredictor for NoisyOraclePredictor {
    fn predict(&self, u: &TimedUtterance, step: usize, _: &str) -> Result<Prediction, PredictError> {
        let mut rng = self.rng_for(&u.utterance_id, step);
        let mut units: Vec<String> = u.units.iter().map(|x| x.text.clone()).collect();
        let revealed = step.min(units.len());

        // Draw counts are fixed per (utterance, step) so outcomes depend only on the seed.
        let truncate = rng.gen_bool(self.truncate_prob);
        if truncate && units.len() > revealed {
            units.pop();
        }
        for i in revealed..u.units.len() {
            let swap = rng.gen_bool(self.swap_prob);
            let pick = rng.gen_range(0..self.vocabulary.len().max(1));
            if !swap || i >= units.len() || self.vocabulary.is_empty() {
                continue;
            }
            let mut replacement = &self.vocabulary[pick];
            if *replacement == units[i] {
                if self.vocabulary.len() == 1 {
                    continue;
                }
                replacement = &self.vocabulary[(pick + 1) % self.vocabulary.len()];
            }
            units[i] = replacement.clone();
        }
        Ok(Prediction::text(u.unit_kind.join(&units)))
    }
}

pub type PredictionTable = HashMap<(String, usize), PredictionRecord>;

/// Replays predictions keyed by (utterance_id, step).
#[derive(Debug, Clone, Default)]
pub struct FileBackedPredictor {
    table: PredictionTable,
}

impl FileBackedPredictor {
    pub fn new(table: PredictionTable) -> Self {
        FileBackedPredictor { table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl CompletionPredictor for FileBackedPredictor {
    fn predict(&self, u: &TimedUtterance, step: usize, _: &str) -> Result<Prediction, PredictError> {
        let rec = self
            .table
            .get(&(u.utterance_id.clone(), step))
            .ok_or_else(|| PredictError::Missing {
                utterance_id: u.utterance_id.clone(),
                step,
            })?;
        Ok(Prediction {
            full: rec.predicted_full.clone(),
            response: rec.predicted_response.clone(),
        })
    }
}

pub fn parse_predictions(text: &str) -> Result<PredictionTable, PredictError> {
    let mut table = PredictionTable::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(raw);
        let rec: PredictionRecord =
            serde_path_to_error::deserialize(de).map_err(|e| PredictError::Malformed {
                line,
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if rec.step == 0 {
            return Err(PredictError::Malformed {
                line,
                field: "step".into(),
                message: "steps start at 1".into(),
            });
        }
        if rec.predicted_full.trim().is_empty() {
            return Err(PredictError::Malformed {
                line,
                field: "predicted_full".into(),
                message: "must be non-empty".into(),
            });
        }
        let key = (rec.utterance_id.clone(), rec.step);
        if table.contains_key(&key) {
            return Err(PredictError::Duplicate {
                line,
                utterance_id: key.0,
                step: key.1,
            });
        }
        table.insert(key, rec);
    }
    Ok(table)
}

pub fn load_predictions(path: &Path) -> Result<PredictionTable, PredictError> {
    let text = fs::read_to_string(path).map_err(|source| PredictError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_predictions(&text)
}

/// Builds the predictor described by `cfg`. The noisy oracle draws its swap
/// vocabulary from the corpus units.
pub fn build_predictor(
    cfg: &PredictorConfig,
    corpus: &Corpus,
) -> Result<Box<dyn CompletionPredictor>, PredictError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        PredictorKind::Oracle => Box::new(OraclePredictor),
        PredictorKind::PrefixEcho => Box::new(PrefixEchoPredictor),
        PredictorKind::NoisyOracle => Box::new(NoisyOraclePredictor::new(
            cfg.noise_truncate_prob,
            cfg.noise_swap_prob,
            cfg.seed,
            corpus.unit_vocabulary(),
        )),
        PredictorKind::FileBacked => {
            let path = cfg.predictions_path.as_deref().expect("validated");
            Box::new(FileBackedPredictor::new(load_predictions(path)?))
        }
    })
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UnitKind;
    use proptest::prelude::*;

    fn weather() -> TimedUtterance {
        TimedUtterance::from_text("u1", UnitKind::Word, "what is the weather", vec!["hi".into()])
    }

    #[test]
    fn oracle_returns_hidden_full() {
        let p = OraclePredictor.predict(&weather(), 2, "what is").unwrap();
        assert_eq!(p.full, "what is the weather");
    }

    #[test]
    fn prefix_echo_returns_partial() {
        let p = PrefixEchoPredictor.predict(&weather(), 2, "what is").unwrap();
        assert_eq!(p.full, "what is");
    }

    #[test]
    fn forced_truncation_drops_final_unit() {
        for seed in 0..20 {
            let p = NoisyOraclePredictor::new(1.0, 0.0, seed, vec!["x".into()]);
            let out = p.predict(&weather(), 2, "what is").unwrap();
            assert_eq!(out.full, "what is the");
        }
    }

    #[test]
    fn swaps_never_touch_revealed_units() {
        let vocab = vec!["a".to_string(), "b".to_string()];
        let p = NoisyOraclePredictor::new(0.0, 1.0, 7, vocab);
        let out = p.predict(&weather(), 2, "what is").unwrap();
        let units: Vec<_> = out.full.split(' ').collect();
        assert_eq!(&units[..2], ["what", "is"]);
        assert!(units[2..].iter().all(|w| *w == "a" || *w == "b"));
    }

    #[test]
    fn file_backed_missing_key_names_it() {
        let p = FileBackedPredictor::default();
        let err = p.predict(&weather(), 3, "what is the").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("u1") && msg.contains("step 3"), "{msg}");
    }

    #[test]
    fn loads_prediction_rows() {
        let text = (1..=3)
            .map(|s| {
                format!(r#"{{"utterance_id":"u1","step":{s},"partial":"p","predicted_full":"full"}}"#)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let table = parse_predictions(&text).unwrap();
        assert_eq!(table.len(), 3);
        let pred = FileBackedPredictor::new(table)
            .predict(&weather(), 2, "what is")
            .unwrap();
        assert_eq!(pred.full, "full");
        assert_eq!(pred.response_or_template(), template_response("full"));
    }

    #[test]
    fn duplicate_prediction_rejected() {
        let row = r#"{"utterance_id":"u1","step":1,"partial":"p","predicted_full":"f"}"#;
        let err = parse_predictions(&format!("{row}\n{row}")).unwrap_err();
        assert!(matches!(err, PredictError::Duplicate { line: 2, .. }));
    }

    #[test]
    fn missing_predicted_full_named() {
        let err = parse_predictions(r#"{"utterance_id":"u1","step":1,"partial":"p"}"#).unwrap_err();
        assert!(err.to_string().contains("predicted_full"), "{err}");
    }

    #[test]
    fn config_rejects_bad_probability() {
        let cfg = PredictorConfig::noisy(1.5, 0.0, 0);
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn noisy_oracle_is_deterministic(seed: u64, step in 1usize..4, t in 0.0f64..1.0, s in 0.0f64..1.0) {
            let vocab: Vec<String> = ["a", "b", "c", "weather"].iter().map(|x| x.to_string()).collect();
            let p1 = NoisyOraclePredictor::new(t, s, seed, vocab.clone());
            let p2 = NoisyOraclePredictor::new(t, s, seed, vocab);
            let u = weather();
            let partial = u.prefix_text(step);
            let a = p1.predict(&u, step, &partial).unwrap();
            let b = p2.predict(&u, step, &partial).unwrap();
            prop_assert!(a.full.starts_with(&partial));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prefix_echo_never_literal(words in proptest::collection::vec("[a-z]{1,5}", 2..10)) {
            let u = TimedUtterance::from_text("u", UnitKind::Word, &words.join(" "), vec![]);
            let full = u.full_text();
            for p in u.enumerate_prefixes() {
                let pred = PrefixEchoPredictor.predict(&u, p.step, &p.partial).unwrap();
                prop_assert_ne!(&pred.full, &full);
            }
        }
    }
}
