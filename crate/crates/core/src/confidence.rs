//! Prediction confidence model: logistic regression over a handful of
//! features of (history, partial, predicted completion), trained with
//! binary focal loss.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{UnitKind, MAX_HISTORY};
use crate::similarity::{LabelRow, count_cosine};

pub const PROB_EPS: f64 = 1e-7;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "prefix_ratio",
    "partial_len",
    "pred_len",
    "overlap_cos",
    "history_len",
    "bias",
];
pub const FEATURE_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("degenerate labels: training rows must contain both classes")]
    DegenerateLabels,
    #[error("no training rows")]
    Empty,
    #[error("model has {got} weights, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub prefix_ratio: f64,
    pub partial_len: f64,
    pub pred_len: f64,
    pub overlap_cos: f64,
    pub history_len: f64,
    pub bias: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.prefix_ratio,
            self.partial_len,
            self.pred_len,
            self.overlap_cos,
            self.history_len,
            self.bias,
        ]
    }
}

pub fn featurize(
    history: &[String],
    partial: &str,
    predicted_full: &str,
    unit_kind: UnitKind,
) -> FeatureVector {
    let partial_units = unit_kind.split(partial);
    let pred_units = unit_kind.split(predicted_full);
    let prefix_ratio = if pred_units.is_empty() {
        1.0
    } else {
        (partial_units.len() as f64 / pred_units.len() as f64).min(1.0)
    };
    let overlap_cos = if partial_units == pred_units {
        1.0
    } else {
        count_cosine(&unit_counts(&partial_units), &unit_counts(&pred_units))
    };
    FeatureVector {
        prefix_ratio,
        partial_len: (partial_units.len() as f64).ln_1p(),
        pred_len: (pred_units.len() as f64).ln_1p(),
        overlap_cos,
        history_len: history.len() as f64 / MAX_HISTORY as f64,
        bias: 1.0,
    }
}

fn unit_counts(units: &[String]) -> BTreeMap<&str, u64> {
    let mut m = BTreeMap::new();
    for u in units {
        *m.entry(u.as_str()).or_insert(0) += 1;
    }
    m
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary focal loss `-(1 - p_t)^gamma * ln(p_t)`, with `p` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn focal_loss(p: f64, y: bool, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pt = if y { p } else { 1.0 - p };
    -(1.0 - pt).powf(gamma) * pt.ln()
}

/// d/dp of `focal_loss(p, y, gamma)` for `p` inside the clamp range.
pub fn focal_grad_prob(p: f64, y: bool, gamma: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    let (pt, sign) = if y { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    sign * (gamma * q.powf(gamma - 1.0) * pt.ln() - q.powf(gamma) / pt)
}

/// A binary loss over the model's logit, with its derivative in the logit.
pub trait BinaryLoss {
    fn loss(&self, logit: f64, y: bool) -> f64;
    fn grad(&self, logit: f64, y: bool) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLoss {
    pub gamma: f64,
}

impl BinaryLoss for FocalLoss {
    fn loss(&self, logit: f64, y: bool) -> f64 {
        focal_loss(sigmoid(logit), y, self.gamma)
    }

    fn grad(&self, logit: f64, y: bool) -> f64 {
        focal_grad_logit(logit, y, self.gamma)
    }
}

/// d/dz of `focal_loss(sigmoid(z), y, gamma)`:
/// `s * (gamma * p_t * (1-p_t)^gamma * ln p_t - (1-p_t)^(gamma+1))`, s = ±1 for y.
pub fn focal_grad_logit(z: f64, y: bool, gamma: f64) -> f64 {
    let p = sigmoid(z);
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        // loss is flat in the clamped region
        return 0.0;
    }
    let (pt, sign) = if y { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    sign * (gamma * pt * q.powf(gamma) * pt.ln() - q.powf(gamma + 1.0))
}

/// Plain binary cross-entropy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrossEntropy;

impl BinaryLoss for CrossEntropy {
    fn loss(&self, logit: f64, y: bool) -> f64 {
        let p = sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS);
        if y {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    fn grad(&self, logit: f64, y: bool) -> f64 {
        let p = sigmoid(logit);
        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            return 0.0;
        }
        p - f64::from(u8::from(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            learning_rate: 2e-3,
            batch_size: 16,
            gamma: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfidenceError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ConfidenceError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfidenceError::Config("learning_rate must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ConfidenceError::Config("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub trained_on: String,
    pub feature_names: Vec<String>,
}

impl ConfidenceModel {
    pub fn zeros(gamma: f64, trained_on: impl Into<String>) -> Self {
        ConfidenceModel {
            weights: vec![0.0; FEATURE_DIM],
            gamma,
            trained_on: trained_on.into(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn logit(&self, fv: &FeatureVector) -> Result<f64, ConfidenceError> {
        if self.weights.len() != FEATURE_DIM {
            return Err(ConfidenceError::DimensionMismatch {
                expected: FEATURE_DIM,
                got: self.weights.len(),
            });
        }
        Ok(dot(&self.weights, &fv.to_array()))
    }
}

/// `sigmoid(w · x)`.
pub fn predict_confidence(model: &ConfidenceModel, fv: &FeatureVector) -> Result<f64, ConfidenceError> {
    model.logit(fv).map(sigmoid)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ConfidenceModel,
    /// Mean batch loss before each update, in update order.
    pub loss_trajectory: Vec<f64>,
    /// Mean loss over the whole training set after the last update.
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Trains on label rows. All rows should share one label kind/threshold.
pub fn train(rows: &[LabelRow], cfg: &TrainConfig) -> Result<TrainOutcome, ConfidenceError> {
    let examples: Vec<(FeatureVector, bool)> = rows
        .iter()
        .map(|r| {
            (
                featurize(&r.history, &r.partial, &r.predicted_full, r.unit_kind),
                r.label,
            )
        })
        .collect();
    let tag = rows.first().map(LabelRow::tag).unwrap_or_default();
    train_features(&examples, cfg, &FocalLoss { gamma: cfg.gamma }, tag)
}

/// Mini-batch gradient descent from zero weights. Each epoch visits the
/// examples in an order drawn from a ChaCha8 stream seeded by `cfg.seed`.
pub fn train_features<L: BinaryLoss>(
    examples: &[(FeatureVector, bool)],
    cfg: &TrainConfig,
    loss: &L,
    trained_on: String,
) -> Result<TrainOutcome, ConfidenceError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(ConfidenceError::Empty);
    }
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(ConfidenceError::DegenerateLabels);
    }

    let xs: Vec<[f64; FEATURE_DIM]> = examples.iter().map(|(f, _)| f.to_array()).collect();
    let mut model = ConfidenceModel::zeros(cfg.gamma, trained_on);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trajectory = Vec::new();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = [0.0; FEATURE_DIM];
            let mut batch_loss = 0.0;
            for &i in batch {
                let z = dot(&model.weights, &xs[i]);
                let y = examples[i].1;
                batch_loss += loss.loss(z, y);
                let g = loss.grad(z, y);
                for (acc, x) in grad.iter_mut().zip(&xs[i]) {
                    *acc += g * x;
                }
            }
            let n = batch.len() as f64;
            trajectory.push(batch_loss / n);
            for (w, g) in model.weights.iter_mut().zip(grad) {
                *w -= cfg.learning_rate * g / n;
            }
        }
    }

    let mut total = 0.0;
    let mut correct = 0usize;
    for (x, (_, y)) in xs.iter().zip(examples) {
        let z = dot(&model.weights, x);
        total += loss.loss(z, *y);
        if (sigmoid(z) > 0.5) == *y {
            correct += 1;
        }
    }
    Ok(TrainOutcome {
        model,
        loss_trajectory: trajectory,
        final_loss: total / examples.len() as f64,
        accuracy: correct as f64 / examples.len() as f64,
    })
}
