//! Corpus-level prefetch metrics and report rendering.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::similarity::{rouge1_f1, Scorer, SimilarityError};
use crate::simulator::{Decision, PrefetchOutcome, Success};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{outcomes} outcomes for {utterances} utterances")]
    CountMismatch { outcomes: usize, utterances: usize },
    #[error("no outcome for utterance {0}")]
    MissingOutcome(String),
    #[error("utterance {utterance_id}: {source}")]
    Score {
        utterance_id: String,
        #[source]
        source: SimilarityError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub spr: f64,
    pub fpr: f64,
    pub npr: f64,
    pub p_gain_fraction: f64,
    pub p_gain_ms: Option<f64>,
    pub c_gain: f64,
    pub total: usize,
    pub comp: f64,
    pub rouge_max_mean: f64,
    pub sbert_max_mean: f64,
    pub n_utterances: usize,
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates outcomes (one per corpus utterance, any order).
///
/// Gains and response-quality scores average over successful prefetches
/// only. Comp and the max-over-references scores use successes that have at
/// least one reference response; Comp compares against the first one.
pub fn aggregate(
    outcomes: &[PrefetchOutcome],
    corpus: &Corpus,
    scorer: &Scorer,
    config_echo: serde_json::Value,
) -> Result<MetricsReport, MetricsError> {
    if outcomes.len() != corpus.len() {
        return Err(MetricsError::CountMismatch {
            outcomes: outcomes.len(),
            utterances: corpus.len(),
        });
    }
    let by_id: HashMap<&str, &PrefetchOutcome> = outcomes
        .iter()
        .map(|o| (o.utterance_id.as_str(), o))
        .collect();

    let (mut succ, mut fail, mut none) = (0usize, 0usize, 0usize);
    let (mut gain_sum, mut c_gain_sum) = (0.0, 0.0);
    let (mut ms_sum, mut ms_n) = (0.0, 0usize);
    let (mut comp_diff, mut with_refs) = (0usize, 0usize);
    let (mut rouge_sum, mut sbert_sum) = (0.0, 0.0);

    // Corpus order keeps floating-point sums independent of outcome order.
    for u in &corpus.utterances {
        let o = by_id
            .get(u.utterance_id.as_str())
            .ok_or_else(|| MetricsError::MissingOutcome(u.utterance_id.clone()))?;
        match (o.decision, o.success) {
            (Decision::None, _) => none += 1,
            (Decision::Prefetched, Success::Success) => succ += 1,
            (Decision::Prefetched, _) => fail += 1,
        }
        if !o.is_success() {
            continue;
        }
        gain_sum += o.gain_fraction.unwrap_or(0.0);
        c_gain_sum += o.c_gain.unwrap_or(0) as f64;
        if let Some(ms) = o.gain_ms {
            ms_sum += ms as f64;
            ms_n += 1;
        }
        if u.reference_responses.is_empty() {
            continue;
        }
        with_refs += 1;
        let response = o.prefetched_response.as_deref().unwrap_or("");
        if response != u.reference_responses[0] {
            comp_diff += 1;
        }
        let mut best_rouge = 0.0f64;
        let mut best_sim = 0.0f64;
        for r in &u.reference_responses {
            best_rouge = best_rouge.max(rouge1_f1(response, r));
            let s = scorer.score(response, r).map_err(|source| MetricsError::Score {
                utterance_id: u.utterance_id.clone(),
                source,
            })?;
            best_sim = best_sim.max(s);
        }
        rouge_sum += best_rouge;
        sbert_sum += best_sim;
    }

    let n = corpus.len();
    Ok(MetricsReport {
        spr: mean(succ as f64, n),
        fpr: mean(fail as f64, n),
        npr: mean(none as f64, n),
        p_gain_fraction: mean(gain_sum, succ),
        p_gain_ms: (ms_n > 0).then(|| ms_sum / ms_n as f64),
        c_gain: mean(c_gain_sum, succ),
        total: succ,
        comp: mean(comp_diff as f64, with_refs),
        rouge_max_mean: mean(rouge_sum, with_refs),
        sbert_max_mean: mean(sbert_sum, with_refs),
        n_utterances: n,
        config_echo,
    })
}

const COLUMNS_HEAD: [&str; 4] = ["SPR", "FPR", "NPR", "P-Gain"];
const COLUMN_MS: &str = "P-Gain (ms)";
const COLUMNS_TAIL: [&str; 5] = ["C-Gain", "Total", "Comp", "ROUGE", "S-BERT"];

fn columns(with_ms: bool) -> Vec<&'static str> {
    let mut cols: Vec<&str> = COLUMNS_HEAD.to_vec();
    if with_ms {
        cols.push(COLUMN_MS);
    }
    cols.extend(COLUMNS_TAIL);
    cols
}

fn cells(r: &MetricsReport, with_ms: bool) -> Vec<String> {
    let mut v = vec![
        format!("{:.2}", r.spr),
        format!("{:.2}", r.fpr),
        format!("{:.2}", r.npr),
        format!("{:.2}", r.p_gain_fraction),
    ];
    if with_ms {
        v.push(r.p_gain_ms.map_or_else(|| "-".to_owned(), |ms| format!("{ms:.2}")));
    }
    v.extend([
        format!("{:.2}", r.c_gain),
        r.total.to_string(),
        format!("{:.2}", r.comp),
        format!("{:.2}", r.rouge_max_mean),
        format!("{:.2}", r.sbert_max_mean),
    ]);
    v
}

pub fn write_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        _ => write_reports(&[(String::new(), report.clone())], format),
    }
}

/// Renders several labelled reports as one grid, one row per report.
/// The P-Gain (ms) column appears only if some report has timed gains.
/// In CSV the first column is `Model` only when rows carry labels.
pub fn write_reports(rows: &[(String, MetricsReport)], format: ReportFormat) -> String {
    let with_ms = rows.iter().any(|(_, r)| r.p_gain_ms.is_some());
    let labelled = rows.iter().any(|(l, _)| !l.is_empty());
    match format {
        ReportFormat::Json => {
            let arr: Vec<serde_json::Value> = rows
                .iter()
                .map(|(label, r)| {
                    serde_json::json!({ "model": label, "report": r })
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&arr).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut header = columns(with_ms);
            if labelled {
                header.insert(0, "Model");
            }
            let mut out = header.join(",");
            out.push('\n');
            for (label, r) in rows {
                let mut c = cells(r, with_ms);
                if labelled {
                    c.insert(0, label.clone());
                }
                out.push_str(&c.join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::Table => {
            let mut header = vec!["Model"];
            header.extend(columns(with_ms));
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|(label, r)| {
                    let mut c = cells(r, with_ms);
                    c.insert(0, if label.is_empty() { "run".into() } else { label.clone() });
                    c
                })
                .collect();
            let widths: Vec<usize> = header
                .iter()
                .enumerate()
                .map(|(i, h)| body.iter().map(|row| row[i].len()).chain([h.len()]).max().unwrap_or(0))
                .collect();
            let mut out = String::new();
            let line = |out: &mut String, cols: &[&str]| {
                let padded: Vec<String> = cols
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect();
                let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
            };
            line(&mut out, &header);
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
            for row in &body {
                let cols: Vec<&str> = row.iter().map(String::as_str).collect();
                line(&mut out, &cols);
            }
            out
        }
    }
}
