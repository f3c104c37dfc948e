//! Dialogue corpus ingestion, normalization and prefix enumeration.
//!
//! A corpus file is UTF-8 JSONL with one user turn per line. Each turn carries
//! its units (words or characters) with optional turn-relative timestamps, up
//! to four turns of dialogue history, the gold system response and up to four
//! generated reference responses.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_HISTORY: usize = 4;
pub const MAX_REFERENCES: usize = 4;

/// Characters stripped by the default punctuation policy.
pub const CJK_PUNCTUATION: [char; 4] = ['、', '。', '！', '？'];

#[derive(Debug, Error)]
pub enum CorpusError {
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
    #[error("line {line}: duplicate utterance_id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: utterance `{id}` mixes timed and untimed units")]
    MixedTimestamps { line: usize, id: String },
    #[error("line {line}: utterance `{id}` unit {unit}: timestamp order violated ({detail})")]
    TimestampOrder {
        line: usize,
        id: String,
        unit: usize,
        detail: String,
    },
    #[error("invalid normalization policy: {0}")]
    Policy(String),
}

impl CorpusError {
    /// 1-based line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Malformed { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::MixedTimestamps { line, .. }
            | CorpusError::TimestampOrder { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Word,
    Character,
}

impl UnitKind {
    /// Joins unit texts the way partial hypotheses are rendered.
    pub fn join<S: AsRef<str>>(self, units: &[S]) -> String {
        let sep = match self {
            UnitKind::Word => " ",
            UnitKind::Character => "",
        };
        units
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Splits a normalized string into units: whitespace tokens for words,
    /// Unicode scalar values (ignoring whitespace) for characters.
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            UnitKind::Word => text.split_whitespace().map(str::to_owned).collect(),
            UnitKind::Character => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::Word => f.write_str("word"),
            UnitKind::Character => f.write_str("character"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub strip_punctuation: bool,
    pub case_fold: bool,
    pub punctuation_set: BTreeSet<char>,
}

impl NormalizationPolicy {
    /// Leaves text untouched apart from whitespace collapsing.
    pub fn none() -> Self {
        NormalizationPolicy {
            strip_punctuation: false,
            case_fold: false,
            punctuation_set: Self::default_punctuation(),
        }
    }

    /// Punctuation removal plus case folding, for spoken-style transcripts.
    pub fn spoken() -> Self {
        NormalizationPolicy {
            strip_punctuation: true,
            case_fold: true,
            punctuation_set: Self::default_punctuation(),
        }
    }

    pub fn case_fold_only() -> Self {
        NormalizationPolicy {
            strip_punctuation: false,
            case_fold: true,
            punctuation_set: Self::default_punctuation(),
        }
    }

    /// ASCII punctuation plus the common Japanese sentence marks.
    pub fn default_punctuation() -> BTreeSet<char> {
        (0u8..=127)
            .map(char::from)
            .filter(char::is_ascii_punctuation)
            .chain(CJK_PUNCTUATION)
            .collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.strip_punctuation && self.punctuation_set.is_empty() {
            return Err(CorpusError::Policy(
                "punctuation_set must be non-empty when strip_punctuation is set".into(),
            ));
        }
        Ok(())
    }

    /// Case fold, drop punctuation, collapse whitespace runs to one space.
    pub fn normalize(&self, text: &str) -> String {
        let folded;
        let text = if self.case_fold {
            folded = text.to_lowercase();
            folded.as_str()
        } else {
            text
        };
        let stripped: String = if self.strip_punctuation {
            text.chars()
                .filter(|c| !self.punctuation_set.contains(c))
                .collect()
        } else {
            text.to_owned()
        };
        stripped.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedUnit {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
}

impl TimedUnit {
    pub fn untimed(text: impl Into<String>) -> Self {
        TimedUnit {
            text: text.into(),
            start_ms: None,
            end_ms: None,
        }
    }

    pub fn timed(text: impl Into<String>, start_ms: u64, end_ms: u64) -> Self {
        TimedUnit {
            text: text.into(),
            start_ms: Some(start_ms),
            end_ms: Some(end_ms),
        }
    }

    fn is_timed(&self) -> bool {
        self.start_ms.is_some() || self.end_ms.is_some()
    }
}

/// One user turn revealed unit by unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedUtterance {
    pub utterance_id: String,
    pub dialogue_id: String,
    pub unit_kind: UnitKind,
    pub units: Vec<TimedUnit>,
    pub history: Vec<String>,
    pub gold_response: String,
    pub reference_responses: Vec<String>,
}

/// A decision point: the first `step` units have been recognized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixStep {
    pub step: usize,
    pub partial: String,
}

impl TimedUtterance {
    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn full_text(&self) -> String {
        self.prefix_text(self.units.len())
    }

    /// Text of the first `step` units.
    pub fn prefix_text(&self, step: usize) -> String {
        let texts: Vec<&str> = self.units[..step].iter().map(|u| u.text.as_str()).collect();
        self.unit_kind.join(&texts)
    }

    /// Decision steps `1..n-1`. The complete utterance is never a decision
    /// step because at end of speech the system answers normally.
    pub fn enumerate_prefixes(&self) -> Vec<PrefixStep> {
        (1..self.units.len())
            .map(|step| PrefixStep {
                step,
                partial: self.prefix_text(step),
            })
            .collect()
    }

    /// End of speech: end of the final unit, when timed.
    pub fn eos_time(&self) -> Option<u64> {
        self.units.last().and_then(|u| u.end_ms)
    }

    pub fn unit_end(&self, step: usize) -> Option<u64> {
        step.checked_sub(1)
            .and_then(|i| self.units.get(i))
            .and_then(|u| u.end_ms)
    }

    pub fn is_timed(&self) -> bool {
        self.units.first().is_some_and(|u| u.end_ms.is_some())
    }

    /// Builds an untimed utterance by splitting `text` into units.
    pub fn from_text(
        utterance_id: impl Into<String>,
        unit_kind: UnitKind,
        text: &str,
        history: Vec<String>,
    ) -> Self {
        TimedUtterance {
            utterance_id: utterance_id.into(),
            dialogue_id: String::new(),
            unit_kind,
            units: unit_kind
                .split(text)
                .into_iter()
                .map(TimedUnit::untimed)
                .collect(),
            history,
            gold_response: String::new(),
            reference_responses: Vec::new(),
        }
    }

    /// Normalizes every text field and checks the record invariants.
    /// `line` is used only for error reporting.
    pub fn normalize_and_validate(
        mut self,
        policy: &NormalizationPolicy,
        line: usize,
    ) -> Result<Self, CorpusError> {
        let malformed = |field: &str, message: String| CorpusError::Malformed {
            line,
            field: field.to_owned(),
            message,
        };
        if self.utterance_id.is_empty() {
            return Err(malformed("utterance_id", "must be non-empty".into()));
        }
        if self.history.len() > MAX_HISTORY {
            return Err(malformed(
                "history",
                format!("{} turns, at most {MAX_HISTORY} allowed", self.history.len()),
            ));
        }
        if self.reference_responses.len() > MAX_REFERENCES {
            return Err(malformed(
                "reference_responses",
                format!(
                    "{} entries, at most {MAX_REFERENCES} allowed",
                    self.reference_responses.len()
                ),
            ));
        }
        if self.units.is_empty() {
            return Err(malformed("units", "must be non-empty".into()));
        }

        let timed = self.units[0].is_timed();
        let mut prev: Option<(u64, u64)> = None;
        for (i, unit) in self.units.iter().enumerate() {
            let (start, end) = match (unit.start_ms, unit.end_ms) {
                (Some(s), Some(e)) if timed => (s, e),
                (None, None) if !timed => continue,
                _ => {
                    return Err(CorpusError::MixedTimestamps {
                        line,
                        id: self.utterance_id.clone(),
                    })
                }
            };
            let order = |detail: String| CorpusError::TimestampOrder {
                line,
                id: self.utterance_id.clone(),
                unit: i,
                detail,
            };
            if start > end {
                return Err(order(format!("start_ms {start} > end_ms {end}")));
            }
            if let Some((ps, pe)) = prev {
                if start < ps || end < pe {
                    return Err(order(format!(
                        "[{start}, {end}] precedes previous unit [{ps}, {pe}]"
                    )));
                }
            }
            prev = Some((start, end));
        }

        if self.unit_kind == UnitKind::Character {
            if let Some(i) = self.units.iter().position(|u| u.text.chars().count() > 1) {
                return Err(malformed(
                    "units",
                    format!("unit {i} of a character utterance holds more than one character"),
                ));
            }
        }

        let mut units = Vec::with_capacity(self.units.len());
        for (i, mut unit) in self.units.into_iter().enumerate() {
            unit.text = policy.normalize(&unit.text);
            if unit.text.is_empty() {
                // Punctuation-only or blank units carry no recognizable content.
                continue;
            }
            if self.unit_kind == UnitKind::Word && unit.text.contains(' ') {
                return Err(malformed(
                    "units",
                    format!("word unit {i} contains whitespace after normalization"),
                ));
            }
            units.push(unit);
        }
        if units.is_empty() {
            return Err(malformed("units", "no units left after normalization".into()));
        }
        self.units = units;
        self.history = self.history.iter().map(|h| policy.normalize(h)).collect();
        self.gold_response = policy.normalize(&self.gold_response);
        self.reference_responses = self
            .reference_responses
            .iter()
            .map(|r| policy.normalize(r))
            .collect();
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub utterances: Vec<TimedUtterance>,
    pub language_tag: String,
    pub normalization: NormalizationPolicy,
}

impl Corpus {
    pub fn new(
        utterances: Vec<TimedUtterance>,
        policy: NormalizationPolicy,
    ) -> Result<Self, CorpusError> {
        policy.validate()?;
        let mut seen = HashSet::new();
        let mut normalized = Vec::with_capacity(utterances.len());
        for (i, u) in utterances.into_iter().enumerate() {
            let u = u.normalize_and_validate(&policy, i + 1)?;
            if !seen.insert(u.utterance_id.clone()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: u.utterance_id,
                });
            }
            normalized.push(u);
        }
        Ok(Corpus {
            utterances: normalized,
            language_tag: "und".into(),
            normalization: policy,
        })
    }

    pub fn parse_jsonl(text: &str, policy: NormalizationPolicy) -> Result<Self, CorpusError> {
        policy.validate()?;
        let utterances = parse_records(text, &policy).collect::<Result<_, _>>()?;
        Ok(Corpus {
            utterances,
            language_tag: "und".into(),
            normalization: policy,
        })
    }

    /// Every problem in `text`, one per offending line, instead of stopping
    /// at the first.
    pub fn diagnose_jsonl(text: &str, policy: &NormalizationPolicy) -> Vec<CorpusError> {
        if let Err(e) = policy.validate() {
            return vec![e];
        }
        parse_records(text, policy).filter_map(Result::err).collect()
    }

    pub fn with_language(mut self, tag: impl Into<String>) -> Self {
        self.language_tag = tag.into();
        self
    }

    /// One JSON record per line, normalized fields only.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn normalize(&self, text: &str) -> String {
        self.normalization.normalize(text)
    }

    pub fn get(&self, utterance_id: &str) -> Option<&TimedUtterance> {
        self.utterances.iter().find(|u| u.utterance_id == utterance_id)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Sorted set of every unit text in the corpus.
    pub fn unit_vocabulary(&self) -> Vec<String> {
        self.utterances
            .iter()
            .flat_map(|u| u.units.iter().map(|x| x.text.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn has_timestamps(&self) -> bool {
        self.utterances.iter().any(TimedUtterance::is_timed)
    }
}

fn parse_records<'a>(
    text: &'a str,
    policy: &'a NormalizationPolicy,
) -> impl Iterator<Item = Result<TimedUtterance, CorpusError>> + 'a {
    let mut seen = HashSet::new();
    text.lines()
        .enumerate()
        .filter(|(_, raw)| !raw.trim().is_empty())
        .map(move |(idx, raw)| {
            let line = idx + 1;
            let de = &mut serde_json::Deserializer::from_str(raw);
            let u: TimedUtterance =
                serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Malformed {
                    line,
                    field: field_name(e.path()),
                    message: e.inner().to_string(),
                })?;
            let u = u.normalize_and_validate(policy, line)?;
            if !seen.insert(u.utterance_id.clone()) {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: u.utterance_id,
                });
            }
            Ok(u)
        })
}

fn field_name(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        "<record>".into()
    } else {
        s
    }
}

pub fn load_corpus(path: &Path, policy: NormalizationPolicy) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    Corpus::parse_jsonl(&text, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, units: &str) -> String {
        format!(
            r#"{{"utterance_id":"{id}","dialogue_id":"d1","unit_kind":"word","units":{units},"history":["hello"],"gold_response":"ok","reference_responses":["ok"]}}"#
        )
    }

    #[test]
    fn loads_two_records() {
        let text = format!(
            "{}\n{}\n",
            record("u1", r#"[{"text":"hi"},{"text":"there"}]"#),
            record("u2", r#"[{"text":"bye"}]"#)
        );
        let corpus = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn strips_punctuation_and_folds_case() {
        let text = record("u1", r#"[{"text":"Hi,"},{"text":"there!"}]"#);
        let corpus = Corpus::parse_jsonl(&text, NormalizationPolicy::spoken()).unwrap();
        let texts: Vec<_> = corpus.utterances[0].units.iter().map(|u| &u.text).collect();
        assert_eq!(texts, ["hi", "there"]);
    }

    #[test]
    fn rejects_reversed_timestamps() {
        let text = record("u1", r#"[{"text":"hi","start_ms":500,"end_ms":400}]"#);
        let err = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap_err();
        assert!(err.to_string().contains("timestamp order"), "{err}");
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn rejects_decreasing_timestamps_across_units() {
        let text = record(
            "u1",
            r#"[{"text":"a","start_ms":100,"end_ms":300},{"text":"b","start_ms":50,"end_ms":200}]"#,
        );
        let err = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, CorpusError::TimestampOrder { unit: 1, .. }));
    }

    #[test]
    fn rejects_mixed_timestamps() {
        let text = record("u1", r#"[{"text":"a","start_ms":0,"end_ms":10},{"text":"b"}]"#);
        let err = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, CorpusError::MixedTimestamps { .. }));
        let text = record("u1", r#"[{"text":"a","start_ms":0}]"#);
        let err = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, CorpusError::MixedTimestamps { .. }));
    }

    #[test]
    fn rejects_duplicate_ids_with_line() {
        let text = format!(
            "{}\n\n{}\n",
            record("u1", r#"[{"text":"a"}]"#),
            record("u1", r#"[{"text":"b"}]"#)
        );
        let err = Corpus::parse_jsonl(&text, NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 3, .. }));
    }

    #[test]
    fn malformed_record_names_field() {
        let text = r#"{"utterance_id":"u1","dialogue_id":"d","unit_kind":"word","units":[{"text":"a","start_ms":"x"}],"history":[],"gold_response":"","reference_responses":[]}"#;
        let err = Corpus::parse_jsonl(text, NormalizationPolicy::none()).unwrap_err();
        match err {
            CorpusError::Malformed { line, field, .. } => {
                assert_eq!(line, 1);
                assert!(field.contains("start_ms"), "{field}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = Corpus::parse_jsonl(r#"{"utterance_id":"u1"}"#, NormalizationPolicy::none())
            .unwrap_err();
        assert!(err.to_string().contains("dialogue_id"), "{err}");
    }

    #[test]
    fn diagnose_reports_every_bad_line() {
        let text = format!(
            "{}\n{}\n{}\n",
            record("u1", r#"[{"text":"a","start_ms":9,"end_ms":1}]"#),
            record("u2", r#"[{"text":"b"}]"#),
            record("u2", r#"[{"text":"c"}]"#)
        );
        let errs = Corpus::diagnose_jsonl(&text, &NormalizationPolicy::none());
        let lines: Vec<_> = errs.iter().map(|e| e.line()).collect();
        assert_eq!(lines, [Some(1), Some(3)]);
    }

    #[test]
    fn rejects_long_history() {
        let text = r#"{"utterance_id":"u1","dialogue_id":"d","unit_kind":"word","units":[{"text":"a"}],"history":["1","2","3","4","5"],"gold_response":"","reference_responses":[]}"#;
        let err = Corpus::parse_jsonl(text, NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { ref field, .. } if field == "history"));
    }

    #[test]
    fn empty_punctuation_set_rejected_when_stripping() {
        let mut policy = NormalizationPolicy::spoken();
        policy.punctuation_set.clear();
        assert!(Corpus::parse_jsonl("", policy).is_err());
    }

    #[test]
    fn prefixes_of_word_utterance() {
        let u = TimedUtterance::from_text("u", UnitKind::Word, "what is the weather", vec![]);
        let steps: Vec<_> = u
            .enumerate_prefixes()
            .into_iter()
            .map(|p| (p.step, p.partial))
            .collect();
        assert_eq!(
            steps,
            [
                (1, "what".to_string()),
                (2, "what is".to_string()),
                (3, "what is the".to_string())
            ]
        );
    }

    #[test]
    fn prefixes_of_degenerate_and_character_utterances() {
        let u = TimedUtterance::from_text("u", UnitKind::Word, "yes", vec![]);
        assert!(u.enumerate_prefixes().is_empty());
        let u = TimedUtterance::from_text("u", UnitKind::Character, "abc", vec![]);
        let steps: Vec<_> = u.enumerate_prefixes().into_iter().map(|p| p.partial).collect();
        assert_eq!(steps, ["a", "ab"]);
    }

    #[test]
    fn eos_time_cases() {
        let mut u = TimedUtterance::from_text("u", UnitKind::Word, "a b", vec![]);
        assert_eq!(u.eos_time(), None);
        u.units = vec![TimedUnit::timed("a", 0, 900), TimedUnit::timed("b", 1000, 2350)];
        assert_eq!(u.eos_time(), Some(2350));
        u.units = vec![TimedUnit::timed("a", 0, 400)];
        assert_eq!(u.eos_time(), Some(400));
    }

    #[test]
    fn punctuation_only_units_are_dropped() {
        let text = record("u1", r#"[{"text":"okay"},{"text":","},{"text":"fine"}]"#);
        let corpus = Corpus::parse_jsonl(&text, NormalizationPolicy::spoken()).unwrap();
        assert_eq!(corpus.utterances[0].full_text(), "okay fine");
    }

    #[test]
    fn reserialization_round_trips() {
        let text = format!(
            "{}\n{}\n",
            record("u1", r#"[{"text":"Hi,","start_ms":0,"end_ms":200},{"text":"There","start_ms":250,"end_ms":600}]"#),
            record("u2", r#"[{"text":"Bye."}]"#)
        );
        let policy = NormalizationPolicy::spoken();
        let once = Corpus::parse_jsonl(&text, policy.clone()).unwrap().to_jsonl();
        let twice = Corpus::parse_jsonl(&once, policy).unwrap().to_jsonl();
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}", strip: bool, fold: bool) {
            let policy = NormalizationPolicy {
                strip_punctuation: strip,
                case_fold: fold,
                punctuation_set: NormalizationPolicy::default_punctuation(),
            };
            let once = policy.normalize(&s);
            prop_assert_eq!(policy.normalize(&once), once);
        }

        #[test]
        fn prefix_count_and_strictness(words in proptest::collection::vec("[a-z]{1,6}", 1..12)) {
            let u = TimedUtterance::from_text("u", UnitKind::Word, &words.join(" "), vec![]);
            let full = u.full_text();
            let steps = u.enumerate_prefixes();
            prop_assert_eq!(steps.len(), words.len() - 1);
            for (i, p) in steps.iter().enumerate() {
                prop_assert_eq!(p.step, i + 1);
                prop_assert!(full.starts_with(&p.partial));
                prop_assert!(p.partial.len() < full.len());
            }
        }
    }
}
