//! Sentence-pair similarity scorers, ROUGE-1 and label generation.

mod labels;
mod rouge;

pub use labels::{label_tag, make_labels, LabelError, LabelKind, LabelRow};
pub use rouge::rouge1_f1;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NormalizationPolicy;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file line {line}: {message}")]
    MalformedEmbedding { line: usize, message: String },
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("invalid scorer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Exact,
    TokenCosine,
    CharNgramCosine,
    EmbeddingFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub ngram_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
}

impl ScorerConfig {
    pub fn of_kind(kind: ScorerKind) -> Self {
        ScorerConfig {
            kind,
            ngram_order: 3,
            embedding_path: None,
        }
    }

    pub fn embedding_file(path: impl Into<PathBuf>) -> Self {
        ScorerConfig {
            kind: ScorerKind::EmbeddingFile,
            ngram_order: 3,
            embedding_path: Some(path.into()),
        }
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        if self.ngram_order == 0 {
            return Err(SimilarityError::Config("ngram_order must be positive".into()));
        }
        match (self.kind, &self.embedding_path) {
            (ScorerKind::EmbeddingFile, None) => Err(SimilarityError::Config(
                "embedding_file scorer needs an embedding path".into(),
            )),
            (ScorerKind::EmbeddingFile, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(SimilarityError::Config(
                "embedding path given for a scorer that does not use it".into(),
            )),
        }
    }
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self::of_kind(ScorerKind::TokenCosine)
    }
}

/// Precomputed sentence vectors, unit-normalized on load.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    key: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    /// Parses JSONL `{key, vector}` rows. Keys are passed through `policy`
    /// so they match normalized corpus text.
    pub fn parse(text: &str, policy: &NormalizationPolicy) -> Result<Self, SimilarityError> {
        let mut table = EmbeddingTable::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let bad = |message: String| SimilarityError::MalformedEmbedding { line, message };
            let row: EmbeddingRow = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
            table.insert(policy.normalize(&row.key), row.vector).map_err(bad)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, policy: &NormalizationPolicy) -> Result<Self, SimilarityError> {
        let text = fs::read_to_string(path).map_err(|source| SimilarityError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, policy)
    }

    pub fn insert(&mut self, key: String, mut vector: Vec<f64>) -> Result<(), String> {
        if vector.is_empty() {
            return Err("empty vector".into());
        }
        if self.dim != 0 && vector.len() != self.dim {
            return Err(format!(
                "dimension {} differs from {}",
                vector.len(),
                self.dim
            ));
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(format!("vector for {key:?} has zero or non-finite norm"));
        }
        vector.iter_mut().for_each(|x| *x /= norm);
        if self.vectors.contains_key(&key) {
            return Err(format!("duplicate key {key:?}"));
        }
        self.dim = vector.len();
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f64], SimilarityError> {
        self.vectors
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| SimilarityError::MissingEmbedding(key.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A configured similarity function over normalized strings, valued in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScorerConfig,
    embeddings: Option<EmbeddingTable>,
}

impl Scorer {
    /// Builds a scorer; the embedding file, if any, is loaded with keys
    /// normalized by `policy`.
    pub fn new(config: ScorerConfig, policy: &NormalizationPolicy) -> Result<Self, SimilarityError> {
        config.validate()?;
        let embeddings = match &config.embedding_path {
            Some(path) => Some(EmbeddingTable::load(path, policy)?),
            None => None,
        };
        Ok(Scorer { config, embeddings })
    }

    pub fn with_embeddings(table: EmbeddingTable) -> Self {
        Scorer {
            config: ScorerConfig::embedding_file(PathBuf::new()),
            embeddings: Some(table),
        }
    }

    pub fn of_kind(kind: ScorerKind) -> Self {
        assert_ne!(kind, ScorerKind::EmbeddingFile, "embedding scorer needs a table");
        Scorer {
            config: ScorerConfig::of_kind(kind),
            embeddings: None,
        }
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        match (a.is_empty(), b.is_empty()) {
            (true, true) => return Ok(1.0),
            (true, false) | (false, true) => return Ok(0.0),
            _ => {}
        }
        let s = match self.config.kind {
            ScorerKind::Exact => f64::from(u8::from(a == b)),
            ScorerKind::TokenCosine => {
                if a == b {
                    1.0
                } else {
                    count_cosine(&counts(a.split_whitespace()), &counts(b.split_whitespace()))
                }
            }
            ScorerKind::CharNgramCosine => {
                if a == b {
                    1.0
                } else {
                    let n = self.config.ngram_order;
                    count_cosine(&char_ngrams(a, n), &char_ngrams(b, n))
                }
            }
            ScorerKind::EmbeddingFile => {
                let table = self.embeddings.as_ref().expect("embedding scorer has a table");
                let (va, vb) = (table.get(a)?, table.get(b)?);
                if a == b {
                    1.0
                } else {
                    let c: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                    (c + 1.0) / 2.0
                }
            }
        };
        Ok(s.clamp(0.0, 1.0))
    }
}

pub(crate) fn counts<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> BTreeMap<&'a str, u64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

fn char_ngrams(s: &str, n: usize) -> BTreeMap<String, u64> {
    let chars: Vec<char> = s.chars().collect();
    let mut m = BTreeMap::new();
    if chars.len() <= n {
        m.insert(s.to_owned(), 1);
        return m;
    }
    for w in chars.windows(n) {
        *m.entry(w.iter().collect()).or_insert(0) += 1;
    }
    m
}

/// Cosine of two count vectors. Integer dot products and norms keep the
/// result exactly symmetric.
pub(crate) fn count_cosine<K: Ord>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> f64 {
    let dot: u64 = a
        .iter()
        .filter_map(|(k, x)| b.get(k).map(|y| x * y))
        .sum();
    if dot == 0 {
        return 0.0;
    }
    let na: u64 = a.values().map(|x| x * x).sum();
    let nb: u64 = b.values().map(|x| x * x).sum();
    dot as f64 / ((na as f64) * (nb as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn token_cosine_of_extended_question() {
        let s = Scorer::of_kind(ScorerKind::TokenCosine);
        let v = s
            .score("what is the weather", "what is the weather like today")
            .unwrap();
        assert!((v - 4.0 / (2.0 * 6f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn exact_and_disjoint() {
        assert_eq!(Scorer::of_kind(ScorerKind::Exact).score("a b", "a b").unwrap(), 1.0);
        assert_eq!(Scorer::of_kind(ScorerKind::Exact).score("a b", "a c").unwrap(), 0.0);
        assert_eq!(Scorer::of_kind(ScorerKind::TokenCosine).score("red", "blue").unwrap(), 0.0);
    }

    #[test]
    fn empty_strings() {
        for kind in [ScorerKind::Exact, ScorerKind::TokenCosine, ScorerKind::CharNgramCosine] {
            let s = Scorer::of_kind(kind);
            assert_eq!(s.score("", "").unwrap(), 1.0);
            assert_eq!(s.score("", "x").unwrap(), 0.0);
            assert_eq!(s.score("x", "").unwrap(), 0.0);
        }
    }

    #[test]
    fn char_ngram_cosine_counts_trigrams() {
        let s = Scorer::of_kind(ScorerKind::CharNgramCosine);
        // "abcd": abc, bcd ; "abce": abc, bce
        assert!((s.score("abcd", "abce").unwrap() - 0.5).abs() < 1e-15);
        // shorter than n: whole string is the only gram
        assert_eq!(s.score("ab", "ab").unwrap(), 1.0);
        assert_eq!(s.score("ab", "ba").unwrap(), 0.0);
    }

    #[test]
    fn embedding_scorer_maps_cosine_to_unit_interval() {
        let text = "{\"key\":\"Yes.\",\"vector\":[2.0,0.0]}\n{\"key\":\"no\",\"vector\":[-1.0,0.0]}\n{\"key\":\"maybe\",\"vector\":[0.0,3.0]}\n";
        let table = EmbeddingTable::parse(text, &NormalizationPolicy::spoken()).unwrap();
        let s = Scorer::with_embeddings(table);
        assert_eq!(s.score("yes", "no").unwrap(), 0.0);
        assert_eq!(s.score("yes", "maybe").unwrap(), 0.5);
        assert_eq!(s.score("maybe", "maybe").unwrap(), 1.0);
        assert!(matches!(
            s.score("yes", "unknown"),
            Err(SimilarityError::MissingEmbedding(k)) if k == "unknown"
        ));
    }

    #[test]
    fn embedding_file_rejects_dimension_mismatch() {
        let text = "{\"key\":\"a\",\"vector\":[1.0,0.0]}\n{\"key\":\"b\",\"vector\":[1.0]}\n";
        let err = EmbeddingTable::parse(text, &NormalizationPolicy::none()).unwrap_err();
        assert!(matches!(err, SimilarityError::MalformedEmbedding { line: 2, .. }));
    }

    #[test]
    fn config_requires_path_iff_embedding() {
        assert!(ScorerConfig::of_kind(ScorerKind::EmbeddingFile).validate().is_err());
        let mut c = ScorerConfig::of_kind(ScorerKind::Exact);
        c.embedding_path = Some("x".into());
        assert!(c.validate().is_err());
        assert!(ScorerConfig::embedding_file("x").validate().is_ok());
    }

    proptest! {
        #[test]
        fn scores_symmetric_bounded_and_reflexive(
            a in "[a-d ]{0,16}", b in "[a-d ]{0,16}", n in 1usize..5
        ) {
            let a = a.split_whitespace().collect::<Vec<_>>().join(" ");
            let b = b.split_whitespace().collect::<Vec<_>>().join(" ");
            for kind in [ScorerKind::Exact, ScorerKind::TokenCosine, ScorerKind::CharNgramCosine] {
                let mut cfg = ScorerConfig::of_kind(kind);
                cfg.ngram_order = n;
                let s = Scorer::new(cfg, &NormalizationPolicy::none()).unwrap();
                let ab = s.score(&a, &b).unwrap();
                prop_assert_eq!(ab, s.score(&b, &a).unwrap());
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(s.score(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn embedding_scores_symmetric(
            va in proptest::collection::vec(-1.0f64..1.0, 4),
            vb in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            prop_assume!(va.iter().any(|x| x.abs() > 1e-3) && vb.iter().any(|x| x.abs() > 1e-3));
            let mut t = EmbeddingTable::default();
            t.insert("a".into(), va).unwrap();
            t.insert("b".into(), vb).unwrap();
            let s = Scorer::with_embeddings(t);
            let ab = s.score("a", "b").unwrap();
            prop_assert_eq!(ab, s.score("b", "a").unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
