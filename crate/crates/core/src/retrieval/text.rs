//! Keyword-driven text retrieval over the knowledge snapshot and the class
//! prior derived from retrieved snippets.

use serde::Serialize;

use super::{Evidence, FusedPrediction, RetrievalError};
use crate::corpus::LabelVocabulary;
use crate::knowledge::SnapshotStore;
use crate::text::find_word;
use crate::Condition;

/// Class keyword table shipped with the crate.
pub const DEFAULT_KEYWORDS_JSON: &str = include_str!("../../data/class_keywords.json");

/// One retrieved summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KnowledgeSnippet {
    pub keyword: String,
    pub summary: String,
    /// Number of distinct query keywords found in the snippet.
    pub matches: usize,
}

/// Lowercased keywords per class, aligned with a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    keywords: Vec<Vec<String>>,
}

impl KeywordTable {
    pub fn new(vocabulary: &LabelVocabulary, mut entries: Vec<(String, Vec<String>)>) -> Result<Self, RetrievalError> {
        for (class, _) in &entries {
            if vocabulary.index_of(class).is_none() && !vocabulary.excluded().contains(class) {
                return Err(RetrievalError::BadKeywordTable(format!("unknown class `{class}`")));
            }
        }
        let mut keywords = Vec::with_capacity(vocabulary.len());
        for class in vocabulary.classes() {
            let pos = entries
                .iter()
                .position(|(c, _)| c == class)
                .ok_or_else(|| RetrievalError::MissingKeywords(class.clone()))?;
            let (_, list) = entries.swap_remove(pos);
            let mut list: Vec<String> =
                list.iter().map(|k| k.trim().to_lowercase()).filter(|k| !k.is_empty()).collect();
            list.dedup();
            if list.is_empty() {
                return Err(RetrievalError::MissingKeywords(class.clone()));
            }
            keywords.push(list);
        }
        Ok(Self { keywords })
    }

    /// Parse a JSON object `{ "<class>": ["kw", ...], ... }`.
    pub fn from_json(vocabulary: &LabelVocabulary, json: &str) -> Result<Self, RetrievalError> {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(json).map_err(|e| RetrievalError::BadKeywordTable(e.to_string()))?;
        let mut entries = Vec::with_capacity(map.len());
        for (class, value) in map {
            let list: Vec<String> = serde_json::from_value(value)
                .map_err(|e| RetrievalError::BadKeywordTable(format!("`{class}`: {e}")))?;
            entries.push((class, list));
        }
        Self::new(vocabulary, entries)
    }

    /// Bundled keywords for the classes they cover; any other class is
    /// keyed by its own name.
    pub fn default_for(vocabulary: &LabelVocabulary) -> Result<Self, RetrievalError> {
        let bundled: std::collections::BTreeMap<String, Vec<String>> =
            serde_json::from_str(DEFAULT_KEYWORDS_JSON).map_err(|e| RetrievalError::BadKeywordTable(e.to_string()))?;
        let entries = vocabulary
            .classes()
            .iter()
            .map(|c| (c.clone(), bundled.get(c).cloned().unwrap_or_else(|| vec![c.clone()])))
            .collect();
        Self::new(vocabulary, entries)
    }

    pub fn class_keywords(&self, class: usize) -> &[String] {
        &self.keywords[class]
    }

    pub fn num_classes(&self) -> usize {
        self.keywords.len()
    }
}

/// Snippets matching at least one query keyword, most matches first, ties by
/// keyword. A query keyword matches when it equals the snippet keyword or
/// occurs as a whole word, ignoring case, in the keyword or summary text.
pub fn retrieve_snippets<S: AsRef<str>>(
    store: &SnapshotStore,
    query: &[S],
) -> Result<Vec<KnowledgeSnippet>, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptySnapshot);
    }
    let mut terms: Vec<String> =
        query.iter().map(|q| q.as_ref().trim().to_lowercase()).filter(|q| !q.is_empty()).collect();
    terms.sort();
    terms.dedup();
    let mut hits: Vec<KnowledgeSnippet> = store
        .iter()
        .filter_map(|(keyword, entry)| {
            let haystack = format!("{keyword}\n{}", entry.summary.to_lowercase());
            let matches = terms.iter().filter(|t| find_word(&haystack, t).is_some()).count();
            (matches > 0).then(|| KnowledgeSnippet {
                keyword: keyword.to_string(),
                summary: entry.summary.clone(),
                matches,
            })
        })
        .collect();
    // stable: equal counts keep the store's keyword order
    hits.sort_by_key(|h| std::cmp::Reverse(h.matches));
    Ok(hits)
}

/// Per-class prior `1 + (number of the class's keywords present)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextPrior {
    pub weights: Vec<f64>,
}

impl ContextPrior {
    pub fn uniform(num_classes: usize) -> Self {
        Self { weights: vec![1.0; num_classes] }
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn text_prior(snippets: &[KnowledgeSnippet], table: &KeywordTable) -> ContextPrior {
    let text = snippets.iter().map(|s| s.summary.to_lowercase()).collect::<Vec<_>>().join("\n");
    let weights = (0..table.num_classes())
        .map(|c| 1.0 + table.class_keywords(c).iter().filter(|k| find_word(&text, k).is_some()).count() as f64)
        .collect();
    ContextPrior { weights }
}

/// `p_c * pi_c^tau`, renormalised. A zero exponent or a flat prior returns
/// `p` unchanged.
pub fn fuse_text(
    p: &[f64],
    prior: &ContextPrior,
    tau: f64,
    evidence: Evidence,
) -> Result<FusedPrediction, RetrievalError> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(RetrievalError::BadTau(tau));
    }
    if p.len() != prior.weights.len() {
        return Err(RetrievalError::LengthMismatch(p.len(), prior.weights.len()));
    }
    let probs = if tau == 0.0 || prior.is_uniform() {
        p.to_vec()
    } else {
        let raw: Vec<f64> = p.iter().zip(&prior.weights).map(|(a, w)| a * w.powf(tau)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    Ok(FusedPrediction { probs, source: Condition::TextRag, evidence })
}
