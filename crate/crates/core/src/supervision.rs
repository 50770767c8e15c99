//! Turns aspect predictions into classifier training triples by fuzzy
//! matching them against the gold aspect/polarity pairs, plus an optional
//! part-of-speech filter over predicted aspects.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingTriple {
    /// `None` when extraction found nothing and the whole sentence is classified.
    pub aspect: Option<String>,
    pub sentence: String,
    pub polarity: Polarity,
    /// Post the triple came from; used to look up its image.
    pub sample_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Canonicalization {
    /// Lowercase, drop non-alphanumerics, collapse whitespace.
    LowerAlnum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub threshold: f64,
    pub canonicalization: Canonicalization,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            canonicalization: Canonicalization::LowerAlnum,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "matcher threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

pub fn canonicalize(s: &str) -> String {
    s.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalised edit similarity `1 - lev / max_len` on canonical forms.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (ca, cb) = (canonicalize(a), canonicalize(b));
    if ca.is_empty() && cb.is_empty() {
        return if a.is_empty() && b.is_empty() { 1.0 } else { 0.0 };
    }
    if ca == cb {
        return 1.0;
    }
    strsim::normalized_levenshtein(&ca, &cb)
}

/// Builds one triple per predicted aspect, or one sentence-level triple for
/// a sample with no predictions.
///
/// Each predicted aspect takes the polarity of its most similar gold pair
/// (first one on ties) if that similarity exceeds the threshold, otherwise
/// the polarity of the sample's first gold pair. Samples without gold pairs
/// are skipped.
pub fn attach_labels(
    predictions: &[Vec<String>],
    gold: &[Vec<(String, Polarity)>],
    sentences: &[String],
    sample_ids: &[String],
    cfg: &MatcherConfig,
) -> Result<Vec<TrainingTriple>> {
    cfg.validate()?;
    let n = predictions.len();
    for len in [gold.len(), sentences.len(), sample_ids.len()] {
        if len != n {
            return Err(Error::LengthMismatch { left: n, right: len });
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (preds, pairs, sentence) = (&predictions[i], &gold[i], &sentences[i]);
        let Some(first) = pairs.first() else {
            warn!(sample = %sample_ids[i], "no gold aspects; sample skipped");
            continue;
        };
        let triple = |aspect: Option<String>, polarity| TrainingTriple {
            aspect,
            sentence: sentence.clone(),
            polarity,
            sample_id: sample_ids[i].clone(),
        };
        if preds.is_empty() {
            out.push(triple(None, first.1));
            continue;
        }
        for pred in preds {
            let mut best_score = 0.0;
            let mut best_polarity = None;
            for (term, polarity) in pairs {
                let score = similarity(pred, term);
                if score > best_score {
                    best_score = score;
                    best_polarity = Some(*polarity);
                }
            }
            let polarity = match best_polarity {
                Some(p) if best_score > cfg.threshold => p,
                _ => first.1,
            };
            out.push(triple(Some(pred.clone()), polarity));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Adj,
    Verb,
    Other,
}

/// Word-level part-of-speech oracle, e.g. a wrapper around an external tagger.
pub trait PosPredicate {
    fn tag(&self, word: &str) -> std::result::Result<PosTag, String>;
}

/// Word → tag table; unknown words are nouns.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    pub entries: HashMap<String, PosTag>,
}

impl LexiconTagger {
    /// Small built-in lexicon of common non-noun words.
    pub fn stub() -> Self {
        let mut entries = HashMap::new();
        for w in ["beautiful", "great", "good", "bad", "terrible", "happy", "sad", "amazing", "awful", "new", "best"] {
            entries.insert(w.to_string(), PosTag::Adj);
        }
        for w in ["is", "was", "wins", "scores", "loses", "love", "hate", "celebrates", "misses"] {
            entries.insert(w.to_string(), PosTag::Verb);
        }
        for w in ["the", "a", "an", "and", "of", "at", "in", "on", "with", "for", "to", "very"] {
            entries.insert(w.to_string(), PosTag::Other);
        }
        Self { entries }
    }
}

impl PosPredicate for LexiconTagger {
    fn tag(&self, word: &str) -> std::result::Result<PosTag, String> {
        Ok(self
            .entries
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(PosTag::Noun))
    }
}

/// Keeps aspects whose last word is a noun or proper noun. With no
/// predicate every aspect is kept. A predicate error keeps the aspect.
pub fn noun_filter(aspects: &[String], predicate: Option<&dyn PosPredicate>) -> Vec<String> {
    let Some(predicate) = predicate else {
        return aspects.to_vec();
    };
    aspects
        .iter()
        .filter(|aspect| {
            let Some(head) = aspect.split_whitespace().last() else {
                return false;
            };
            match predicate.tag(head) {
                Ok(tag) => matches!(tag, PosTag::Noun | PosTag::Propn),
                Err(e) => {
                    warn!(aspect = %aspect, error = %e, "part-of-speech lookup failed; keeping aspect");
                    true
                }
            }
        })
        .cloned()
        .collect()
}
