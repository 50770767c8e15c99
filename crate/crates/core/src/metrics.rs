//! Exact-match scoring for pair extraction, term extraction and polarity
//! classification.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Polarity};
use crate::error::{Error, Result};
use crate::supervision::canonicalize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionPair {
    pub sample_id: String,
    pub term: String,
    pub polarity: Polarity,
}

/// Aspect term occurrence without polarity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermMention {
    pub sample_id: String,
    pub term: String,
}

impl From<&PredictionPair> for TermMention {
    fn from(p: &PredictionPair) -> Self {
        Self {
            sample_id: p.sample_id.clone(),
            term: p.term.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermMatch {
    /// Raw string equality.
    #[default]
    Strict,
    /// Equality after lowercasing and stripping punctuation.
    Lenient,
}

impl TermMatch {
    fn key(self, term: &str) -> String {
        match self {
            TermMatch::Strict => term.to_string(),
            TermMatch::Lenient => canonicalize(term),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Rates from counts; every undefined ratio is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

fn prf_over<T: Eq + std::hash::Hash>(pred: HashSet<T>, gold: HashSet<T>) -> Prf {
    let tp = pred.intersection(&gold).count();
    Prf::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

/// Micro P/R/F1 over `(sample, term, polarity)` triples, duplicates removed.
pub fn mabsa_prf(pred: &[PredictionPair], gold: &[PredictionPair], mode: TermMatch) -> Prf {
    let key = |p: &PredictionPair| (p.sample_id.clone(), mode.key(&p.term), p.polarity);
    prf_over(pred.iter().map(key).collect(), gold.iter().map(key).collect())
}

/// Micro P/R/F1 over `(sample, term)` pairs.
pub fn mate_prf(pred: &[TermMention], gold: &[TermMention], mode: TermMatch) -> Prf {
    let key = |t: &TermMention| (t.sample_id.clone(), mode.key(&t.term));
    prf_over(pred.iter().map(key).collect(), gold.iter().map(key).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MascScores {
    pub accuracy: f64,
    /// Unweighted mean F1 over the classes present in gold or predictions.
    pub macro_f1: f64,
    pub total: usize,
    pub correct: usize,
}

pub fn masc_scores(pred: &[Polarity], gold: &[Polarity]) -> Result<MascScores> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    let total = gold.len();
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    let mut f1s = Vec::new();
    for class in Polarity::ALL {
        let tp = pred.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count();
        let n_pred = pred.iter().filter(|p| **p == class).count();
        let n_gold = gold.iter().filter(|g| **g == class).count();
        if n_pred == 0 && n_gold == 0 {
            continue;
        }
        f1s.push(Prf::from_counts(tp, n_pred - tp, n_gold - tp).f1);
    }
    Ok(MascScores {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        macro_f1: if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 },
        total,
        correct,
    })
}

/// Gold pairs of a split.
pub fn gold_pairs(split: &DatasetSplit) -> Vec<PredictionPair> {
    split
        .samples
        .iter()
        .flat_map(|s| {
            s.annotations.iter().map(|a| PredictionPair {
                sample_id: s.id.clone(),
                term: a.term.clone(),
                polarity: a.polarity,
            })
        })
        .collect()
}
