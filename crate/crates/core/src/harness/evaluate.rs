//! Scoring predictions against a gold split and writing metric reports.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::harness::predict::Prediction;
use crate::metrics::{gold_pairs, mabsa_prf, masc_scores, mate_prf, PredictionPair, TermMatch, TermMention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mate,
    Masc,
    Mabsa,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub total: usize,
    pub correct: usize,
}

/// One row of the metrics file. For `masc`, `f1` is the macro F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub task: Task,
    pub split: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub acc: Option<f64>,
    pub counts: Counts,
    pub config_hash: String,
    pub git_describe: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let rates = [Some(self.f1), self.precision, self.recall, self.acc];
        if rates.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Invariant {
                id: format!("{:?}/{}", self.task, self.split),
                message: "rate outside [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn check_ids<'a>(ids: impl Iterator<Item = &'a str>, gold: &DatasetSplit) -> Result<()> {
    let known: HashSet<&str> = gold.samples.iter().map(|s| s.id.as_str()).collect();
    for id in ids {
        if !known.contains(id) {
            return Err(Error::SplitMismatch(format!(
                "prediction for `{id}` which is not in the {} split",
                gold.name.as_str()
            )));
        }
    }
    Ok(())
}

/// Pair and term scores of end-to-end predictions.
pub fn evaluate_pairs(
    pred: &[PredictionPair],
    gold: &DatasetSplit,
    mode: TermMatch,
    config_hash: &str,
) -> Result<Vec<MetricsReport>> {
    check_ids(pred.iter().map(|p| p.sample_id.as_str()), gold)?;
    let gold_p = gold_pairs(gold);
    let describe = git_describe();
    let report = |task, prf: crate::metrics::Prf| MetricsReport {
        task,
        split: gold.name.as_str().into(),
        precision: Some(prf.precision),
        recall: Some(prf.recall),
        f1: prf.f1,
        acc: None,
        counts: Counts {
            tp: prf.tp,
            fp: prf.fp,
            fn_: prf.fn_,
            ..Default::default()
        },
        config_hash: config_hash.into(),
        git_describe: describe.clone(),
    };
    let terms = |v: &[PredictionPair]| v.iter().map(TermMention::from).collect::<Vec<_>>();
    Ok(vec![
        report(Task::Mabsa, mabsa_prf(pred, &gold_p, mode)),
        report(Task::Mate, mate_prf(&terms(pred), &terms(&gold_p), mode)),
    ])
}

/// Classification scores over predictions made on the gold aspects, in
/// gold order.
pub fn evaluate_masc(pred: &[Prediction], gold: &DatasetSplit, config_hash: &str) -> Result<MetricsReport> {
    let gold_p = gold_pairs(gold);
    if pred.len() != gold_p.len() {
        return Err(Error::SplitMismatch(format!(
            "{} classifications for {} gold aspects",
            pred.len(),
            gold_p.len()
        )));
    }
    if let Some((p, g)) = pred
        .iter()
        .zip(&gold_p)
        .find(|(p, g)| p.sample_id != g.sample_id || p.term != g.term)
    {
        return Err(Error::SplitMismatch(format!(
            "classification of `{}` in `{}` where gold has `{}` in `{}`",
            p.term, p.sample_id, g.term, g.sample_id
        )));
    }
    let labels: Vec<_> = pred.iter().map(|p| p.polarity).collect();
    let truth: Vec<_> = gold_p.iter().map(|g| g.polarity).collect();
    let s = masc_scores(&labels, &truth)?;
    Ok(MetricsReport {
        task: Task::Masc,
        split: gold.name.as_str().into(),
        precision: None,
        recall: None,
        f1: s.macro_f1,
        acc: Some(s.accuracy),
        counts: Counts {
            total: s.total,
            correct: s.correct,
            ..Default::default()
        },
        config_hash: config_hash.into(),
        git_describe: git_describe(),
    })
}

pub fn write_reports(reports: &[MetricsReport], path: &Path) -> Result<()> {
    for r in reports {
        r.validate()?;
    }
    let json = serde_json::to_string_pretty(reports)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let reports: Vec<MetricsReport> = serde_json::from_str(&raw)?;
    for r in &reports {
        r.validate()?;
    }
    Ok(reports)
}
