//! Inference: extract aspects, then classify each one.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Params;
use crate::corpus::{DatasetSplit, Polarity, Sample};
use crate::encoders::{encode_text, TEXT_PREFIX};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, Stage};
use crate::harness::config::RunConfig;
use crate::harness::data::SampleImages;
use crate::masc::{classify_aspect, MascInput};
use crate::mate::{decode_spans, spans_to_terms, tag_tokens};
use crate::metrics::PredictionPair;
use crate::supervision::{noun_filter, PosPredicate};
use crate::token_align::tokenize_with_alignment;

/// One classified aspect with its class probabilities (negative, neutral, positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub term: String,
    pub polarity: Polarity,
    pub probs: [f64; 3],
}

impl Prediction {
    pub fn pair(&self) -> PredictionPair {
        PredictionPair {
            sample_id: self.sample_id.clone(),
            term: self.term.clone(),
            polarity: self.polarity,
        }
    }
}

pub fn extract_sample_terms(params: &Params, cfg: &RunConfig, sample: &Sample) -> Result<Vec<String>> {
    let align = tokenize_with_alignment(&cfg.encoder.tokenizer(), &sample.text, cfg.max_text_length)?;
    let feats = encode_text(params, &cfg.encoder, &align)?;
    let logits = tag_tokens(params, &feats.tokens, &align)?;
    let spans = decode_spans(&logits.argmax_tags(), &align.word_ids)?;
    spans_to_terms(&spans, sample)
}

/// Extracted aspect terms per sample, in sample order.
pub fn extract_terms(params: &Params, cfg: &RunConfig, split: &DatasetSplit) -> Result<Vec<Vec<String>>> {
    split
        .samples
        .par_iter()
        .map(|s| extract_sample_terms(params, cfg, s))
        .collect()
}

/// Classifies every gold aspect of a split, in gold order.
pub fn classify_gold_aspects(
    params: &Params,
    cfg: &RunConfig,
    split: &DatasetSplit,
    images: &SampleImages,
) -> Result<Vec<Prediction>> {
    let jobs: Vec<(&Sample, &str)> = split
        .samples
        .iter()
        .flat_map(|s| s.annotations.iter().map(move |a| (s, a.term.as_str())))
        .collect();
    classify_jobs(params, cfg, &jobs, images)
}

fn classify_jobs(
    params: &Params,
    cfg: &RunConfig,
    jobs: &[(&Sample, &str)],
    images: &SampleImages,
) -> Result<Vec<Prediction>> {
    let opts = cfg.masc_options();
    jobs.par_iter()
        .map(|(sample, term)| {
            let input = MascInput {
                sentence: &sample.text,
                aspect: Some(term),
                image: images.get(&sample.id),
                sample_id: &sample.id,
            };
            let p = classify_aspect(params, &opts, &input)?;
            Ok(Prediction {
                sample_id: sample.id.clone(),
                term: term.to_string(),
                polarity: p.label,
                probs: p.probs,
            })
        })
        .collect()
}

/// Tagger parameters used at inference. With a shared encoder the tagging
/// head runs on the classifier's text encoder.
pub fn tagger_params(mate: &Checkpoint, masc: &Checkpoint) -> Params {
    let mut params = mate.params.clone();
    if masc.config.ablations.shared_encoder {
        params.copy_prefix_from(&masc.params, &format!("{TEXT_PREFIX}."));
    }
    params
}

/// Full two-stage prediction over a split.
pub fn predict_pairs(
    mate: &Checkpoint,
    masc: &Checkpoint,
    split: &DatasetSplit,
    images: &SampleImages,
    pos: Option<&dyn PosPredicate>,
) -> Result<Vec<Prediction>> {
    mate.expect_stage(Stage::Mate)?;
    masc.expect_stage(Stage::Masc)?;
    let tagger = tagger_params(mate, masc);
    let mut terms = extract_terms(&tagger, &mate.config, split)?;
    if masc.config.noun_filter {
        for t in &mut terms {
            *t = noun_filter(t, pos);
        }
    }
    let jobs: Vec<(&Sample, &str)> = split
        .samples
        .iter()
        .zip(&terms)
        .flat_map(|(s, ts)| ts.iter().map(move |t| (s, t.as_str())))
        .collect();
    classify_jobs(&masc.params, &masc.config, &jobs, images)
}

pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
