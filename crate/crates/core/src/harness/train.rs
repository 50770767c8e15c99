//! Mini-batch training loops for both stages.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use tracing::{debug, info};

use crate::autograd::{Gradients, Graph, Params};
use crate::corpus::{word_tags, DatasetSplit};
use crate::encoders::{init_image_encoder, init_text_encoder, text_forward, IMAGE_PREFIX, TEXT_PREFIX};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, Stage};
use crate::harness::config::RunConfig;
use crate::harness::data::SampleImages;
use crate::harness::optim::{AdamW, LinearSchedule};
use crate::harness::predict;
use crate::masc::{init_masc_heads, masc_loss, MascInput, TBA_PREFIX};
use crate::mate::{init_tagger, label_loss_graph, tagger_forward, Tag};
use crate::metrics::{mate_prf, TermMention};
use crate::seeded_rng;
use crate::supervision::{attach_labels, noun_filter, PosPredicate, TrainingTriple};
use crate::token_align::{project_word_tags, tokenize_with_alignment, TokenAlignment};

const MATE_INIT_STREAM: u64 = 0x3a7e;
const MASC_INIT_STREAM: u64 = 0x3a5c;
const SHUFFLE_STREAM: u64 = 0x5f1e;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Classification term alone (MASC only).
    pub sentiment: Option<f64>,
    /// Unweighted consistency term (MASC with the translation module).
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// Stop after this many completed epochs even if `epochs` is larger.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Checkpoint with the best dev metric (the last one without dev data).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub trace: Vec<StepRecord>,
    /// Mean batch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub trainable: BTreeSet<String>,
}

pub fn init_mate(cfg: &RunConfig) -> Result<Params> {
    cfg.validate()?;
    let mut params = Params::new();
    init_text_encoder(&cfg.encoder, &mut params)?;
    init_tagger(&mut seeded_rng(cfg.seed, MATE_INIT_STREAM), &mut params, cfg.encoder.hidden_size);
    Ok(params)
}

/// Fresh classifier parameters. With `shared_encoder` the text encoder is
/// taken from `mate`.
pub fn init_masc(cfg: &RunConfig, mate: Option<&Params>) -> Result<Params> {
    cfg.validate()?;
    let mut params = Params::new();
    init_text_encoder(&cfg.encoder, &mut params)?;
    init_image_encoder(&cfg.encoder, &mut params)?;
    if cfg.ablations.shared_encoder {
        if let Some(mate) = mate {
            params.copy_prefix_from(mate, &format!("{TEXT_PREFIX}."));
        }
    }
    let d = cfg.encoder.hidden_size;
    let mut rng = seeded_rng(cfg.seed, MASC_INIT_STREAM);
    init_masc_heads(&mut rng, &mut params, d, cfg.query_len, cfg.encoder.heads);
    Ok(params)
}

fn trainable_set(params: &Params, cfg: &RunConfig, excluded: &[&str]) -> BTreeSet<String> {
    let mut frozen: Vec<String> = excluded.iter().map(|p| format!("{p}.")).collect();
    if cfg.freeze_encoders {
        frozen.push(format!("{TEXT_PREFIX}."));
        frozen.push(format!("{IMAGE_PREFIX}."));
    }
    params
        .names()
        .filter(|n| !frozen.iter().any(|f| n.starts_with(f.as_str())))
        .map(str::to_string)
        .collect()
}

pub fn mate_trainable(params: &Params, cfg: &RunConfig) -> BTreeSet<String> {
    trainable_set(params, cfg, &[])
}

/// Without the translation module its tensors receive no updates.
pub fn masc_trainable(params: &Params, cfg: &RunConfig) -> BTreeSet<String> {
    if cfg.ablations.no_tba {
        trainable_set(params, cfg, &[TBA_PREFIX])
    } else {
        trainable_set(params, cfg, &[])
    }
}

/// Per-example loss and gradients.
struct ExampleLoss {
    grads: Gradients,
    loss: f64,
    sentiment: Option<f64>,
    consistency: Option<f64>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9), SHUFFLE_STREAM));
    order
}

#[allow(clippy::too_many_arguments)]
fn run_loop<E: Sync>(
    cfg: &RunConfig,
    stage: Stage,
    init: Params,
    examples: &[E],
    trainable: BTreeSet<String>,
    opts: TrainOptions,
    loss_fn: impl Fn(&Params, &E) -> Result<ExampleLoss> + Sync,
    dev_metric: impl Fn(&Params) -> Result<Option<f64>>,
) -> Result<TrainRun> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut ckpt = match opts.resume {
        Some(c) => {
            c.expect_stage(stage)?;
            c.expect_config(cfg)?;
            let mut c = c;
            c.config = cfg.clone();
            c
        }
        None => Checkpoint::new(stage, cfg, init),
    };
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.learning_rate, cfg.warmup_fraction, cfg.epochs * steps_per_epoch);
    let optimizer = AdamW::new(cfg.weight_decay);
    let mut best = ckpt.clone();
    let mut trace = Vec::new();
    let mut epoch_losses = Vec::new();
    let last_epoch = opts.stop_after_epoch.map_or(cfg.epochs, |s| s.min(cfg.epochs));

    for epoch in ckpt.epoch..last_epoch {
        let order = epoch_order(examples.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<ExampleLoss> = batch
                .par_iter()
                .map(|&i| loss_fn(&ckpt.params, &examples[i]))
                .collect::<Result<_>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut grads = Gradients::default();
            let (mut loss, mut sentiment, mut consistency) = (0.0, None::<f64>, None::<f64>);
            for r in &results {
                grads.accumulate(&r.grads, scale);
                loss += r.loss * scale;
                if let Some(s) = r.sentiment {
                    *sentiment.get_or_insert(0.0) += s * scale;
                }
                if let Some(c) = r.consistency {
                    *consistency.get_or_insert(0.0) += c * scale;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { step: ckpt.step, loss });
            }
            let lr = schedule.lr(ckpt.step);
            optimizer.step(&mut ckpt.params, &grads, &trainable, &mut ckpt.optimizer, lr);
            if !ckpt.params.all_finite() {
                return Err(Error::Diverged { step: ckpt.step, loss });
            }
            trace.push(StepRecord {
                epoch,
                step: ckpt.step,
                lr,
                loss,
                sentiment,
                consistency,
            });
            ckpt.step += 1;
            epoch_loss += loss;
            batches += 1;
        }
        ckpt.epoch = epoch + 1;
        let mean = epoch_loss / batches as f64;
        epoch_losses.push(mean);
        let metric = dev_metric(&ckpt.params)?;
        debug!(?stage, epoch = ckpt.epoch, loss = mean, ?metric, "epoch done");
        match metric {
            Some(m) => {
                let improved = best.best_metric.is_none_or(|b| m > b);
                ckpt.best_metric = Some(best.best_metric.map_or(m, |b| b.max(m)));
                if improved {
                    best = ckpt.clone();
                    best.best_metric = Some(m);
                }
            }
            None => best = ckpt.clone(),
        }
    }
    info!(?stage, epochs = ckpt.epoch, steps = ckpt.step, "training finished");
    Ok(TrainRun {
        best,
        last: ckpt,
        trace,
        epoch_losses,
        trainable,
    })
}

struct MateExample {
    align: TokenAlignment,
    gold: Vec<Option<Tag>>,
}

fn mate_examples(cfg: &RunConfig, split: &DatasetSplit) -> Result<Vec<MateExample>> {
    let tok = cfg.encoder.tokenizer();
    split
        .samples
        .iter()
        .map(|s| {
            let align = tokenize_with_alignment(&tok, &s.text, cfg.max_text_length)?;
            let gold = project_word_tags(&word_tags(s)?, &align)?;
            Ok(MateExample { align, gold })
        })
        .filter(|e: &Result<MateExample>| e.as_ref().map_or(true, |e| e.gold.iter().any(Option::is_some)))
        .collect()
}

/// Term-extraction F1 of `params` on a split.
pub fn mate_dev_f1(params: &Params, cfg: &RunConfig, split: &DatasetSplit) -> Result<f64> {
    let pred = predict::extract_terms(params, cfg, split)?;
    let pred: Vec<TermMention> = split
        .samples
        .iter()
        .zip(&pred)
        .flat_map(|(s, terms)| {
            terms.iter().map(|t| TermMention {
                sample_id: s.id.clone(),
                term: t.clone(),
            })
        })
        .collect();
    let gold: Vec<TermMention> = crate::metrics::gold_pairs(split).iter().map(TermMention::from).collect();
    Ok(mate_prf(&pred, &gold, cfg.term_match).f1)
}

pub fn train_mate(
    cfg: &RunConfig,
    train: &DatasetSplit,
    dev: Option<&DatasetSplit>,
    opts: TrainOptions,
) -> Result<TrainRun> {
    let init = init_mate(cfg)?;
    let trainable = mate_trainable(&init, cfg);
    let examples = mate_examples(cfg, train)?;
    run_loop(
        cfg,
        Stage::Mate,
        init,
        &examples,
        trainable,
        opts,
        |params, ex| {
            let mut g = Graph::new();
            let feats = text_forward(&mut g, params, &cfg.encoder, &ex.align)?;
            let logits = tagger_forward(&mut g, params, feats);
            let loss = label_loss_graph(&mut g, logits, &ex.gold)?;
            Ok(ExampleLoss {
                grads: g.backward(loss),
                loss: g.scalar(loss),
                sentiment: None,
                consistency: None,
            })
        },
        |params| dev.map(|d| mate_dev_f1(params, cfg, d)).transpose(),
    )
}

/// Classifier training triples: fuzzy-labelled MATE predictions on `train`,
/// optionally joined by the gold aspects. Duplicates are dropped, gold first.
pub fn build_masc_triples(
    cfg: &RunConfig,
    mate_params: &Params,
    train: &DatasetSplit,
    pos: Option<&dyn PosPredicate>,
) -> Result<Vec<TrainingTriple>> {
    let extracted = predict::extract_terms(mate_params, cfg, train)?;
    let filtered: Vec<Vec<String>> = if cfg.noun_filter {
        extracted.iter().map(|terms| noun_filter(terms, pos)).collect()
    } else {
        extracted
    };
    let gold: Vec<Vec<_>> = train
        .samples
        .iter()
        .map(|s| s.annotations.iter().map(|a| (a.term.clone(), a.polarity)).collect())
        .collect();
    let sentences: Vec<String> = train.samples.iter().map(|s| s.text.clone()).collect();
    let ids: Vec<String> = train.samples.iter().map(|s| s.id.clone()).collect();
    let matched = attach_labels(&filtered, &gold, &sentences, &ids, &cfg.matcher)?;

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let gold_triples = train.samples.iter().flat_map(|s| {
        s.annotations.iter().map(|a| TrainingTriple {
            aspect: Some(a.term.clone()),
            sentence: s.text.clone(),
            polarity: a.polarity,
            sample_id: s.id.clone(),
        })
    });
    let gold_triples: Vec<_> = if cfg.union_gold_triples { gold_triples.collect() } else { Vec::new() };
    for t in gold_triples.into_iter().chain(matched) {
        if seen.insert((t.sample_id.clone(), t.aspect.clone())) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Accuracy of the classifier on the gold aspects of a split.
pub fn masc_dev_accuracy(params: &Params, cfg: &RunConfig, split: &DatasetSplit, images: &SampleImages) -> Result<f64> {
    let pairs = predict::classify_gold_aspects(params, cfg, split, images)?;
    let gold = crate::metrics::gold_pairs(split);
    let correct = pairs.iter().zip(&gold).filter(|(p, g)| p.polarity == g.polarity).count();
    Ok(if gold.is_empty() { 0.0 } else { correct as f64 / gold.len() as f64 })
}

pub fn train_masc(
    cfg: &RunConfig,
    mate_params: &Params,
    train: &DatasetSplit,
    dev: Option<&DatasetSplit>,
    images: &SampleImages,
    pos: Option<&dyn PosPredicate>,
    opts: TrainOptions,
) -> Result<TrainRun> {
    let triples = build_masc_triples(cfg, mate_params, train, pos)?;
    train_masc_on_triples(cfg, mate_params, &triples, dev, images, opts)
}

pub fn train_masc_on_triples(
    cfg: &RunConfig,
    mate_params: &Params,
    triples: &[TrainingTriple],
    dev: Option<&DatasetSplit>,
    images: &SampleImages,
    opts: TrainOptions,
) -> Result<TrainRun> {
    let init = init_masc(cfg, Some(mate_params))?;
    let trainable = masc_trainable(&init, cfg);
    let masc_opts = cfg.masc_options();
    info!(triples = triples.len(), "training classifier");
    run_loop(
        cfg,
        Stage::Masc,
        init,
        triples,
        trainable,
        opts,
        |params, t| {
            let input = MascInput {
                sentence: &t.sentence,
                aspect: t.aspect.as_deref(),
                image: images.get(&t.sample_id),
                sample_id: &t.sample_id,
            };
            let mut g = Graph::new();
            let loss = masc_loss(&mut g, params, &masc_opts, &input, t.polarity, cfg.beta)?;
            Ok(ExampleLoss {
                grads: g.backward(loss.total),
                loss: g.scalar(loss.total),
                sentiment: Some(loss.sentiment),
                consistency: loss.consistency,
            })
        },
        |params| dev.map(|d| masc_dev_accuracy(params, cfg, d, images)).transpose(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::synthetic_fixture;

    fn toy_cfg() -> RunConfig {
        RunConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn shuffles_are_seeded_per_epoch() {
        assert_eq!(epoch_order(10, 1, 0), epoch_order(10, 1, 0));
        assert_ne!(epoch_order(10, 1, 0), epoch_order(10, 1, 1));
    }

    #[test]
    fn no_tba_freezes_exactly_the_translation_module() {
        let mut cfg = toy_cfg();
        let params = init_masc(&cfg, None).unwrap();
        let full = masc_trainable(&params, &cfg);
        cfg.ablations.no_tba = true;
        let ablated = masc_trainable(&params, &cfg);
        let removed: Vec<_> = full.difference(&ablated).cloned().collect();
        assert!(!removed.is_empty());
        assert!(removed.iter().all(|n| n.starts_with("tba.")));
        assert!(params.names().filter(|n| n.starts_with("tba.")).all(|n| !ablated.contains(n)));
    }

    #[test]
    fn freeze_drops_encoder_tensors() {
        let cfg = RunConfig {
            freeze_encoders: true,
            ..toy_cfg()
        };
        let params = init_masc(&cfg, None).unwrap();
        let t = masc_trainable(&params, &cfg);
        assert!(t.iter().all(|n| !n.starts_with("text.") && !n.starts_with("image.")));
        assert!(t.contains("classifier.w"));
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let cfg = RunConfig { epochs: 0, ..toy_cfg() };
        let run = train_mate(&cfg, &synthetic_fixture(), None, TrainOptions::default()).unwrap();
        assert_eq!(run.last.params, init_mate(&cfg).unwrap());
        assert!(run.trace.is_empty());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let cfg = toy_cfg();
        let empty = DatasetSplit::new(crate::corpus::SplitName::Train, vec![]);
        assert!(matches!(
            train_mate(&cfg, &empty, None, TrainOptions::default()),
            Err(Error::EmptyTrainingSet)
        ));
        let params = init_mate(&cfg).unwrap();
        assert!(matches!(
            train_masc_on_triples(&cfg, &params, &[], None, &SampleImages::new(), TrainOptions::default()),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn gold_triples_come_first_without_duplicates() {
        let cfg = toy_cfg();
        let split = synthetic_fixture();
        let params = init_mate(&cfg).unwrap();
        let triples = build_masc_triples(&cfg, &params, &split, None).unwrap();
        assert_eq!(triples[0].aspect.as_deref(), Some("Messi"));
        let keys: BTreeSet<_> = triples.iter().map(|t| (&t.sample_id, &t.aspect)).collect();
        assert_eq!(keys.len(), triples.len());
        assert!(triples.len() >= 22);
    }
}
