use std::path::{Path, PathBuf};

use mabsa_core::corpus::{load_canonical, DatasetSplit};
use mabsa_core::harness::checkpoint::Checkpoint;
use mabsa_core::harness::data::{synthetic_fixture, SampleImages};
use mabsa_core::harness::evaluate::{evaluate_masc, evaluate_pairs, Task};
use mabsa_core::harness::predict::{classify_gold_aspects, predict_pairs};
use mabsa_core::harness::train::{train_masc, train_mate, TrainOptions};
use mabsa_core::harness::RunConfig;
use mabsa_core::Error;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

fn fixture() -> (RunConfig, DatasetSplit, SampleImages) {
    let dir = fixture_dir();
    let cfg = RunConfig::load(&dir.join("toy.toml")).unwrap();
    let split = load_canonical(&dir.join("train.jsonl")).unwrap();
    let images = SampleImages::load(&[&split], &dir, &cfg.encoder).unwrap();
    (cfg, split, images)
}

#[test]
fn bundled_fixture_matches_generator() {
    let (_, split, images) = fixture();
    assert_eq!(split, synthetic_fixture());
    assert_eq!(images.len(), 20);
}

#[test]
fn mate_loss_falls_over_epochs() {
    let (cfg, split, _) = fixture();
    let cfg = RunConfig { epochs: 10, ..cfg };
    let run = train_mate(&cfg, &split, None, TrainOptions::default()).unwrap();
    assert_eq!(run.epoch_losses.len(), 10);
    assert!(run.epoch_losses[9] < 0.5 * run.epoch_losses[0], "{:?}", run.epoch_losses);
}

#[test]
fn resumed_training_is_bitwise_identical() {
    let (cfg, split, images) = fixture();
    let cfg = RunConfig { epochs: 4, ..cfg };
    let full = train_mate(&cfg, &split, None, TrainOptions::default()).unwrap();
    let half = train_mate(
        &cfg,
        &split,
        None,
        TrainOptions {
            stop_after_epoch: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mate.ckpt");
    half.last.save(&path).unwrap();
    let resumed = train_mate(
        &cfg,
        &split,
        None,
        TrainOptions {
            resume: Some(Checkpoint::load(&path).unwrap()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.last.params, full.last.params);
    assert_eq!(resumed.last.optimizer, full.last.optimizer);
    assert_eq!(resumed.last.step, full.last.step);
    assert_eq!(resumed.last.to_bytes(), full.last.to_bytes());

    let masc_full = train_masc(&cfg, &full.last.params, &split, None, &images, None, TrainOptions::default()).unwrap();
    let masc_half = train_masc(
        &cfg,
        &full.last.params,
        &split,
        None,
        &images,
        None,
        TrainOptions {
            stop_after_epoch: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let masc_resumed = train_masc(
        &cfg,
        &full.last.params,
        &split,
        None,
        &images,
        None,
        TrainOptions {
            resume: Some(masc_half.last),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(masc_resumed.last.to_bytes(), masc_full.last.to_bytes());
}

#[test]
fn resume_rejects_other_config_and_stage() {
    let (cfg, split, _) = fixture();
    let cfg = RunConfig { epochs: 1, ..cfg };
    let run = train_mate(&cfg, &split, None, TrainOptions::default()).unwrap();
    let other = RunConfig { beta: 0.25, ..cfg.clone() };
    let err = train_mate(
        &other,
        &split,
        None,
        TrainOptions {
            resume: Some(run.last.clone()),
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::ConfigHashMismatch { .. }));
    let images = SampleImages::new();
    let err = train_masc(
        &cfg,
        &run.last.params,
        &split,
        None,
        &images,
        None,
        TrainOptions {
            resume: Some(run.last.clone()),
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
}

#[test]
fn beta_changes_the_training_trajectory() {
    let (cfg, split, images) = fixture();
    let cfg = RunConfig { epochs: 3, ..cfg };
    let mate = train_mate(&cfg, &split, None, TrainOptions::default()).unwrap().last.params;
    let with = train_masc(&cfg, &mate, &split, None, &images, None, TrainOptions::default()).unwrap();
    let without_cfg = RunConfig { beta: 0.0, ..cfg };
    let without = train_masc(&without_cfg, &mate, &split, None, &images, None, TrainOptions::default()).unwrap();
    // identical first step, then the consistency gradient pulls them apart
    assert_eq!(with.trace[0].sentiment, without.trace[0].sentiment);
    assert_ne!(with.last.params, without.last.params);
    for r in &without.trace {
        assert_eq!(Some(r.loss), r.sentiment);
        assert!(r.consistency.is_some());
    }
    for r in &with.trace {
        let expected = r.sentiment.unwrap() + 0.5 * r.consistency.unwrap();
        assert!((r.loss - expected).abs() < 1e-12);
    }
}

#[test]
fn dev_selection_keeps_the_best_epoch() {
    let (cfg, split, _) = fixture();
    let cfg = RunConfig { epochs: 6, ..cfg };
    let run = train_mate(&cfg, &split, Some(&split), TrainOptions::default()).unwrap();
    let best = run.best.best_metric.unwrap();
    assert!(best >= run.last.best_metric.unwrap() - 1e-12);
    assert!(run.best.epoch <= run.last.epoch);
}

#[test]
fn end_to_end_on_the_fixture() {
    let (cfg, split, images) = fixture();
    let mate = train_mate(&cfg, &split, None, TrainOptions::default()).unwrap().last;
    let masc = train_masc(&cfg, &mate.params, &split, None, &images, None, TrainOptions::default())
        .unwrap()
        .last;
    let preds = predict_pairs(&mate, &masc, &split, &images, None).unwrap();
    assert_eq!(preds, predict_pairs(&mate, &masc, &split, &images, None).unwrap());
    let pairs: Vec<_> = preds.iter().map(|p| p.pair()).collect();
    let reports = evaluate_pairs(&pairs, &split, cfg.term_match, &cfg.config_hash()).unwrap();
    let mabsa = reports.iter().find(|r| r.task == Task::Mabsa).unwrap();
    assert!(mabsa.f1 >= 0.9, "{mabsa:?}");
    let gold = classify_gold_aspects(&masc.params, &cfg, &split, &images).unwrap();
    let r = evaluate_masc(&gold, &split, "h").unwrap();
    assert!(r.acc.unwrap() >= 0.95);
}

#[test]
fn no_image_replaces_the_image() {
    let (cfg, split, images) = fixture();
    let mate = train_mate(&RunConfig { epochs: 2, ..cfg.clone() }, &split, None, TrainOptions::default())
        .unwrap()
        .last;
    let masc = train_masc(&cfg, &mate.params, &split, None, &images, None, TrainOptions::default())
        .unwrap()
        .last;
    let mut blind = cfg.clone();
    blind.ablations.no_image = true;
    let seen = classify_gold_aspects(&masc.params, &cfg, &split, &images).unwrap();
    let unseen = classify_gold_aspects(&masc.params, &blind, &split, &images).unwrap();
    assert!(seen.iter().zip(&unseen).any(|(a, b)| a.probs != b.probs));
    // no images needed at all
    let without_files = classify_gold_aspects(&masc.params, &blind, &split, &SampleImages::new()).unwrap();
    assert_eq!(without_files, unseen);
}
