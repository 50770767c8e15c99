//! Ablation grid, hyperparameter sweeps and their table and plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::data::SampleImages;
use crate::harness::evaluate::{evaluate_masc, evaluate_pairs, Task};
use crate::harness::predict::{classify_gold_aspects, predict_pairs};
use crate::harness::train::{train_masc, train_mate, TrainOptions};
use crate::masc::Ablations;
use crate::supervision::PosPredicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFlag {
    NoTba,
    NoPipeline,
    SharedEncoder,
    NoImage,
}

impl AblationFlag {
    fn apply(self, a: &mut Ablations) {
        match self {
            AblationFlag::NoTba => a.no_tba = true,
            AblationFlag::NoPipeline => a.no_pipeline = true,
            AblationFlag::SharedEncoder => a.shared_encoder = true,
            AblationFlag::NoImage => a.no_image = true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Grid,
    BetaSweep,
    BatchSweep,
}

/// One training run to perform.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub label: String,
    pub kind: RowKind,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub kind: RowKind,
    pub ablations: Ablations,
    pub beta: f64,
    pub batch_size: usize,
    pub mabsa_f1: f64,
    pub mate_f1: f64,
    pub masc_acc: f64,
    pub masc_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationPlan {
    pub flags: Vec<AblationFlag>,
    pub betas: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

pub fn label(a: &Ablations) -> String {
    let mut without = Vec::new();
    if a.no_tba {
        without.push("TBA");
    }
    if a.no_pipeline {
        without.push("Pipeline");
    }
    if a.no_image {
        without.push("Image");
    }
    let mut out = if without.is_empty() {
        String::new()
    } else {
        format!("w/o {}", without.join(" & "))
    };
    if a.shared_encoder {
        if !out.is_empty() {
            out.push_str(", ");
        }
        out.push_str("shared encoder");
    }
    if out.is_empty() {
        "Ours".into()
    } else {
        out
    }
}

/// Every subset of the plan's flags, then the β and batch-size sweeps with
/// all flags off.
pub fn expand(base: &RunConfig, plan: &AblationPlan) -> Vec<AblationSpec> {
    let mut flags = plan.flags.clone();
    flags.sort();
    flags.dedup();
    let mut specs = Vec::new();
    for mask in 0..(1usize << flags.len()) {
        let mut config = base.clone();
        config.ablations = Ablations::default();
        for (i, f) in flags.iter().enumerate() {
            if mask & (1 << i) != 0 {
                f.apply(&mut config.ablations);
            }
        }
        specs.push(AblationSpec {
            label: label(&config.ablations),
            kind: RowKind::Grid,
            config,
        });
    }
    for &beta in &plan.betas {
        specs.push(AblationSpec {
            label: format!("beta={beta}"),
            kind: RowKind::BetaSweep,
            config: RunConfig {
                beta,
                ablations: Ablations::default(),
                ..base.clone()
            },
        });
    }
    for &batch_size in &plan.batch_sizes {
        specs.push(AblationSpec {
            label: format!("batch={batch_size}"),
            kind: RowKind::BatchSweep,
            config: RunConfig {
                batch_size,
                ablations: Ablations::default(),
                ..base.clone()
            },
        });
    }
    specs
}

/// Trains and scores every spec. Extraction models are shared between specs
/// with the same batch size.
pub fn run_ablations(
    specs: &[AblationSpec],
    train: &DatasetSplit,
    dev: Option<&DatasetSplit>,
    eval: &DatasetSplit,
    images: &SampleImages,
    pos: Option<&dyn PosPredicate>,
) -> Result<Vec<AblationRow>> {
    let mut mate_cache: BTreeMap<usize, Checkpoint> = BTreeMap::new();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let cfg = &spec.config;
        info!(label = %spec.label, "ablation run");
        let mate = match mate_cache.get(&cfg.batch_size) {
            Some(m) => m.clone(),
            None => {
                let m = train_mate(cfg, train, dev, TrainOptions::default())?.best;
                mate_cache.insert(cfg.batch_size, m.clone());
                m
            }
        };
        let masc = train_masc(cfg, &mate.params, train, dev, images, pos, TrainOptions::default())?.best;
        let preds = predict_pairs(&mate, &masc, eval, images, pos)?;
        let pairs: Vec<_> = preds.iter().map(|p| p.pair()).collect();
        let hash = cfg.config_hash();
        let reports = evaluate_pairs(&pairs, eval, cfg.term_match, &hash)?;
        let f1 = |task| reports.iter().find(|r| r.task == task).map_or(0.0, |r| r.f1);
        let masc_report = evaluate_masc(&classify_gold_aspects(&masc.params, cfg, eval, images)?, eval, &hash)?;
        rows.push(AblationRow {
            label: spec.label.clone(),
            kind: spec.kind,
            ablations: cfg.ablations,
            beta: cfg.beta,
            batch_size: cfg.batch_size,
            mabsa_f1: f1(Task::Mabsa),
            mate_f1: f1(Task::Mate),
            masc_acc: masc_report.acc.unwrap_or(0.0),
            masc_f1: masc_report.f1,
        });
    }
    Ok(rows)
}

pub fn markdown_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Setting | MABSA F1 | MATE F1 | MASC Acc | MASC F1 |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            r.label,
            100.0 * r.mabsa_f1,
            100.0 * r.mate_f1,
            100.0 * r.masc_acc,
            100.0 * r.masc_f1
        );
    }
    out
}

fn plot_sweep(points: &[(f64, f64, f64)], x_label: &str, path: &Path) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d((lo - pad)..(hi + pad), 0.0..100.0)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("score (%)")
        .draw()
        .map_err(|e| plot_err(&e))?;
    let series = [(1usize, "MABSA F1", BLUE), (2, "MASC Acc", RED)];
    for (idx, name, color) in series {
        let line: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.0, 100.0 * if idx == 1 { p.1 } else { p.2 }))
            .collect();
        chart
            .draw_series(LineSeries::new(line.clone(), color))
            .map_err(|e| plot_err(&e))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(line.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Writes `ablation.md`, `ablation.json` and, for non-empty sweeps,
/// `beta_sweep.svg` and `batch_sweep.svg`.
pub fn write_outputs(rows: &[AblationRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let md = dir.join("ablation.md");
    fs::write(&md, markdown_table(rows)).map_err(|e| Error::io(&md, e))?;
    let json = dir.join("ablation.json");
    fs::write(&json, serde_json::to_string_pretty(rows)? + "\n").map_err(|e| Error::io(&json, e))?;
    let sweep = |kind: RowKind, x: fn(&AblationRow) -> f64| {
        let mut pts: Vec<_> = rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| (x(r), r.mabsa_f1, r.masc_acc))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    };
    let beta = sweep(RowKind::BetaSweep, |r| r.beta);
    if !beta.is_empty() {
        plot_sweep(&beta, "beta", &dir.join("beta_sweep.svg"))?;
    }
    let batch = sweep(RowKind::BatchSweep, |r| r.batch_size as f64);
    if !batch.is_empty() {
        plot_sweep(&batch, "batch size", &dir.join("batch_sweep.svg"))?;
    }
    Ok(())
}
