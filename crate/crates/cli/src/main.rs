//! `mabsa`: data preparation, training, prediction, evaluation and ablations.

use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;

use mabsa_core::corpus::{export_canonical, import_legacy_format, load_canonical, DatasetSplit};
use mabsa_core::harness::ablate::{expand, markdown_table, run_ablations, write_outputs, AblationFlag, AblationPlan};
use mabsa_core::harness::checkpoint::{Checkpoint, Stage};
use mabsa_core::harness::data::{write_synthetic_fixture, SampleImages, DATA_ROOT_ENV};
use mabsa_core::harness::evaluate::{evaluate_masc, evaluate_pairs, write_reports};
use mabsa_core::harness::predict::{classify_gold_aspects, predict_pairs, read_predictions, write_predictions};
use mabsa_core::harness::train::{train_masc, train_mate, TrainOptions, TrainRun};
use mabsa_core::harness::RunConfig;
use mabsa_core::supervision::{LexiconTagger, PosPredicate};

#[derive(Parser)]
#[command(name = "mabsa", version, about = "Two-stage multimodal aspect-based sentiment analysis")]
struct Cli {
    /// Log at debug level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Directory that relative split paths and image references resolve against.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert legacy 4-line files to JSONL, or write the synthetic fixture.
    PrepareData(PrepareArgs),
    /// Train the aspect term tagger.
    TrainMate(TrainMateArgs),
    /// Train the aspect sentiment classifier on top of a tagger checkpoint.
    TrainMasc(TrainMascArgs),
    /// Extract and classify aspects of a split.
    Predict(PredictArgs),
    /// Score predictions against a gold split.
    Evaluate(EvaluateArgs),
    /// Run the ablation grid and sweeps, writing a table and plots.
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, dotted for nested keys (`encoder.hidden_size=16`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let mut overrides = self.overrides.clone();
        let named = [
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("learning_rate", self.lr.map(|v| format!("{v:e}"))),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| format!("{v:?}"))),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        overrides.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))));
        Ok(RunConfig::with_overrides(base.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// Legacy 4-line files (sentence with $T$, aspect, polarity code, image id).
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Directory holding the images named in the legacy files.
    #[arg(long)]
    image_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Write the 20-post synthetic fixture instead of converting files.
    #[arg(long, conflicts_with = "input")]
    synthetic: bool,
}

#[derive(Args)]
struct TrainMateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory for checkpoints and the loss trace.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct TrainMascArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Tagger checkpoint used to extract training aspects.
    #[arg(long)]
    mate: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Image directory; defaults to the data root, then the split's directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    mate: Option<PathBuf>,
    #[arg(long)]
    masc: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// JSONL output, one classified aspect per line.
    #[arg(long)]
    out: PathBuf,
    /// Classify the gold aspects instead of extracted ones.
    #[arg(long)]
    gold_aspects: bool,
    #[arg(long)]
    image_root: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Output of `predict`.
    #[arg(long)]
    predictions: PathBuf,
    /// The predictions were made on gold aspects; report classification scores.
    #[arg(long)]
    gold_aspects: bool,
    /// Checkpoint whose configuration hash is recorded in the report.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Metrics JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Split the rows are scored on.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Flags whose every combination is trained.
    #[arg(long, value_delimiter = ',', default_values = ["no-tba", "no-pipeline"])]
    flags: Vec<FlagArg>,
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Vec<usize>,
    #[arg(long)]
    image_root: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FlagArg {
    NoTba,
    NoPipeline,
    SharedEncoder,
    NoImage,
}

impl From<FlagArg> for AblationFlag {
    fn from(f: FlagArg) -> Self {
        match f {
            FlagArg::NoTba => AblationFlag::NoTba,
            FlagArg::NoPipeline => AblationFlag::NoPipeline,
            FlagArg::SharedEncoder => AblationFlag::SharedEncoder,
            FlagArg::NoImage => AblationFlag::NoImage,
        }
    }
}

struct Ctx {
    data_root: Option<PathBuf>,
}

impl Ctx {
    fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() && !p.exists() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load_split(&self, p: &Path) -> Result<DatasetSplit> {
        let path = self.data_path(p);
        load_canonical(&path).with_context(|| format!("loading split {}", path.display()))
    }

    fn image_root(&self, explicit: Option<&Path>, split_path: &Path) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.data_root.clone())
            .unwrap_or_else(|| {
                self.data_path(split_path)
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default()
            })
    }
}

fn pos_tagger(cfg: &RunConfig) -> Option<LexiconTagger> {
    cfg.noun_filter.then(LexiconTagger::stub)
}

fn save_run(run: &TrainRun, out: &Path, stage: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    run.best.save(&out.join(format!("{stage}.best.ckpt")))?;
    run.last.save(&out.join(format!("{stage}.last.ckpt")))?;
    let trace = out.join(format!("{stage}.trace.json"));
    fs::write(&trace, serde_json::to_string_pretty(&run.trace)?)?;
    info!(
        best = ?run.best.best_metric,
        epochs = run.last.epoch,
        steps = run.last.step,
        "wrote {}",
        out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, stage: Stage) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    ckpt.expect_stage(stage)?;
    Ok(ckpt)
}

fn resume_options(resume: Option<&PathBuf>, stage: Stage) -> Result<TrainOptions> {
    Ok(TrainOptions {
        resume: resume.map(|p| load_checkpoint(p, stage)).transpose()?,
        ..Default::default()
    })
}

fn prepare(ctx: &Ctx, args: &PrepareArgs) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    if args.synthetic {
        let split = write_synthetic_fixture(&args.out_dir)?;
        println!("wrote {} synthetic posts to {}", split.samples.len(), args.out_dir.display());
        return Ok(());
    }
    if args.input.is_empty() {
        bail!("give --input files or --synthetic");
    }
    for input in &args.input {
        let path = ctx.data_path(input);
        let image_dir = args
            .image_dir
            .clone()
            .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
        let split = import_legacy_format(&path, &image_dir).with_context(|| format!("importing {}", path.display()))?;
        let stem = path.file_stem().context("input without a file name")?;
        let out = args.out_dir.join(stem).with_extension("jsonl");
        export_canonical(&split, &out)?;
        let s = &split.stats;
        println!(
            "{}: {} sentences, {} aspects ({} neg / {} neu / {} pos) -> {}",
            split.name.as_str(),
            s.sentences,
            s.aspects,
            s.negative,
            s.neutral,
            s.positive,
            out.display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        data_root: cli.data_root,
    };
    match cli.command {
        Command::PrepareData(args) => prepare(&ctx, &args),
        Command::TrainMate(args) => {
            let cfg = args.config.resolve()?;
            let train = ctx.load_split(&args.train)?;
            let dev = args.dev.as_deref().map(|p| ctx.load_split(p)).transpose()?;
            let run = train_mate(&cfg, &train, dev.as_ref(), resume_options(args.resume.as_ref(), Stage::Mate)?)?;
            save_run(&run, &args.out, "mate")
        }
        Command::TrainMasc(args) => {
            let cfg = args.config.resolve()?;
            let mate = load_checkpoint(&args.mate, Stage::Mate)?;
            let train = ctx.load_split(&args.train)?;
            let dev = args.dev.as_deref().map(|p| ctx.load_split(p)).transpose()?;
            let root = ctx.image_root(args.image_root.as_deref(), &args.train);
            let mut splits = vec![&train];
            splits.extend(dev.as_ref());
            let images = SampleImages::load(&splits, &root, &cfg.encoder)?;
            let tagger = pos_tagger(&cfg);
            let run = train_masc(
                &cfg,
                &mate.params,
                &train,
                dev.as_ref(),
                &images,
                tagger.as_ref().map(|t| t as &dyn PosPredicate),
                resume_options(args.resume.as_ref(), Stage::Masc)?,
            )?;
            save_run(&run, &args.out, "masc")
        }
        Command::Predict(args) => {
            let masc = load_checkpoint(&args.masc, Stage::Masc)?;
            let split = ctx.load_split(&args.input)?;
            let root = ctx.image_root(args.image_root.as_deref(), &args.input);
            let images = SampleImages::load(&[&split], &root, &masc.config.encoder)?;
            let preds = if args.gold_aspects {
                classify_gold_aspects(&masc.params, &masc.config, &split, &images)?
            } else {
                let mate_path = args.mate.as_deref().context("--mate is required unless --gold-aspects is set")?;
                let mate = load_checkpoint(mate_path, Stage::Mate)?;
                let tagger = pos_tagger(&masc.config);
                predict_pairs(&mate, &masc, &split, &images, tagger.as_ref().map(|t| t as &dyn PosPredicate))?
            };
            write_predictions(&preds, &args.out)?;
            println!("{} predictions -> {}", preds.len(), args.out.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let gold = ctx.load_split(&args.gold)?;
            let preds = read_predictions(&args.predictions)?;
            let ckpt = args.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let hash = ckpt.as_ref().map_or_else(|| "unknown".to_string(), |c| c.config_hash.clone());
            let mode = ckpt.as_ref().map(|c| c.config.term_match).unwrap_or_default();
            let reports = if args.gold_aspects {
                vec![evaluate_masc(&preds, &gold, &hash)?]
            } else {
                let pairs: Vec<_> = preds.iter().map(|p| p.pair()).collect();
                evaluate_pairs(&pairs, &gold, mode, &hash)?
            };
            for r in &reports {
                let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
                println!(
                    "{:?} {}: P {} R {} F1 {:.2} Acc {}",
                    r.task,
                    r.split,
                    pct(r.precision),
                    pct(r.recall),
                    100.0 * r.f1,
                    pct(r.acc)
                );
            }
            write_reports(&reports, &args.out)?;
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = args.config.resolve()?;
            let train = ctx.load_split(&args.train)?;
            let dev = args.dev.as_deref().map(|p| ctx.load_split(p)).transpose()?;
            let test = ctx.load_split(&args.test)?;
            let root = ctx.image_root(args.image_root.as_deref(), &args.train);
            let mut splits = vec![&train, &test];
            splits.extend(dev.as_ref());
            let images = SampleImages::load(&splits, &root, &cfg.encoder)?;
            let plan = AblationPlan {
                flags: args.flags.iter().map(|&f| f.into()).collect(),
                betas: args.betas.clone(),
                batch_sizes: args.batch_sizes.clone(),
            };
            let tagger = pos_tagger(&cfg);
            let rows = run_ablations(
                &expand(&cfg, &plan),
                &train,
                dev.as_ref(),
                &test,
                &images,
                tagger.as_ref().map(|t| t as &dyn PosPredicate),
            )?;
            write_outputs(&rows, &args.out_dir)?;
            print!("{}", markdown_table(&rows));
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let default = if cli.verbose { "debug" } else { "info" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    run(cli)
}
