use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use woundaug::augment::{augment_dataset, AugmentationPolicy, FillMode};
use woundaug::backbone::{build_backbone, BackboneName, BackboneSpec};
use woundaug::classifier::{self, TrainConfig, TrainedModel};
use woundaug::dataset::{self, ClassLabel, LabeledDataset, SplitSide, SplitSpec};
use woundaug::degan::{self, GanConfig, TrainHooks};
use woundaug::eval::{compare, Condition, EvaluationReport};
use woundaug::image::Shape;
use woundaug::pipeline::{self, ExperimentConfig, Severity};
use woundaug::synth;

#[derive(Parser)]
#[command(name = "woundaug", version, about = "Augmentation experiments for wound image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural wound-like dataset tree (one folder per class).
    Synth(SynthArgs),
    /// Scan a class-folder tree and write a manifest.
    Ingest(IngestArgs),
    /// Downsample every class to the same count.
    Balance(BalanceArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Rotate or brighten every image of a manifest.
    Augment(AugmentArgs),
    /// Train a DE-GAN on one class.
    GanTrain(GanTrainArgs),
    /// Sample images from a trained DE-GAN.
    GanGenerate(GanGenerateArgs),
    /// Train a classification head on a frozen backbone.
    Train(TrainArgs),
    /// Score a trained model on a test manifest.
    Evaluate(EvaluateArgs),
    /// Build the per-class comparison table from evaluation reports.
    Compare(CompareArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
    /// Re-render plots for a finished experiment directory.
    Plot(PlotArgs),
    /// Check a config file without running anything.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ShapeArg {
    /// Image shape as HxWxC.
    #[arg(long, default_value = "16x16x3")]
    shape: Shape,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 90)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 75)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep under-populated classes at their full size instead of failing.
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_stratify: bool,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    rotation_max_deg: f64,
    #[arg(long, default_value_t = 0.2)]
    brightness_max_delta: f64,
    #[arg(long, default_value = "nearest-edge")]
    fill_mode: FillMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    compose_both: bool,
    #[arg(long)]
    signed_brightness: bool,
    /// Write originals and augmented copies together.
    #[arg(long)]
    concatenate: bool,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct GanTrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "D")]
    class: ClassLabel,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_hid: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    sample_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    sample_every: usize,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct GanGenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 14)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest; images are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Also write a sheet of this many candidates for manual selection.
    #[arg(long)]
    curate: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    collapse_threshold: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifests; several are merged. Only train-side records are
    /// used when a manifest carries split sides.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "tiny-cnn")]
    backbone: BackboneName,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    backbone_seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Hidden layer widths of the head.
    #[arg(long = "hidden")]
    hidden: Vec<usize>,
    /// 0 disables early stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: ShapeArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test manifest; only test-side records are used when sides are present.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "xfer-only")]
    condition: Condition,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Evaluation reports; the first is the baseline column.
    #[arg(long = "report", required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Writes comparison.txt and comparison.jsonl here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set grid.lr_list=[0.1].
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    output_dir: PathBuf,
}

fn load_side(path: &Path, shape: Shape, side: SplitSide) -> Result<LabeledDataset> {
    let records = dataset::read_records(path)?;
    let side = records.iter().any(|r| r.split.is_some()).then_some(side);
    let ds = dataset::load_manifest(path, shape, side).with_context(|| format!("loading {}", path.display()))?;
    if ds.is_empty() {
        bail!("{} has no usable records", path.display());
    }
    Ok(ds)
}

fn print_counts(ds: &LabeledDataset) {
    let parts: Vec<String> = ClassLabel::ALL
        .iter()
        .map(|&l| format!("{}={}", l.code(), ds.count(l)))
        .collect();
    println!("{} samples ({})", ds.len(), parts.join(" "));
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&args.config, &args.overrides).with_context(|| format!("reading {}", args.config.display()))
}

fn cmd_validate(args: ConfigArgs) -> Result<ExitCode> {
    let cfg = load_config(&args)?;
    let findings = pipeline::validate_config(&cfg);
    for f in &findings {
        println!("{f}");
    }
    if pipeline::has_errors(&findings) {
        return Ok(ExitCode::FAILURE);
    }
    let warnings = findings.iter().filter(|f| f.severity == Severity::Warning).count();
    println!("config ok ({warnings} warnings)");
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(seed) = args.seed {
        cfg.global_seed = seed;
    }
    let outcome = pipeline::run_experiment(&cfg)?;
    for r in &outcome.records {
        match (&r.metrics, &r.error) {
            (Some(m), _) => println!("{:<14} ok      accuracy {:.4}  ({})", r.condition.as_str(), m.accuracy, r.run_id),
            (None, e) => println!("{:<14} failed  {}", r.condition.as_str(), e.as_deref().unwrap_or("unknown error")),
        }
    }
    if let Some(table) = &outcome.comparison {
        println!();
        print!("{}", table.render_text());
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(if outcome.all_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => {
            let counts: Vec<(ClassLabel, usize)> = ClassLabel::ALL.iter().map(|&l| (l, a.per_class)).collect();
            synth::write_wound_tree(&a.out, &counts, a.shape.shape, a.seed)?;
            println!("wrote {} images under {}", a.per_class * counts.len(), a.out.display());
        }
        Command::Ingest(a) => {
            let ingested = dataset::ingest(&a.root, a.shape.shape)?;
            for w in &ingested.warnings {
                warn!("{w}");
            }
            dataset::write_manifest(&a.out, &[(&ingested.dataset, None)])?;
            print_counts(&ingested.dataset);
        }
        Command::Balance(a) => {
            let ds = dataset::load_manifest(&a.manifest, a.shape.shape, None)?;
            let balanced = dataset::balance(&ds, a.per_class, a.seed, !a.lenient)?;
            dataset::write_manifest(&a.out, &[(&balanced, None)])?;
            print_counts(&balanced);
        }
        Command::Split(a) => {
            let ds = dataset::load_manifest(&a.manifest, a.shape.shape, None)?;
            let spec = SplitSpec {
                train_fraction: a.train_fraction,
                seed: a.seed,
                stratified: !a.no_stratify,
            };
            let (train, test) = dataset::split(&ds, &spec)?;
            dataset::write_manifest(&a.out, &[(&train, Some(SplitSide::Train)), (&test, Some(SplitSide::Test))])?;
            print!("train: ");
            print_counts(&train);
            print!("test:  ");
            print_counts(&test);
        }
        Command::Augment(a) => {
            let ds = dataset::load_manifest(&a.manifest, a.shape.shape, None)?;
            let policy = AugmentationPolicy {
                rotation_max_deg: a.rotation_max_deg,
                brightness_max_delta: a.brightness_max_delta,
                fill_mode: a.fill_mode,
                seed: a.seed,
                compose_both: a.compose_both,
                signed_brightness: a.signed_brightness,
            };
            let augmented = augment_dataset(&ds, &policy)?;
            let out = if a.concatenate { dataset::merge(&ds, &augmented)? } else { augmented };
            dataset::write_manifest(&a.out, &[(&out, None)])?;
            print_counts(&out);
        }
        Command::GanTrain(a) => {
            let ds = load_side(&a.manifest, a.shape.shape, SplitSide::Train)?.filter_class(a.class);
            if ds.is_empty() {
                bail!("{} has no class {} samples", a.manifest.display(), a.class);
            }
            let d = GanConfig::default();
            let cfg = GanConfig {
                image_shape: a.shape.shape,
                latent_dim: a.latent_dim.unwrap_or(d.latent_dim),
                lambda_adv: a.lambda_adv.unwrap_or(d.lambda_adv),
                lambda_hid: a.lambda_hid.unwrap_or(d.lambda_hid),
                epochs: a.epochs.unwrap_or(d.epochs),
                learning_rate: a.lr.unwrap_or(d.learning_rate),
                batch_size: a.batch_size.unwrap_or(d.batch_size),
                seed: a.seed,
                base_channels: a.base_channels.unwrap_or(d.base_channels),
                ..d
            };
            let hooks = TrainHooks {
                checkpoint_dir: a.checkpoint_dir,
                checkpoint_every: a.checkpoint_every,
                sample_dir: a.sample_dir,
                sample_every: a.sample_every,
            };
            info!("training DE-GAN on {} class {} images", ds.len(), a.class);
            let model = degan::train_gan_with_hooks(&ds, &cfg, &hooks)?;
            degan::save_model(&model, &a.out)?;
            if let Some(last) = model.loss_history.last() {
                println!(
                    "final epoch: generator {:.4} (adv {:.4}, hid {:.4}), discriminator {:.4}, disc acc {:.3}",
                    last.gen_loss, last.adv_loss, last.hid_loss, last.disc_loss, last.disc_acc
                );
            }
        }
        Command::GanGenerate(a) => {
            let model = degan::load_model(&a.model)?;
            let synthetic = degan::generate(&model, a.n, a.seed)?;
            dataset::write_manifest(&a.out, &[(&synthetic, None)])?;
            let report = degan::diversity(&model, a.n.max(2), a.collapse_threshold, a.seed)?;
            println!(
                "generated {} class {} images; mean pairwise distance {:.4}{}",
                a.n,
                model.label,
                report.mean_pairwise_distance,
                if report.collapse_flag { " (possible mode collapse)" } else { "" }
            );
            if let Some(n) = a.curate {
                let sheet = a.out.with_file_name("curate_sheet.png");
                degan::write_sample_sheet(&model, n, a.seed, &sheet)?;
                println!("wrote {n} candidates to {}", sheet.display());
            }
        }
        Command::Train(a) => {
            let shape = a.shape.shape;
            let mut ds = LabeledDataset::empty(shape);
            for m in &a.manifests {
                ds = dataset::merge(&ds, &load_side(m, shape, SplitSide::Train)?)?;
            }
            let fd = a.feature_dim.or(a.backbone.published_feature_dim()).unwrap_or(32);
            let backbone = BackboneSpec {
                name: a.backbone,
                input_shape: shape,
                feature_dim: fd,
                frozen: true,
                init_seed: a.backbone_seed,
                weights: a.weights,
            };
            let cfg = TrainConfig {
                backbone,
                head_hidden: a.hidden,
                num_classes: ds.present_classes().len(),
                epochs: a.epochs,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                seed: a.seed,
                early_stop_patience: (a.patience > 0).then_some(a.patience),
                ..TrainConfig::default()
            };
            let fe = Arc::new(build_backbone(&cfg.backbone)?);
            let model = classifier::train_with_backbone(fe, &ds, &cfg)?;
            fs::write(&a.out, serde_json::to_string(&model)?).with_context(|| format!("writing {}", a.out.display()))?;
            if let Some(last) = model.training_curve.last() {
                println!(
                    "stopped after {} epochs: train loss {:.4}, train accuracy {:.4}",
                    model.stopped_epoch, last.train_loss, last.train_acc
                );
            }
        }
        Command::Evaluate(a) => {
            let text = fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
            let model = TrainedModel::from_json(&text)?;
            let test = load_side(&a.manifest, model.config.backbone.input_shape, SplitSide::Test)?;
            let report = classifier::evaluate(&model, &test, a.condition)?;
            write_json(&a.out, &report)?;
            println!("{}: accuracy {:.4} on {} samples", a.condition, report.accuracy, test.len());
            for (label, m) in &report.per_class {
                println!("  {label}  P {:.2}  R {:.2}  F1 {:.2}", m.precision, m.recall, m.f1);
            }
        }
        Command::Compare(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    Ok(serde_json::from_str::<EvaluationReport>(&text)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let table = compare(&reports)?;
            print!("{}", table.render_text());
            if let Some(dir) = a.out_dir {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("comparison.txt"), table.render_text())?;
                fs::write(dir.join("comparison.jsonl"), table.to_json_lines()?)?;
            }
        }
        Command::Run(a) => return cmd_run(a),
        Command::Plot(a) => {
            let mut records = pipeline::read_index(&a.output_dir)?;
            // keep the latest record per run id
            records.reverse();
            let mut seen = std::collections::BTreeSet::new();
            records.retain(|r| seen.insert(r.run_id.clone()));
            records.reverse();
            for p in pipeline::render_plots(&a.output_dir, &records)? {
                println!("{}", p.display());
            }
        }
        Command::Validate(a) => return cmd_validate(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
