//! End-to-end experiment orchestration: configuration, validation, the
//! three-condition run, the append-only results index and plot rendering.
//!
//! Every stage seed is derived from `global_seed` with [`seed::derive`] and a
//! fixed label (`"balance"`, `"split"`, `"synthetic"`, `"backbone"`,
//! `"classifier"`, `"augment"`, `"degan"`, `"degan/generate"`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_dataset, AugmentationPolicy, FillMode};
use crate::backbone::{build_backbone, BackboneName, BackboneSpec, FeatureExtractor};
use crate::classifier::{self, GridResult, GridSpec, TrainConfig, TrainedModel};
use crate::dataset::{self, ClassCounts, ClassLabel, LabeledDataset, SplitSide, SplitSpec};
use crate::degan::{self, DiversityReport, GanConfig, GanEpoch, TrainHooks};
use crate::error::{Error, Result};
use crate::eval::{compare, ComparisonTable, Condition, EvaluationReport};
use crate::image::Shape;
use crate::plot::{self, GridPoint};
use crate::seed;
use crate::synth;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    /// Images per class when `counts` is empty.
    pub per_class: usize,
    /// Per-class counts keyed by class code.
    pub counts: BTreeMap<String, usize>,
    pub seed: Option<u64>,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            per_class: 90,
            counts: BTreeMap::new(),
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            train_fraction: 0.8,
            stratified: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub rotation_max_deg: f64,
    pub brightness_max_delta: f64,
    pub fill_mode: FillMode,
    pub compose_both: bool,
    pub signed_brightness: bool,
    /// Re-draw the augmentation every epoch instead of once.
    pub per_epoch: bool,
    /// Train on original plus augmented images instead of replacing.
    pub concatenate: bool,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let p = AugmentationPolicy::default();
        AugmentSettings {
            rotation_max_deg: p.rotation_max_deg,
            brightness_max_delta: p.brightness_max_delta,
            fill_mode: p.fill_mode,
            compose_both: false,
            signed_brightness: false,
            per_epoch: false,
            concatenate: false,
        }
    }
}

/// Which class-D images the GAN learns from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanSource {
    BalancedTrain,
    /// Every ingested image of the class that did not land in the test split.
    UnbalancedTrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeganSettings {
    pub class: ClassLabel,
    /// Synthetic images added to the training set.
    pub inflate: usize,
    pub source: GanSource,
    pub latent_dim: usize,
    pub lambda_adv: f64,
    pub lambda_hid: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub base_channels: usize,
    pub beta1: f64,
    pub disc_lr_ratio: f64,
    pub real_label: f64,
    pub collapse_threshold: f64,
    pub checkpoint_every: usize,
    pub sample_every: usize,
    /// When positive, also export a sheet of this many candidates for
    /// manual selection.
    pub curate: usize,
}

impl Default for DeganSettings {
    fn default() -> Self {
        let g = GanConfig::default();
        DeganSettings {
            class: ClassLabel::D,
            inflate: 14,
            source: GanSource::BalancedTrain,
            latent_dim: g.latent_dim,
            lambda_adv: g.lambda_adv,
            lambda_hid: g.lambda_hid,
            epochs: g.epochs,
            learning_rate: g.learning_rate,
            batch_size: g.batch_size,
            base_channels: g.base_channels,
            beta1: g.beta1,
            disc_lr_ratio: g.disc_lr_ratio,
            real_label: g.real_label,
            collapse_threshold: 0.01,
            checkpoint_every: 0,
            sample_every: 0,
            curate: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSettings {
    pub head_hidden: Vec<usize>,
    pub batch_size: usize,
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub zero_init_output: bool,
}

impl Default for HeadSettings {
    fn default() -> Self {
        HeadSettings {
            head_hidden: Vec::new(),
            batch_size: 16,
            early_stop_patience: 5,
            zero_init_output: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneEntry {
    pub name: String,
    #[serde(default)]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub epochs_list: Vec<usize>,
    pub lr_list: Vec<f64>,
    pub backbones: Vec<BackboneEntry>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            epochs_list: vec![10, 30, 50],
            lr_list: vec![0.01, 0.001, 0.0001, 0.05, 0.0005],
            backbones: vec![BackboneEntry {
                name: "tiny-cnn".into(),
                feature_dim: Some(32),
                init_seed: None,
                weights: None,
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Directory with one sub-directory per class code.
    pub dataset_root: Option<PathBuf>,
    /// Generate a procedural dataset under `output_dir/data` instead.
    pub synthetic: Option<SyntheticData>,
    pub shape: Shape,
    pub balance_per_class: usize,
    pub balance_strict: bool,
    pub split: SplitSettings,
    pub conditions: Vec<String>,
    pub augment: AugmentSettings,
    pub degan: DeganSettings,
    pub train: HeadSettings,
    pub grid: GridSettings,
    pub output_dir: PathBuf,
    pub global_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset_root: None,
            synthetic: None,
            shape: Shape::new(16, 16, 3),
            balance_per_class: 75,
            balance_strict: true,
            split: SplitSettings::default(),
            conditions: Condition::ALL.iter().map(|c| c.to_string()).collect(),
            augment: AugmentSettings::default(),
            degan: DeganSettings::default(),
            train: HeadSettings::default(),
            grid: GridSettings::default(),
            output_dir: PathBuf::from("runs"),
            global_seed: 0,
        }
    }
}

fn set_dotted(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("cannot set {key}: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML and applies `key=value` overrides with dotted keys;
    /// values are read as TOML literals, falling back to plain strings.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut table, k.trim(), v.trim())?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.dataset_root = cfg.dataset_root.as_deref().map(resolve);
        cfg.output_dir = resolve(&cfg.output_dir);
        for b in &mut cfg.grid.backbones {
            b.weights = b.weights.as_deref().map(resolve);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> StageSeeds {
        let g = self.global_seed;
        StageSeeds {
            balance: seed::derive(g, "balance"),
            split: seed::derive(g, "split"),
            synthetic: self
                .synthetic
                .as_ref()
                .and_then(|s| s.seed)
                .unwrap_or_else(|| seed::derive(g, "synthetic")),
            backbone: seed::derive(g, "backbone"),
            classifier: seed::derive(g, "classifier"),
            augment: seed::derive(g, "augment"),
            gan: seed::derive(g, "degan"),
            generate: seed::derive(g, "degan/generate"),
        }
    }

    pub fn parsed_conditions(&self) -> Result<Vec<Condition>> {
        self.conditions.iter().map(|c| c.parse()).collect()
    }

    pub fn backbone_specs(&self) -> Result<Vec<BackboneSpec>> {
        let seeds = self.seeds();
        self.grid
            .backbones
            .iter()
            .map(|b| {
                let name: BackboneName = b.name.parse()?;
                Ok(BackboneSpec {
                    name,
                    input_shape: self.shape,
                    feature_dim: b.feature_dim.or(name.published_feature_dim()).unwrap_or(32),
                    frozen: true,
                    init_seed: b.init_seed.unwrap_or(seeds.backbone),
                    weights: b.weights.clone(),
                })
            })
            .collect()
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec {
            epochs_list: self.grid.epochs_list.clone(),
            lr_list: self.grid.lr_list.clone(),
            backbones: self.backbone_specs()?,
        })
    }

    /// Head-training template; grid points fill in backbone, epochs and
    /// learning rate.
    pub fn train_template(&self) -> Result<TrainConfig> {
        let backbone = self
            .backbone_specs()?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config("grid.backbones is empty".into()))?;
        Ok(TrainConfig {
            backbone,
            head_hidden: self.train.head_hidden.clone(),
            num_classes: ClassLabel::ALL.len(),
            epochs: self.grid.epochs_list.first().copied().unwrap_or(1),
            learning_rate: self.grid.lr_list.first().copied().unwrap_or(0.01),
            batch_size: self.train.batch_size,
            seed: self.seeds().classifier,
            early_stop_patience: (self.train.early_stop_patience > 0).then_some(self.train.early_stop_patience),
            zero_init_output: self.train.zero_init_output,
        })
    }

    pub fn augmentation_policy(&self) -> AugmentationPolicy {
        let a = &self.augment;
        AugmentationPolicy {
            rotation_max_deg: a.rotation_max_deg,
            brightness_max_delta: a.brightness_max_delta,
            fill_mode: a.fill_mode,
            seed: self.seeds().augment,
            compose_both: a.compose_both,
            signed_brightness: a.signed_brightness,
        }
    }

    pub fn gan_config(&self) -> GanConfig {
        let d = &self.degan;
        GanConfig {
            image_shape: self.shape,
            latent_dim: d.latent_dim,
            lambda_adv: d.lambda_adv,
            lambda_hid: d.lambda_hid,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            seed: self.seeds().gan,
            base_channels: d.base_channels,
            beta1: d.beta1,
            disc_lr_ratio: d.disc_lr_ratio,
            real_label: d.real_label,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub balance: u64,
    pub split: u64,
    pub synthetic: u64,
    pub backbone: u64,
    pub classifier: u64,
    pub augment: u64,
    pub gan: u64,
    pub generate: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.key, self.message)
    }
}

/// Structural and semantic checks. Reads the file system but never writes.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut err = |key: &str, message: String| {
        out.push(Finding {
            severity: Severity::Error,
            key: key.into(),
            message,
        })
    };
    let mut warnings = Vec::new();

    match (&cfg.dataset_root, &cfg.synthetic) {
        (None, None) => err("dataset_root", "set dataset_root or a [synthetic] section".into()),
        (Some(_), Some(_)) => err("dataset_root", "dataset_root and [synthetic] are mutually exclusive".into()),
        (Some(root), None) => {
            if !root.is_dir() {
                err("dataset_root", format!("{} is not a directory", root.display()));
            } else {
                let missing: Vec<&str> = ClassLabel::ALL
                    .iter()
                    .filter(|l| !root.join(l.code()).is_dir())
                    .map(|l| l.code())
                    .collect();
                if !missing.is_empty() {
                    err("dataset_root", format!("missing class directories: {}", missing.join(", ")));
                }
            }
        }
        (None, Some(s)) => {
            for (code, _) in &s.counts {
                if code.parse::<ClassLabel>().is_err() {
                    err("synthetic.counts", format!("unknown class code {code:?}"));
                }
            }
            if s.counts.is_empty() && s.per_class == 0 {
                err("synthetic.per_class", "must be positive".into());
            }
        }
    }
    if let Err(e) = cfg.shape.validate() {
        err("shape", e.to_string());
    }
    if cfg.balance_per_class == 0 {
        err("balance_per_class", "must be at least 1".into());
    }
    let sf = cfg.split.train_fraction;
    if !(sf > 0.0 && sf < 1.0) {
        err("split.train_fraction", format!("must lie in (0, 1), got {sf}"));
    }

    if cfg.conditions.is_empty() {
        err("conditions", format!("at least one condition is required ({})", Condition::valid_names()));
    }
    for (i, c) in cfg.conditions.iter().enumerate() {
        if c.parse::<Condition>().is_err() {
            err(
                &format!("conditions[{i}]"),
                format!("unknown condition {c:?}; valid names are {}", Condition::valid_names()),
            );
        }
    }

    if cfg.grid.epochs_list.is_empty() {
        err("grid.epochs_list", "grid needs at least one epoch count".into());
    }
    for (i, &e) in cfg.grid.epochs_list.iter().enumerate() {
        if e == 0 {
            err(&format!("grid.epochs_list[{i}]"), "epochs must be at least 1".into());
        }
    }
    if cfg.grid.lr_list.is_empty() {
        err("grid.lr_list", "grid needs at least one learning rate".into());
    }
    for (i, &lr) in cfg.grid.lr_list.iter().enumerate() {
        if !(lr > 0.0 && lr.is_finite()) {
            err(&format!("grid.lr_list[{i}]"), format!("learning rate must be positive, got {lr}"));
        }
    }
    if cfg.grid.backbones.is_empty() {
        err("grid.backbones", "grid needs at least one backbone".into());
    }
    for (i, b) in cfg.grid.backbones.iter().enumerate() {
        let key = format!("grid.backbones[{i}]");
        match b.name.parse::<BackboneName>() {
            Err(e) => err(&key, e.to_string()),
            Ok(name) => {
                let spec = BackboneSpec {
                    name,
                    input_shape: cfg.shape,
                    feature_dim: b.feature_dim.or(name.published_feature_dim()).unwrap_or(32),
                    frozen: true,
                    init_seed: 0,
                    weights: b.weights.clone(),
                };
                if let Err(e) = spec.validate() {
                    err(&key, e.to_string());
                } else if name.is_adapter() {
                    if let Err(e) = spec.locate_weights() {
                        warnings.push(Finding {
                            severity: Severity::Warning,
                            key: key.clone(),
                            message: e.to_string(),
                        });
                    } else if !cfg!(feature = "onnx") {
                        warnings.push(Finding {
                            severity: Severity::Warning,
                            key: key.clone(),
                            message: "adapter backbones need a build with the onnx feature".into(),
                        });
                    }
                }
            }
        }
    }
    if cfg.train.batch_size == 0 {
        err("train.batch_size", "must be at least 1".into());
    }
    if cfg.train.head_hidden.contains(&0) {
        err("train.head_hidden", "layer widths must be positive".into());
    }

    let conditions: Vec<Condition> = cfg.conditions.iter().filter_map(|c| c.parse().ok()).collect();
    if conditions.contains(&Condition::GeometricAug) {
        if let Err(e) = cfg.augmentation_policy().validate() {
            err("augment", e.to_string());
        }
    }
    if conditions.contains(&Condition::DeganAug) {
        let d = &cfg.degan;
        if !(d.learning_rate > 0.0 && d.learning_rate.is_finite()) {
            err("degan.learning_rate", format!("must be positive, got {}", d.learning_rate));
        } else if let Err(e) = cfg.gan_config().validate() {
            err("degan", e.to_string());
        }
        if d.inflate == 0 {
            warnings.push(Finding {
                severity: Severity::Warning,
                key: "degan.inflate".into(),
                message: "no synthetic images will be added".into(),
            });
        }
        if !(d.collapse_threshold >= 0.0) {
            err("degan.collapse_threshold", "must be non-negative".into());
        }
    }
    if cfg.output_dir.exists() && !cfg.output_dir.is_dir() {
        err("output_dir", format!("{} exists and is not a directory", cfg.output_dir.display()));
    } else if let Ok(meta) = fs::metadata(&cfg.output_dir) {
        if meta.permissions().readonly() {
            err("output_dir", format!("{} is not writable", cfg.output_dir.display()));
        }
    }
    out.extend(warnings);
    out
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Everything needed to re-execute one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub experiment: ExperimentConfig,
    pub condition: Condition,
    pub train_config: Option<TrainConfig>,
    pub seeds: StageSeeds,
    pub phase1_hash: String,
}

impl RunSnapshot {
    /// Stable id: the condition plus a digest of the snapshot with the output
    /// location removed.
    pub fn run_id(&self) -> Result<String> {
        let mut keyed = self.clone();
        keyed.experiment.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&keyed)?);
        Ok(format!("{}-{}", self.condition, &hex::encode(digest)[..12]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanSummary {
    pub final_epoch: Option<GanEpoch>,
    pub diversity: DiversityReport,
    pub synthetic_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub per_class: BTreeMap<ClassLabel, crate::eval::ClassMetrics>,
    pub support: BTreeMap<ClassLabel, u64>,
    pub train_counts: ClassCounts,
    pub test_set_hash: String,
    pub stopped_epoch: usize,
    pub final_train_loss: Option<f64>,
    pub head_checksum: String,
    pub backbone_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gan: Option<GanSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub condition: Condition,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub snapshot: RunSnapshot,
    pub metrics: Option<MetricSummary>,
    /// Artifact paths relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub const RESULTS_INDEX: &str = "results.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn read_index(output_dir: &Path) -> Result<Vec<RunRecord>> {
    let path = output_dir.join(RESULTS_INDEX);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn append_index(output_dir: &Path, record: &RunRecord) -> Result<()> {
    let path = output_dir.join(RESULTS_INDEX);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn rel(output_dir: &Path, path: &Path) -> String {
    path.strip_prefix(output_dir)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn digest_json(value: &impl Serialize) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Balanced split shared by every condition.
pub struct Phase1 {
    pub ingested: LabeledDataset,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub hash: String,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Phase1Summary {
    hash: String,
    train_hash: String,
    test_hash: String,
    ingested_counts: ClassCounts,
    train_counts: ClassCounts,
    test_counts: ClassCounts,
    warnings: Vec<String>,
}

fn synthetic_counts(s: &SyntheticData) -> Result<Vec<(ClassLabel, usize)>> {
    if s.counts.is_empty() {
        return Ok(ClassLabel::ALL.iter().map(|&l| (l, s.per_class)).collect());
    }
    s.counts.iter().map(|(k, &v)| Ok((k.parse()?, v))).collect()
}

pub fn prepare_phase1(cfg: &ExperimentConfig) -> Result<Phase1> {
    let seeds = cfg.seeds();
    let root = match (&cfg.dataset_root, &cfg.synthetic) {
        (Some(root), _) => root.clone(),
        (None, Some(s)) => {
            let root = cfg.output_dir.join("data");
            if root.exists() {
                fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            }
            synth::write_wound_tree(&root, &synthetic_counts(s)?, cfg.shape, seeds.synthetic)?;
            root
        }
        (None, None) => return Err(Error::Config("no dataset configured".into())),
    };
    let ingested = dataset::ingest(&root, cfg.shape)?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    let balanced = dataset::balance(&ingested.dataset, cfg.balance_per_class, seeds.balance, cfg.balance_strict)?;
    let spec = SplitSpec {
        train_fraction: cfg.split.train_fraction,
        seed: seeds.split,
        stratified: cfg.split.stratified,
    };
    let (train, test) = dataset::split(&balanced, &spec)?;
    let (train_hash, test_hash) = (train.content_hash(), test.content_hash());
    let hash = hex::encode(Sha256::digest(format!("{train_hash}:{test_hash}")));

    let dir = cfg.output_dir.join("phase1");
    dataset::write_manifest(&dir.join("split.jsonl"), &[(&train, Some(SplitSide::Train)), (&test, Some(SplitSide::Test))])?;
    write_json(
        &dir.join("summary.json"),
        &Phase1Summary {
            hash: hash.clone(),
            train_hash,
            test_hash,
            ingested_counts: ingested.dataset.class_counts().clone(),
            train_counts: train.class_counts().clone(),
            test_counts: test.class_counts().clone(),
            warnings: ingested.warnings.clone(),
        },
    )?;
    Ok(Phase1 {
        ingested: ingested.dataset,
        train,
        test,
        hash,
        warnings: ingested.warnings,
    })
}

/// One line of `grid/grid.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub backbone: BackboneName,
    pub epochs: usize,
    pub learning_rate: f64,
    pub accuracy: Option<f64>,
    pub stopped_epoch: Option<usize>,
    pub error: Option<String>,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct GridSummary {
    key: String,
    best: Option<usize>,
}

fn grid_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("grid")
}

fn point_name(c: &TrainConfig) -> String {
    format!("{}_e{}_lr{}", c.backbone.name, c.epochs, c.learning_rate)
}

/// Runs the hyperparameter grid on the base training set, or reloads it when
/// an identical grid already finished in this output directory.
pub fn run_or_load_grid(cfg: &ExperimentConfig, phase: &Phase1) -> Result<Vec<GridRow>> {
    let grid = cfg.grid_spec()?;
    let template = cfg.train_template()?;
    let key = digest_json(&(&grid, &template, &phase.hash))?;
    let dir = grid_dir(cfg);
    let rows_path = dir.join("grid.jsonl");
    let summary_path = dir.join("summary.json");
    if let Ok(summary) = read_json::<GridSummary>(&summary_path) {
        if summary.key == key {
            if let Ok(text) = fs::read_to_string(&rows_path) {
                let rows: std::result::Result<Vec<GridRow>, _> =
                    text.lines().filter(|l| !l.is_empty()).map(serde_json::from_str).collect();
                if let Ok(rows) = rows {
                    log::info!("reusing finished grid in {}", dir.display());
                    return Ok(rows);
                }
            }
        }
    }

    let results: Vec<GridResult> = classifier::run_grid(&phase.train, &phase.test, &grid, &template, Condition::XferOnly)?;
    let mut rows = Vec::with_capacity(results.len());
    let mut text = String::new();
    for r in &results {
        let row = match &r.outcome {
            Ok(run) => {
                let pdir = dir.join("points").join(point_name(&r.config));
                write_curve(&pdir.join("curve.jsonl"), &run.model)?;
                write_json(&pdir.join("report.json"), &run.report)?;
                GridRow {
                    backbone: r.config.backbone.name,
                    epochs: r.config.epochs,
                    learning_rate: r.config.learning_rate,
                    accuracy: Some(run.report.accuracy),
                    stopped_epoch: Some(run.model.stopped_epoch),
                    error: None,
                    config: r.config.clone(),
                }
            }
            Err(e) => GridRow {
                backbone: r.config.backbone.name,
                epochs: r.config.epochs,
                learning_rate: r.config.learning_rate,
                accuracy: None,
                stopped_epoch: None,
                error: Some(e.clone()),
                config: r.config.clone(),
            },
        };
        text.push_str(&serde_json::to_string(&row)?);
        text.push('\n');
        rows.push(row);
    }
    write_file(&rows_path, text)?;
    let best = rows.iter().position(|r| r.accuracy.is_some());
    write_json(&summary_path, &GridSummary { key, best })?;
    Ok(rows)
}

fn write_curve(path: &Path, model: &TrainedModel) -> Result<()> {
    let mut text = String::new();
    for (i, e) in model.training_curve.iter().enumerate() {
        text.push_str(&serde_json::to_string(&serde_json::json!({
            "epoch": i + 1,
            "train_loss": e.train_loss,
            "train_acc": e.train_acc,
        }))?);
        text.push('\n');
    }
    write_file(path, text)
}

struct ConditionOutput {
    report: EvaluationReport,
    metrics: MetricSummary,
    artifacts: BTreeMap<String, String>,
}

fn execute_condition(
    cfg: &ExperimentConfig,
    condition: Condition,
    tc: &TrainConfig,
    phase: &Phase1,
    fe: Arc<FeatureExtractor>,
    run_dir: &Path,
) -> Result<ConditionOutput> {
    let out = &cfg.output_dir;
    let mut artifacts = BTreeMap::new();
    let mut gan_summary = None;
    let policy = cfg.augmentation_policy();
    let mut reaugment = false;

    let train_ds = match condition {
        Condition::XferOnly => phase.train.clone(),
        Condition::GeometricAug => {
            let augmented = augment_dataset(&phase.train, &policy)?;
            reaugment = cfg.augment.per_epoch;
            if cfg.augment.concatenate {
                dataset::merge(&phase.train, &augmented)?
            } else {
                augmented
            }
        }
        Condition::DeganAug => {
            let d = &cfg.degan;
            let source = match d.source {
                GanSource::BalancedTrain => phase.train.filter_class(d.class),
                GanSource::UnbalancedTrain => {
                    let test_ids: std::collections::BTreeSet<&str> = phase.test.source_ids().into_iter().collect();
                    let keep: Vec<_> = phase
                        .ingested
                        .filter_class(d.class)
                        .into_samples()
                        .into_iter()
                        .filter(|s| !test_ids.contains(s.source_id.as_str()))
                        .collect();
                    LabeledDataset::new(cfg.shape, keep)?
                }
            };
            let gan_dir = run_dir.join("gan");
            let hooks = TrainHooks {
                checkpoint_dir: Some(gan_dir.join("checkpoints")),
                checkpoint_every: d.checkpoint_every,
                sample_dir: Some(gan_dir.join("samples")),
                sample_every: d.sample_every,
            };
            let model = degan::train_gan_with_hooks(&source, &cfg.gan_config(), &hooks)?;
            let model_path = gan_dir.join("model.json");
            degan::save_model(&model, &model_path)?;
            artifacts.insert("gan_model".into(), rel(out, &model_path));
            let sheet = gan_dir.join("samples_final.png");
            degan::write_sample_sheet(&model, 16, cfg.seeds().generate, &sheet)?;
            artifacts.insert("gan_samples".into(), rel(out, &sheet));
            let history = gan_dir.join("loss_history.jsonl");
            let mut text = String::new();
            for e in &model.loss_history {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            write_file(&history, text)?;
            artifacts.insert("gan_history".into(), rel(out, &history));
            if d.curate > 0 {
                let path = gan_dir.join("curate_sheet.png");
                degan::write_sample_sheet(&model, d.curate, seed::derive(cfg.seeds().generate, "curate"), &path)?;
                artifacts.insert("gan_curate_sheet".into(), rel(out, &path));
            }
            let diversity = degan::diversity(&model, 16, d.collapse_threshold, cfg.seeds().generate)?;
            if diversity.collapse_flag {
                log::warn!(
                    "generator looks collapsed: mean pairwise distance {:.4}",
                    diversity.mean_pairwise_distance
                );
            }
            let merged = if d.inflate > 0 {
                let synthetic = degan::generate(&model, d.inflate, cfg.seeds().generate)?;
                dataset::merge(&phase.train, &synthetic)?
            } else {
                phase.train.clone()
            };
            gan_summary = Some(GanSummary {
                final_epoch: model.loss_history.last().copied(),
                diversity,
                synthetic_count: d.inflate,
            });
            merged
        }
    };

    let manifest = run_dir.join("train_manifest.jsonl");
    dataset::write_manifest(&manifest, &[(&train_ds, Some(SplitSide::Train))])?;
    artifacts.insert("train_manifest".into(), rel(out, &manifest));

    let model = if reaugment {
        classifier::train_reaugmented(fe.clone(), &phase.train, tc, &policy)?
    } else {
        classifier::train_with_backbone(fe.clone(), &train_ds, tc)?
    };
    let report = classifier::evaluate(&model, &phase.test, condition)?;

    let model_path = run_dir.join("model.json");
    write_file(&model_path, serde_json::to_string(&model)?)?;
    artifacts.insert("model".into(), rel(out, &model_path));
    let curve = run_dir.join("curve.jsonl");
    write_curve(&curve, &model)?;
    artifacts.insert("curve".into(), rel(out, &curve));
    let report_path = run_dir.join("report.json");
    write_json(&report_path, &report)?;
    artifacts.insert("report".into(), rel(out, &report_path));
    let cm = run_dir.join("confusion.svg");
    write_file(&cm, plot::confusion_svg(&format!("Confusion matrix: {condition}"), &report.matrix))?;
    artifacts.insert("confusion".into(), rel(out, &cm));

    let metrics = MetricSummary {
        accuracy: report.accuracy,
        per_class: report.per_class.clone(),
        support: report.support.clone(),
        train_counts: train_ds.class_counts().clone(),
        test_set_hash: phase.test.content_hash(),
        stopped_epoch: model.stopped_epoch,
        final_train_loss: model.training_curve.last().map(|e| e.train_loss),
        head_checksum: model.head_parameters(),
        backbone_checksum: fe.checksum(),
        gan: gan_summary,
    };
    Ok(ConditionOutput {
        report,
        metrics,
        artifacts,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub reports: Vec<EvaluationReport>,
    pub comparison: Option<ComparisonTable>,
    pub grid: Vec<GridRow>,
    pub plots: Vec<PathBuf>,
    /// Conditions reused from the results index.
    pub skipped: Vec<String>,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.records.iter().all(RunRecord::is_ok)
    }
}

/// Deterministic per-condition line written to `metrics.jsonl`.
#[derive(Serialize)]
struct MetricLine<'a> {
    run_id: &'a str,
    condition: Condition,
    status: RunStatus,
    error: Option<&'a str>,
    metrics: Option<&'a MetricSummary>,
}

fn artifacts_present(out: &Path, rec: &RunRecord) -> bool {
    rec.artifacts.values().all(|p| out.join(p).is_file())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let findings = validate_config(cfg);
    if has_errors(&findings) {
        let list: Vec<String> = findings.iter().filter(|f| f.severity == Severity::Error).map(|f| f.to_string()).collect();
        return Err(Error::Config(list.join("; ")));
    }
    for f in &findings {
        log::warn!("{f}");
    }
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;

    let phase = prepare_phase1(cfg)?;
    log::info!(
        "phase 1: {} train / {} test samples (hash {})",
        phase.train.len(),
        phase.test.len(),
        &phase.hash[..12]
    );
    let grid = run_or_load_grid(cfg, &phase)?;
    let best = grid.iter().find(|r| r.accuracy.is_some()).map(|r| r.config.clone());
    if let Some(b) = &best {
        log::info!("best grid point: {} epochs, lr {}", b.epochs, b.learning_rate);
    }

    let previous = read_index(&out)?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut extractors: Vec<(BackboneSpec, Arc<FeatureExtractor>)> = Vec::new();

    for condition in cfg.parsed_conditions()? {
        let snapshot = RunSnapshot {
            experiment: cfg.clone(),
            condition,
            train_config: best.clone(),
            seeds: cfg.seeds(),
            phase1_hash: phase.hash.clone(),
        };
        let run_id = snapshot.run_id()?;
        if let Some(done) = previous
            .iter()
            .rev()
            .find(|r| r.run_id == run_id && r.is_ok() && artifacts_present(&out, r))
        {
            if let Some(path) = done.artifacts.get("report") {
                if let Ok(report) = read_json::<EvaluationReport>(&out.join(path)) {
                    log::info!("{run_id}: already finished, skipping");
                    skipped.push(run_id.clone());
                    reports.push(report);
                    records.push(done.clone());
                    continue;
                }
            }
        }

        let started_at = now();
        let run_dir = out.join("runs").join(&run_id);
        let result = (|| -> Result<ConditionOutput> {
            let tc = best
                .as_ref()
                .ok_or_else(|| Error::Config("no grid point trained successfully".into()))?;
            let fe = match extractors.iter().find(|(s, _)| s == &tc.backbone) {
                Some((_, fe)) => fe.clone(),
                None => {
                    let fe = Arc::new(build_backbone(&tc.backbone)?);
                    extractors.push((tc.backbone.clone(), fe.clone()));
                    fe
                }
            };
            if run_dir.exists() {
                fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            }
            execute_condition(cfg, condition, tc, &phase, fe, &run_dir)
        })();
        let record = match result {
            Ok(o) => {
                log::info!("{run_id}: accuracy {:.4}", o.report.accuracy);
                reports.push(o.report);
                RunRecord {
                    run_id,
                    condition,
                    status: RunStatus::Ok,
                    error: None,
                    snapshot,
                    metrics: Some(o.metrics),
                    artifacts: o.artifacts,
                    started_at,
                    finished_at: now(),
                }
            }
            Err(e) => {
                log::error!("{run_id}: {e}");
                RunRecord {
                    run_id,
                    condition,
                    status: RunStatus::Failed,
                    error: Some(e.to_string()),
                    snapshot,
                    metrics: None,
                    artifacts: BTreeMap::new(),
                    started_at,
                    finished_at: now(),
                }
            }
        };
        append_index(&out, &record)?;
        records.push(record);
    }

    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(&MetricLine {
            run_id: &r.run_id,
            condition: r.condition,
            status: r.status,
            error: r.error.as_deref(),
            metrics: r.metrics.as_ref(),
        })?);
        text.push('\n');
    }
    write_file(&out.join(METRICS_FILE), text)?;

    let comparison = if reports.len() >= 2 {
        let table = compare(&reports)?;
        write_file(&out.join("comparison.txt"), table.render_text())?;
        write_file(&out.join("comparison.jsonl"), table.to_json_lines()?)?;
        Some(table)
    } else {
        None
    };
    let plots = render_plots(&out, &records)?;
    Ok(ExperimentOutcome {
        records,
        reports,
        comparison,
        grid,
        plots,
        skipped,
    })
}

/// Reads the grid rows written by [`run_or_load_grid`].
pub fn read_grid(output_dir: &Path) -> Result<Vec<GridRow>> {
    let path = output_dir.join("grid").join("grid.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Writes the accuracy-vs-learning-rate chart per backbone, a confusion
/// heat map per successful run, and GAN sample sheets and loss curves.
pub fn render_plots(output_dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no run records to plot".into()));
    }
    let dir = output_dir.join("plots");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();

    if let Ok(rows) = read_grid(output_dir) {
        let mut by_backbone: BTreeMap<String, Vec<GridPoint>> = BTreeMap::new();
        for r in &rows {
            if let Some(accuracy) = r.accuracy {
                by_backbone.entry(r.backbone.to_string()).or_default().push(GridPoint {
                    epochs: r.epochs,
                    learning_rate: r.learning_rate,
                    accuracy,
                });
            }
        }
        for (name, points) in by_backbone {
            let path = dir.join(format!("grid_accuracy_{name}.svg"));
            write_file(&path, plot::accuracy_vs_lr_svg(&format!("Test accuracy by learning rate ({name})"), &points)?)?;
            written.push(path);
        }
    }

    for rec in records.iter().filter(|r| r.is_ok()) {
        if let Some(p) = rec.artifacts.get("report") {
            let report: EvaluationReport = read_json(&output_dir.join(p))?;
            let path = dir.join(format!("confusion_{}.svg", rec.condition));
            write_file(&path, plot::confusion_svg(&format!("Confusion matrix: {}", rec.condition), &report.matrix))?;
            written.push(path);
        }
        if let Some(p) = rec.artifacts.get("gan_samples") {
            let path = dir.join("gan_samples.png");
            fs::copy(output_dir.join(p), &path).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        if let Some(p) = rec.artifacts.get("gan_history") {
            let text = fs::read_to_string(output_dir.join(p)).map_err(|e| Error::io(output_dir.join(p), e))?;
            let epochs: Vec<GanEpoch> = text
                .lines()
                .filter(|l| !l.is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?;
            let series = [
                ("adversarial", epochs.iter().map(|e| e.adv_loss).collect::<Vec<_>>()),
                ("hidden (VAE)", epochs.iter().map(|e| e.hid_loss).collect()),
                ("discriminator", epochs.iter().map(|e| e.disc_loss).collect()),
            ];
            let path = dir.join("gan_losses.svg");
            write_file(&path, plot::loss_curves_svg("DE-GAN losses", &series)?)?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument("records contain nothing to plot".into()));
    }
    written.sort();
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ExperimentConfig {
        ExperimentConfig {
            synthetic: Some(SyntheticData::default()),
            ..Default::default()
        }
    }

    #[test]
    fn clean_config_has_no_findings() {
        assert_eq!(validate_config(&desk()), Vec::new());
    }

    #[test]
    fn zero_learning_rate_is_one_error() {
        let mut cfg = desk();
        cfg.grid.lr_list = vec![0.0];
        let f = validate_config(&cfg);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].severity, f[0].key.as_str()), (Severity::Error, "grid.lr_list[0]"));
    }

    #[test]
    fn unknown_condition_lists_valid_names() {
        let mut cfg = desk();
        cfg.conditions.push("mixup".into());
        let f = validate_config(&cfg);
        assert_eq!(f.len(), 1);
        assert!(f[0].message.contains("xfer-only, geometric-aug, degan-aug"));
    }

    #[test]
    fn empty_grid_and_missing_root() {
        let mut cfg = desk();
        cfg.grid.epochs_list.clear();
        cfg.synthetic = None;
        cfg.dataset_root = Some(PathBuf::from("/does/not/exist"));
        let keys: Vec<String> = validate_config(&cfg).into_iter().map(|f| f.key).collect();
        assert!(keys.contains(&"grid.epochs_list".to_string()));
        assert!(keys.contains(&"dataset_root".to_string()));
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let cfg = desk();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        let over = ExperimentConfig::from_toml_str(
            &text,
            &["grid.lr_list=[0.5]".into(), "degan.epochs=7".into(), "name=other run".into()],
        )
        .unwrap();
        assert_eq!(over.grid.lr_list, vec![0.5]);
        assert_eq!(over.degan.epochs, 7);
        assert_eq!(over.name, "other run");
        assert!(ExperimentConfig::from_toml_str("bogus_key = 1", &[]).is_err());
    }

    #[test]
    fn run_id_ignores_output_dir() {
        let cfg = desk();
        let snap = RunSnapshot {
            experiment: cfg.clone(),
            condition: Condition::XferOnly,
            train_config: None,
            seeds: cfg.seeds(),
            phase1_hash: "abc".into(),
        };
        let mut moved = snap.clone();
        moved.experiment.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(snap.run_id().unwrap(), moved.run_id().unwrap());
        assert!(snap.run_id().unwrap().starts_with("xfer-only-"));
    }

    #[test]
    fn render_plots_rejects_empty_input() {
        assert!(render_plots(Path::new("/tmp"), &[]).is_err());
    }
}
