//! Softmax classification heads trained on frozen backbone features, and the
//! epochs x learning-rate grid runner.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_dataset, AugmentationPolicy};
use crate::backbone::{build_backbone, BackboneSpec, FeatureExtractor};
use crate::dataset::{ClassLabel, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{Condition, EvaluationReport};
use crate::image::{Image, Shape};
use crate::nn::{Init, Layer, Sequential, Sgd, Tensor};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub early_stop_patience: Option<usize>,
    /// Start the output layer at zero, so an untrained head is uniform.
    #[serde(default = "default_true")]
    pub zero_init_output: bool,
}

fn default_batch() -> usize {
    16
}

fn default_patience() -> Option<usize> {
    Some(5)
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            backbone: BackboneSpec::tiny(Shape::new(16, 16, 3), 32),
            head_hidden: Vec::new(),
            num_classes: 6,
            epochs: 30,
            learning_rate: 0.001,
            batch_size: default_batch(),
            seed: 0,
            early_stop_patience: default_patience(),
            zero_init_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be positive when set".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
}

/// Feature standardization followed by a small dense network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// Output index to class.
    pub classes: Vec<ClassLabel>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub net: Sequential,
}

impl Head {
    pub fn new(classes: Vec<ClassLabel>, feature_dim: usize, cfg: &TrainConfig) -> Self {
        let mut rng = seed::substream(cfg.seed, "classifier/init");
        let mut layers = Vec::new();
        let mut width = feature_dim;
        for &h in &cfg.head_hidden {
            layers.push(Layer::dense(width, h, Init::He, &mut rng));
            layers.push(Layer::Relu);
            width = h;
        }
        let init = if cfg.zero_init_output { Init::Zeros } else { Init::Normal(0.01) };
        layers.push(Layer::dense(width, classes.len(), init, &mut rng));
        Head {
            classes,
            feature_mean: vec![0.0; feature_dim],
            feature_scale: vec![1.0; feature_dim],
            net: Sequential::new(layers),
        }
    }

    /// Sets the standardization statistics from a training feature matrix.
    pub fn fit_scaler(&mut self, features: &Tensor) {
        let (n, d) = (features.batch(), features.row_len());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        self.feature_scale = var.iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
        self.feature_mean = mean;
    }

    pub fn standardize(&self, features: &Tensor) -> Tensor {
        let d = features.row_len();
        let mut out = features.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.feature_mean[j]) / self.feature_scale[j];
        }
        out
    }

    pub fn probabilities(&self, features: &Tensor) -> Tensor {
        softmax_rows(&self.net.forward(&self.standardize(features)))
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.feature_mean.iter().chain(&self.feature_scale).chain(&self.net.params_flat()) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let (n, k) = (logits.batch(), logits.row_len());
    assert_eq!(n, targets.len(), "one target per row");
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        g[t] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n as f64);
    }
    (loss / n as f64, grad)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub head: Head,
    pub training_curve: Vec<EpochStats>,
    pub stopped_epoch: usize,
    #[serde(skip)]
    backbone: Option<Arc<FeatureExtractor>>,
}

impl TrainedModel {
    /// Digest of the trained head parameters.
    pub fn head_parameters(&self) -> String {
        self.head.checksum()
    }

    pub fn backbone(&self) -> Result<&Arc<FeatureExtractor>> {
        self.backbone
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no attached backbone".into()))
    }

    pub fn attach_backbone(&mut self, fe: Arc<FeatureExtractor>) -> Result<()> {
        if fe.feature_dim() != self.head.feature_mean.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features", self.head.feature_mean.len()),
                actual: format!("{} features", fe.feature_dim()),
            });
        }
        self.backbone = Some(fe);
        Ok(())
    }

    /// Deserializes a model and rebuilds its backbone from the stored spec.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: TrainedModel = serde_json::from_str(text)?;
        let fe = build_backbone(&model.config.backbone)?;
        model.attach_backbone(Arc::new(fe))?;
        Ok(model)
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.head.classes
    }
}

fn targets_for(labels: &[ClassLabel], classes: &[ClassLabel]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::UnknownLabel(l.code().to_string()))
        })
        .collect()
}

fn catalog(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<Vec<ClassLabel>> {
    let classes = ds.present_classes();
    if classes.len() != cfg.num_classes {
        return Err(Error::InvalidArgument(format!(
            "num_classes is {} but the training set has {} classes",
            cfg.num_classes,
            classes.len()
        )));
    }
    Ok(classes)
}

fn check_shape(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if ds.shape() != cfg.backbone.input_shape {
        return Err(Error::ShapeMismatch {
            expected: cfg.backbone.input_shape.to_string(),
            actual: ds.shape().to_string(),
        });
    }
    Ok(())
}

fn full_pass(head: &Head, x: &Tensor, targets: &[usize]) -> EpochStats {
    let logits = head.net.forward(x);
    let (train_loss, _) = cross_entropy(&logits, targets);
    let correct = (0..targets.len()).filter(|&i| argmax(logits.row(i)) == targets[i]).count();
    EpochStats {
        train_loss,
        train_acc: correct as f64 / targets.len() as f64,
    }
}

/// Mini-batch gradient descent. `features_for_epoch(e)` supplies the raw
/// training features for epoch `e`; the scaler is fitted on epoch 0.
fn fit(
    fe: Arc<FeatureExtractor>,
    classes: Vec<ClassLabel>,
    targets: &[usize],
    cfg: &TrainConfig,
    features_for_epoch: &mut dyn FnMut(usize) -> Result<Tensor>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut head = Head::new(classes, fe.feature_dim(), cfg);
    let sgd = Sgd {
        learning_rate: cfg.learning_rate,
    };
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut rng = seed::substream(cfg.seed, "classifier/shuffle");
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let nonfinite = |epoch| Error::NonFiniteLoss {
        epoch,
        learning_rate: cfg.learning_rate,
    };

    for epoch in 0..cfg.epochs {
        let raw = features_for_epoch(epoch)?;
        if epoch == 0 {
            head.fit_scaler(&raw);
        }
        let x = head.standardize(&raw);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let tb: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let tape = head.net.forward_tape(&xb);
            let (loss, grad) = cross_entropy(tape.output(), &tb);
            if !loss.is_finite() {
                return Err(nonfinite(epoch + 1));
            }
            let (_, grads) = head.net.backward(&tape, &grad, true);
            sgd.step(&mut head.net, &grads.expect("parameter gradients requested"));
        }
        let stats = full_pass(&head, &x, targets);
        if !stats.train_loss.is_finite() {
            return Err(nonfinite(epoch + 1));
        }
        log::debug!("epoch {} loss {:.5} acc {:.4}", epoch + 1, stats.train_loss, stats.train_acc);
        curve.push(stats);
        if stats.train_loss < best {
            best = stats.train_loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    Ok(TrainedModel {
        config: cfg.clone(),
        head,
        stopped_epoch: curve.len(),
        training_curve: curve,
        backbone: Some(fe),
    })
}

/// Trains on precomputed backbone features.
pub fn train_on_features(
    fe: Arc<FeatureExtractor>,
    features: &Tensor,
    labels: &[ClassLabel],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let classes: Vec<ClassLabel> = ClassLabel::ALL.into_iter().filter(|c| labels.contains(c)).collect();
    if classes.len() != cfg.num_classes {
        return Err(Error::InvalidArgument(format!(
            "num_classes is {} but the training set has {} classes",
            cfg.num_classes,
            classes.len()
        )));
    }
    if features.batch() != labels.len() {
        return Err(Error::LengthMismatch(features.batch(), labels.len()));
    }
    let targets = targets_for(labels, &classes)?;
    fit(fe, classes, &targets, cfg, &mut |_| Ok(features.clone()))
}

pub fn train_with_backbone(fe: Arc<FeatureExtractor>, train_ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    check_shape(train_ds, cfg)?;
    catalog(train_ds, cfg)?;
    let features = fe.extract_dataset(train_ds)?;
    let labels: Vec<ClassLabel> = train_ds.samples().iter().map(|s| s.label).collect();
    train_on_features(fe, &features, &labels, cfg)
}

pub fn train(train_ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let fe = Arc::new(build_backbone(&cfg.backbone)?);
    train_with_backbone(fe, train_ds, cfg)
}

/// Draws a fresh augmentation of `train_ds` for every epoch.
pub fn train_reaugmented(
    fe: Arc<FeatureExtractor>,
    train_ds: &LabeledDataset,
    cfg: &TrainConfig,
    policy: &AugmentationPolicy,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_shape(train_ds, cfg)?;
    let classes = catalog(train_ds, cfg)?;
    let labels: Vec<ClassLabel> = train_ds.samples().iter().map(|s| s.label).collect();
    let targets = targets_for(&labels, &classes)?;
    let extractor = fe.clone();
    fit(fe, classes, &targets, cfg, &mut |epoch| {
        let p = AugmentationPolicy {
            seed: seed::derive(policy.seed, &format!("epoch/{epoch}")),
            ..*policy
        };
        extractor.extract_dataset(&augment_dataset(train_ds, &p)?)
    })
}

/// Class probabilities, one row per image, columns in `model.classes()` order.
pub fn predict(model: &TrainedModel, images: &[&Image]) -> Result<Tensor> {
    let features = model.backbone()?.extract(images)?;
    Ok(model.head.probabilities(&features))
}

pub fn predict_labels(model: &TrainedModel, images: &[&Image]) -> Result<Vec<ClassLabel>> {
    let p = predict(model, images)?;
    Ok((0..p.batch()).map(|i| model.head.classes[argmax(p.row(i))]).collect())
}

fn report_from_features(model: &TrainedModel, features: &Tensor, truth: &[ClassLabel], condition: Condition) -> Result<EvaluationReport> {
    let p = model.head.probabilities(features);
    let predicted: Vec<ClassLabel> = (0..p.batch()).map(|i| model.head.classes[argmax(p.row(i))]).collect();
    EvaluationReport::from_predictions(condition, truth, &predicted, &model.head.classes)
}

pub fn evaluate(model: &TrainedModel, test_ds: &LabeledDataset, condition: Condition) -> Result<EvaluationReport> {
    let features = model.backbone()?.extract_dataset(test_ds)?;
    let truth: Vec<ClassLabel> = test_ds.samples().iter().map(|s| s.label).collect();
    report_from_features(model, &features, &truth, condition)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub epochs_list: Vec<usize>,
    pub lr_list: Vec<f64>,
    pub backbones: Vec<BackboneSpec>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_list.is_empty() || self.lr_list.is_empty() || self.backbones.is_empty() {
            return Err(Error::InvalidArgument(
                "grid needs at least one epoch count, learning rate and backbone".into(),
            ));
        }
        Ok(())
    }

    /// Grid points in backbone, epochs, learning-rate order.
    pub fn configs(&self, template: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for b in &self.backbones {
            for &epochs in &self.epochs_list {
                for &learning_rate in &self.lr_list {
                    out.push(TrainConfig {
                        backbone: b.clone(),
                        epochs,
                        learning_rate,
                        ..template.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GridRun {
    pub model: TrainedModel,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub config: TrainConfig,
    pub outcome: std::result::Result<GridRun, String>,
}

impl GridResult {
    pub fn accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.report.accuracy)
    }
}

/// Trains and evaluates every grid point. Backbone features are computed
/// once per backbone. Results are ordered by test accuracy, best first,
/// with failed runs last; ties keep grid order.
pub fn run_grid(
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    grid: &GridSpec,
    template: &TrainConfig,
    condition: Condition,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    let train_labels: Vec<ClassLabel> = train_ds.samples().iter().map(|s| s.label).collect();
    let test_labels: Vec<ClassLabel> = test_ds.samples().iter().map(|s| s.label).collect();
    let mut results = Vec::new();
    for spec in &grid.backbones {
        let one = GridSpec {
            backbones: vec![spec.clone()],
            ..grid.clone()
        };
        let configs = one.configs(template);
        let prepared = (|| -> Result<_> {
            let fe = Arc::new(build_backbone(spec)?);
            let cfg0 = &configs[0];
            cfg0.validate()?;
            check_shape(train_ds, cfg0)?;
            let train_f = fe.extract_dataset(train_ds)?;
            let test_f = fe.extract_dataset(test_ds)?;
            Ok((fe, train_f, test_f))
        })();
        match prepared {
            Err(e) => {
                let msg = e.to_string();
                log::warn!("backbone {} unavailable: {msg}", spec.name);
                results.extend(configs.into_iter().map(|config| GridResult {
                    config,
                    outcome: Err(msg.clone()),
                }));
            }
            Ok((fe, train_f, test_f)) => {
                let runs: Vec<GridResult> = configs
                    .into_par_iter()
                    .map(|config| {
                        let outcome = train_on_features(fe.clone(), &train_f, &train_labels, &config)
                            .and_then(|model| {
                                let report = report_from_features(&model, &test_f, &test_labels, condition)?;
                                Ok(GridRun { model, report })
                            })
                            .map_err(|e| e.to_string());
                        if let Err(e) = &outcome {
                            log::warn!("grid point epochs={} lr={} failed: {e}", config.epochs, config.learning_rate);
                        }
                        GridResult { config, outcome }
                    })
                    .collect();
                results.extend(runs);
            }
        }
    }
    results.sort_by(|a, b| match (a.accuracy(), b.accuracy()) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    });
    Ok(results)
}
