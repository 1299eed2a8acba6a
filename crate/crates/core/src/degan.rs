//! Decoder-encoder GAN (DE-GAN) for single-class image synthesis.
//!
//! The generator's input noise is shaped by a variational autoencoder: a
//! standard-normal draw is decoded to an image, re-encoded, and the sampled
//! posterior code is fed to the generator. The generator side minimizes
//! `lambda_adv * L_adv + lambda_hid * L_hid`, where `L_adv` is the
//! non-saturating adversarial loss and `L_hid` the VAE objective
//! (squared-error reconstruction plus KL divergence) on the real batch.
//! The noise path is treated as a constant input to the generator, so each
//! term only sends gradients to its own networks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, ImageSample, LabeledDataset, Origin};
use crate::error::{Error, Result};
use crate::image::{from_nchw, to_nchw, Image, Shape};
use crate::nn::{sigmoid, Adam, Grads, Init, Layer, Sequential, Tensor};
use crate::plot;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub image_shape: Shape,
    pub latent_dim: usize,
    pub lambda_adv: f64,
    pub lambda_hid: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Width of the first conv stage; the second uses twice as many.
    pub base_channels: usize,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Discriminator step size as a multiple of `learning_rate`.
    pub disc_lr_ratio: f64,
    /// Discriminator target for real images; below 1 is one-sided label
    /// smoothing.
    pub real_label: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            image_shape: Shape::new(16, 16, 3),
            latent_dim: 16,
            lambda_adv: 1.0,
            lambda_hid: 1.0,
            epochs: 500,
            learning_rate: 0.002,
            batch_size: 16,
            seed: 0,
            base_channels: 16,
            beta1: 0.5,
            disc_lr_ratio: 0.5,
            real_label: 0.9,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        self.image_shape.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let s = self.image_shape;
        if s.height % 4 != 0 || s.width % 4 != 0 {
            return bad(format!("image height and width must be multiples of 4, got {s}"));
        }
        if self.latent_dim == 0 || self.base_channels == 0 || self.batch_size == 0 {
            return bad("latent_dim, base_channels and batch_size must be positive".into());
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_hid >= 0.0) || self.lambda_adv + self.lambda_hid <= 0.0 {
            return bad(format!(
                "loss weights must be non-negative with a positive sum, got {} and {}",
                self.lambda_adv, self.lambda_hid
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.disc_lr_ratio > 0.0 && self.disc_lr_ratio.is_finite()) {
            return bad(format!("disc_lr_ratio must be positive, got {}", self.disc_lr_ratio));
        }
        if !(self.real_label > 0.5 && self.real_label <= 1.0) {
            return bad(format!("real_label must lie in (0.5, 1], got {}", self.real_label));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("beta1 must lie in [0, 1), got {}", self.beta1));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    /// Combined generator-side loss.
    pub gen_loss: f64,
    pub adv_loss: f64,
    pub hid_loss: f64,
    pub disc_loss: f64,
    /// Discriminator accuracy on the epoch's real and generated batches.
    pub disc_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub config: GanConfig,
    pub label: ClassLabel,
    pub generator: Sequential,
    /// Emits one logit; the real-probability is its sigmoid.
    pub discriminator: Sequential,
    /// Emits `[mu, log_var]`, each `latent_dim` wide.
    pub vae_encoder: Sequential,
    pub vae_decoder: Sequential,
    pub loss_history: Vec<GanEpoch>,
}

/// Dense projection to a quarter-resolution map, then two upsampling conv
/// stages with leaky rectifiers and a sigmoid.
fn image_decoder(cfg: &GanConfig, rng: &mut impl Rng) -> Sequential {
    let s = cfg.image_shape;
    let (c1, c2) = (cfg.base_channels, 2 * cfg.base_channels);
    let (h4, w4) = (s.height / 4, s.width / 4);
    Sequential::new(vec![
        Layer::dense(cfg.latent_dim, c2 * h4 * w4, Init::He, rng),
        Layer::Reshape { dims: vec![c2, h4, w4] },
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Upsample2x,
        Layer::conv(c2, c1, 3, 1, 1, Init::He, rng),
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Upsample2x,
        Layer::conv(c1, s.channels, 3, 1, 1, Init::He, rng),
        Layer::Sigmoid,
    ])
}

/// Two stride-2 conv stages with leaky rectifiers, then a dense read-out.
fn image_encoder(cfg: &GanConfig, outputs: usize, rng: &mut impl Rng) -> Sequential {
    let s = cfg.image_shape;
    let (c1, c2) = (cfg.base_channels, 2 * cfg.base_channels);
    Sequential::new(vec![
        Layer::conv(s.channels, c1, 4, 2, 1, Init::He, rng),
        Layer::LeakyRelu { slope: 0.2 },
        Layer::conv(c1, c2, 4, 2, 1, Init::He, rng),
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Flatten,
        Layer::dense(c2 * (s.height / 4) * (s.width / 4), outputs, Init::Normal(0.02), rng),
    ])
}

impl GanModel {
    pub fn new(cfg: &GanConfig, label: ClassLabel) -> Result<Self> {
        cfg.validate()?;
        let init = |name: &str| seed::substream(cfg.seed, &format!("degan/init/{name}"));
        Ok(GanModel {
            config: cfg.clone(),
            label,
            generator: image_decoder(cfg, &mut init("generator")),
            discriminator: image_encoder(cfg, 1, &mut init("discriminator")),
            vae_encoder: image_encoder(cfg, 2 * cfg.latent_dim, &mut init("encoder")),
            vae_decoder: image_decoder(cfg, &mut init("decoder")),
            loss_history: Vec::new(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.config.image_shape
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn normal_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// Discriminator cross-entropy on a real and a generated batch, with its
/// accuracy and parameter gradients. Real images are scored against the
/// target `real_label` (1 for plain cross-entropy).
pub fn discriminator_loss(d: &Sequential, real: &Tensor, fake: &Tensor, real_label: f64) -> (f64, f64, Grads) {
    let (nr, nf) = (real.batch() as f64, fake.batch() as f64);
    let t = real_label;
    let tr = d.forward_tape(real);
    let tf = d.forward_tape(fake);
    let lr = tr.output().data();
    let lf = tf.output().data();
    let loss = lr.iter().map(|&l| t * softplus(-l) + (1.0 - t) * softplus(l)).sum::<f64>() / nr
        + lf.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
    let correct = lr.iter().filter(|&&l| l > 0.0).count() + lf.iter().filter(|&&l| l < 0.0).count();
    let gr = Tensor::new(tr.output().shape().to_vec(), lr.iter().map(|&l| (sigmoid(l) - t) / nr).collect());
    let gf = Tensor::new(tf.output().shape().to_vec(), lf.iter().map(|&l| sigmoid(l) / nf).collect());
    let mut grads = d.backward(&tr, &gr, true).1.expect("requested");
    grads.add(&d.backward(&tf, &gf, true).1.expect("requested"));
    (loss, correct as f64 / (nr + nf), grads)
}

/// Non-saturating generator loss `mean(softplus(-D(G(z))))` and the
/// generator parameter gradients.
pub fn adversarial_loss(g: &Sequential, d: &Sequential, z: &Tensor) -> (f64, Grads) {
    let tg = g.forward_tape(z);
    let td = d.forward_tape(tg.output());
    let logits = td.output().data();
    let n = logits.len() as f64;
    let loss = logits.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    let gl = Tensor::new(td.output().shape().to_vec(), logits.iter().map(|&l| (sigmoid(l) - 1.0) / n).collect());
    let (dx, _) = d.backward(&td, &gl, false);
    let (_, grads) = g.backward(&tg, &dx, true);
    (loss, grads.expect("requested"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Batch-mean VAE objective for reparameterization noise `eps`, with
/// encoder and decoder gradients.
pub fn vae_loss(enc: &Sequential, dec: &Sequential, x: &Tensor, eps: &Tensor) -> (VaeTerms, Grads, Grads) {
    let n = x.batch();
    let latent = eps.row_len();
    let te = enc.forward_tape(x);
    let h = te.output();
    let mut z = Tensor::zeros(vec![n, latent]);
    let mut kl = 0.0;
    for i in 0..n {
        let row = h.row(i);
        for j in 0..latent {
            let (mu, lv) = (row[j], row[latent + j]);
            z.data_mut()[i * latent + j] = mu + (0.5 * lv).exp() * eps.row(i)[j];
            kl += -0.5 * (1.0 + lv - mu * mu - lv.exp());
        }
    }
    let td = dec.forward_tape(&z);
    let xh = td.output();
    let mut recon = 0.0;
    let mut gx = Tensor::zeros(xh.shape().to_vec());
    for (k, (a, b)) in xh.data().iter().zip(x.data()).enumerate() {
        recon += (a - b).powi(2);
        gx.data_mut()[k] = 2.0 * (a - b) / n as f64;
    }
    let (dz, gdec) = dec.backward(&td, &gx, true);
    let mut gh = Tensor::zeros(h.shape().to_vec());
    for i in 0..n {
        let row = h.row(i);
        for j in 0..latent {
            let (mu, lv) = (row[j], row[latent + j]);
            let d = dz.row(i)[j];
            let e = eps.row(i)[j];
            let dst = gh.data_mut();
            dst[i * 2 * latent + j] = d + mu / n as f64;
            dst[i * 2 * latent + latent + j] = d * 0.5 * (0.5 * lv).exp() * e + 0.5 * (lv.exp() - 1.0) / n as f64;
        }
    }
    let (_, genc) = enc.backward(&te, &gh, true);
    let (recon, kl) = (recon / n as f64, kl / n as f64);
    (
        VaeTerms {
            total: recon + kl,
            reconstruction: recon,
            kl,
        },
        genc.expect("requested"),
        gdec.expect("requested"),
    )
}

/// Samples `z = mu + sigma * eps'` from encoder outputs; log-variances are
/// clamped to keep inference finite.
fn sample_posterior(h: &Tensor, latent: usize, rng: &mut impl Rng) -> Tensor {
    let n = h.batch();
    let mut z = Tensor::zeros(vec![n, latent]);
    for i in 0..n {
        let row = h.row(i);
        for j in 0..latent {
            let e: f64 = rng.sample(StandardNormal);
            z.data_mut()[i * latent + j] = row[j] + (0.5 * row[latent + j].clamp(-20.0, 20.0)).exp() * e;
        }
    }
    z
}

/// Generator inputs drawn through the decoder-encoder noise path.
pub fn noise_codes(model: &GanModel, n: usize, rng: &mut impl Rng) -> Tensor {
    let latent = model.config.latent_dim;
    let eps = normal_tensor(n, latent, rng);
    let decoded = model.vae_decoder.forward(&eps);
    let h = model.vae_encoder.forward(&decoded);
    sample_posterior(&h, latent, rng)
}

/// Runs the generator on explicit inputs.
pub fn render(model: &GanModel, z: &Tensor) -> Vec<Image> {
    from_nchw(&model.generator.forward(z), model.shape())
}

/// Side effects during training.
#[derive(Clone, Debug, Default)]
pub struct TrainHooks {
    pub checkpoint_dir: Option<PathBuf>,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub sample_dir: Option<PathBuf>,
    /// Write a sample sheet every this many epochs (0 disables).
    pub sample_every: usize,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &GanModel, path: &Path) -> Result<()> {
    write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<GanModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: GanModel = serde_json::from_str(&text)?;
    model.config.validate()?;
    Ok(model)
}

/// Writes a grid of `n` samples drawn with a fixed seed.
pub fn write_sample_sheet(model: &GanModel, n: usize, seed: u64, path: &Path) -> Result<()> {
    let ds = generate(model, n, seed)?;
    let imgs: Vec<&Image> = ds.samples().iter().map(|s| s.pixels.as_ref()).collect();
    let cols = (n as f64).sqrt().ceil() as usize;
    let sheet = plot::sample_sheet(&imgs, cols)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    sheet.to_rgb8().save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn train_gan(class_ds: &LabeledDataset, cfg: &GanConfig) -> Result<GanModel> {
    train_gan_with_hooks(class_ds, cfg, &TrainHooks::default())
}

pub fn train_gan_with_hooks(class_ds: &LabeledDataset, cfg: &GanConfig, hooks: &TrainHooks) -> Result<GanModel> {
    cfg.validate()?;
    let classes = class_ds.present_classes();
    let label = match classes.as_slice() {
        [only] => *only,
        [] => return Err(Error::InvalidArgument("GAN training set is empty".into())),
        many => {
            return Err(Error::InvalidArgument(format!(
                "GAN training needs a single class, got {}",
                many.iter().map(|c| c.code()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    if class_ds.shape() != cfg.image_shape {
        return Err(Error::ShapeMismatch {
            expected: cfg.image_shape.to_string(),
            actual: class_ds.shape().to_string(),
        });
    }

    let mut model = GanModel::new(cfg, label)?;
    let opt = |net: &Sequential| Adam::new(net, cfg.learning_rate, cfg.beta1, 0.999);
    let mut opt_g = opt(&model.generator);
    let mut opt_d = Adam::new(&model.discriminator, cfg.learning_rate * cfg.disc_lr_ratio, cfg.beta1, 0.999);
    let mut opt_e = opt(&model.vae_encoder);
    let mut opt_dec = opt(&model.vae_decoder);
    let mut rng = seed::substream(cfg.seed, "degan/train");

    let images: Vec<&Image> = class_ds.samples().iter().map(|s| s.pixels.as_ref()).collect();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let batch = cfg.batch_size.min(images.len());
    let mut last_good: Option<PathBuf> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut adv_sum, mut hid_sum, mut disc_sum, mut acc_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut seen = 0.0;
        for idx in order.chunks(batch) {
            let b = idx.len();
            let real = to_nchw(&idx.iter().map(|&i| images[i]).collect::<Vec<_>>(), cfg.image_shape);

            let z = noise_codes(&model, b, &mut rng);
            let fake = model.generator.forward(&z);
            let (d_loss, d_acc, gd) = discriminator_loss(&model.discriminator, &real, &fake, cfg.real_label);
            opt_d.step(&mut model.discriminator, &gd);

            let (adv, mut gg) = adversarial_loss(&model.generator, &model.discriminator, &z);
            if cfg.lambda_adv > 0.0 {
                gg.scale(cfg.lambda_adv);
                opt_g.step(&mut model.generator, &gg);
            }

            let eps = normal_tensor(b, cfg.latent_dim, &mut rng);
            let (terms, mut ge, mut gdec) = vae_loss(&model.vae_encoder, &model.vae_decoder, &real, &eps);
            if cfg.lambda_hid > 0.0 {
                ge.scale(cfg.lambda_hid);
                gdec.scale(cfg.lambda_hid);
                opt_e.step(&mut model.vae_encoder, &ge);
                opt_dec.step(&mut model.vae_decoder, &gdec);
            }

            let w = b as f64;
            adv_sum += adv * w;
            hid_sum += terms.total * w;
            disc_sum += d_loss * w;
            acc_sum += d_acc * w;
            seen += w;
        }
        let adv_loss = adv_sum / seen;
        let hid_loss = hid_sum / seen;
        let record = GanEpoch {
            gen_loss: cfg.lambda_adv * adv_loss + cfg.lambda_hid * hid_loss,
            adv_loss,
            hid_loss,
            disc_loss: disc_sum / seen,
            disc_acc: acc_sum / seen,
        };
        let finite = [record.gen_loss, record.disc_loss].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::GanDiverged { epoch, last_good });
        }
        model.loss_history.push(record);
        log::debug!(
            "epoch {epoch}: gen {:.4} adv {:.4} hid {:.4} disc {:.4} acc {:.3}",
            record.gen_loss,
            record.adv_loss,
            record.hid_loss,
            record.disc_loss,
            record.disc_acc
        );

        if let Some(dir) = &hooks.checkpoint_dir {
            if hooks.checkpoint_every > 0 && epoch % hooks.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{epoch:05}.json"));
                save_model(&model, &path)?;
                last_good = Some(path);
            }
        }
        if let Some(dir) = &hooks.sample_dir {
            if hooks.sample_every > 0 && epoch % hooks.sample_every == 0 {
                write_sample_sheet(&model, 16, cfg.seed, &dir.join(format!("samples_{epoch:05}.png")))?;
            }
        }
    }
    Ok(model)
}

/// `n` synthetic samples labeled with the model's class.
pub fn generate(model: &GanModel, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("generate needs n >= 1".into()));
    }
    let mut rng = seed::substream(seed, "degan/generate");
    let z = noise_codes(model, n, &mut rng);
    let samples = render(model, &z)
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            ImageSample::new(
                img,
                model.label,
                format!("gan/{}/{seed}/{i:04}", model.label.code()),
                Origin::GanSynthetic,
            )
        })
        .collect();
    LabeledDataset::new(model.shape(), samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub mean_pairwise_distance: f64,
    pub min_pairwise_distance: f64,
    pub collapse_flag: bool,
}

/// Pairwise mean per-pixel absolute distances among `images`.
pub fn diversity_of(images: &[&Image], threshold: f64) -> Result<DiversityReport> {
    if images.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs at least two images".into()));
    }
    let (mut sum, mut min, mut pairs) = (0.0, f64::INFINITY, 0usize);
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let d = images[i].mean_abs_diff(images[j]);
            sum += d;
            min = min.min(d);
            pairs += 1;
        }
    }
    let mean = sum / pairs as f64;
    Ok(DiversityReport {
        mean_pairwise_distance: mean,
        min_pairwise_distance: min.min(mean),
        collapse_flag: mean < threshold,
    })
}

pub fn diversity(model: &GanModel, n: usize, threshold: f64, seed: u64) -> Result<DiversityReport> {
    if n < 2 {
        return Err(Error::InvalidArgument("diversity needs n >= 2".into()));
    }
    let ds = generate(model, n, seed)?;
    let imgs: Vec<&Image> = ds.samples().iter().map(|s| s.pixels.as_ref()).collect();
    diversity_of(&imgs, threshold)
}

fn check_batch(model: &GanModel, batch: &[&Image]) -> Result<()> {
    if let Some(bad) = batch.iter().find(|i| i.shape() != model.shape()) {
        return Err(Error::ShapeMismatch {
            expected: model.shape().to_string(),
            actual: bad.shape().to_string(),
        });
    }
    Ok(())
}

/// Encoder, posterior sample, decoder.
pub fn reconstruct(model: &GanModel, batch: &[&Image], seed: u64) -> Result<Vec<Image>> {
    check_batch(model, batch)?;
    let mut rng = seed::substream(seed, "degan/reconstruct");
    let h = model.vae_encoder.forward(&to_nchw(batch, model.shape()));
    let z = sample_posterior(&h, model.config.latent_dim, &mut rng);
    Ok(from_nchw(&model.vae_decoder.forward(&z), model.shape()))
}

/// Decodes prior draws, for comparison with [`reconstruct`].
pub fn decode_prior(model: &GanModel, n: usize, seed: u64) -> Vec<Image> {
    let mut rng = seed::substream(seed, "degan/prior");
    let z = normal_tensor(n, model.config.latent_dim, &mut rng);
    from_nchw(&model.vae_decoder.forward(&z), model.shape())
}

/// Probability that the discriminator calls each image real.
pub fn discriminate(model: &GanModel, batch: &[&Image]) -> Result<Vec<f64>> {
    check_batch(model, batch)?;
    let logits = model.discriminator.forward(&to_nchw(batch, model.shape()));
    Ok(logits.data().iter().map(|&l| sigmoid(l)).collect())
}

/// Accuracy on `real` plus an equal number of fresh generated images.
pub fn discriminator_accuracy(model: &GanModel, real: &[&Image], seed: u64) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::InvalidArgument("held-out batch is empty".into()));
    }
    let fake = generate(model, real.len(), seed)?;
    let fake: Vec<&Image> = fake.samples().iter().map(|s| s.pixels.as_ref()).collect();
    let pr = discriminate(model, real)?;
    let pf = discriminate(model, &fake)?;
    let correct = pr.iter().filter(|&&p| p > 0.5).count() + pf.iter().filter(|&&p| p < 0.5).count();
    Ok(correct as f64 / (2 * real.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error};
    use rand::SeedableRng;

    fn micro() -> GanConfig {
        GanConfig {
            image_shape: Shape::new(4, 4, 3),
            latent_dim: 3,
            base_channels: 2,
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        }
    }

    fn naive_bce(logits: &[f64], target: f64) -> f64 {
        let mut total = 0.0;
        for &l in logits {
            let p = 1.0 / (1.0 + (-l).exp());
            total -= target * p.ln() + (1.0 - target) * (1.0 - p).ln();
        }
        total / logits.len() as f64
    }

    fn random_batch(n: usize, shape: Shape, rng: &mut impl Rng) -> Tensor {
        let len = shape.len();
        Tensor::new(
            vec![n, shape.channels, shape.height, shape.width],
            (0..n * len).map(|_| rng.random::<f64>()).collect(),
        )
    }

    fn check(analytic: &[f64], params: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) {
        for i in 0..params.len() {
            let num = central_difference(params, i, 1e-5, &mut loss);
            let err = relative_error(analytic[i], num);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {num} err {err}", analytic[i]);
        }
    }

    /// Micro model with weights spread away from initialization so that
    /// gradients sit well above finite-difference roundoff.
    fn micro_model(rng: &mut impl Rng) -> GanModel {
        let mut model = GanModel::new(&micro(), ClassLabel::D).unwrap();
        for net in [
            &mut model.generator,
            &mut model.discriminator,
            &mut model.vae_encoder,
            &mut model.vae_decoder,
        ] {
            let p: Vec<f64> = net.params_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            net.set_params_flat(&p);
        }
        model
    }

    #[test]
    fn discriminator_gradients() {
        let cfg = micro();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let model = micro_model(&mut rng);
        let real = random_batch(2, cfg.image_shape, &mut rng);
        let fake = random_batch(2, cfg.image_shape, &mut rng);
        for target in [1.0, 0.9] {
            let (_, _, g) = discriminator_loss(&model.discriminator, &real, &fake, target);
            let mut probe = model.discriminator.clone();
            let mut p = probe.params_flat();
            check(&g.flat(), &mut p, |q| {
                probe.set_params_flat(q);
                naive_bce(probe.forward(&real).data(), target) + naive_bce(probe.forward(&fake).data(), 0.0)
            });
        }
    }

    #[test]
    fn generator_gradients() {
        let cfg = micro();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let model = micro_model(&mut rng);
        let z = normal_tensor(2, cfg.latent_dim, &mut rng);
        let (_, g) = adversarial_loss(&model.generator, &model.discriminator, &z);
        let mut probe = model.generator.clone();
        let mut p = probe.params_flat();
        check(&g.flat(), &mut p, |q| {
            probe.set_params_flat(q);
            naive_bce(model.discriminator.forward(&probe.forward(&z)).data(), 1.0)
        });
    }

    /// Direct evaluation of the VAE objective from forward passes only.
    fn naive_vae(enc: &Sequential, dec: &Sequential, x: &Tensor, eps: &Tensor) -> f64 {
        let l = eps.row_len();
        let h = enc.forward(x);
        let mut z = Vec::new();
        let mut kl = 0.0;
        for i in 0..x.batch() {
            for j in 0..l {
                let (mu, lv) = (h.row(i)[j], h.row(i)[l + j]);
                z.push(mu + (lv / 2.0).exp() * eps.row(i)[j]);
                kl += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
            }
        }
        let xh = dec.forward(&Tensor::new(vec![x.batch(), l], z));
        let se: f64 = xh.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        (se + kl) / x.batch() as f64
    }

    #[test]
    fn vae_gradients() {
        let cfg = micro();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = micro_model(&mut rng);
        let x = random_batch(2, cfg.image_shape, &mut rng);
        let eps = normal_tensor(2, cfg.latent_dim, &mut rng);
        let (terms, ge, gd) = vae_loss(&model.vae_encoder, &model.vae_decoder, &x, &eps);
        assert!((terms.total - naive_vae(&model.vae_encoder, &model.vae_decoder, &x, &eps)).abs() < 1e-10);

        let mut enc = model.vae_encoder.clone();
        let mut p = enc.params_flat();
        check(&ge.flat(), &mut p, |q| {
            enc.set_params_flat(q);
            naive_vae(&enc, &model.vae_decoder, &x, &eps)
        });
        let mut dec = model.vae_decoder.clone();
        let mut p = dec.params_flat();
        check(&gd.flat(), &mut p, |q| {
            dec.set_params_flat(q);
            naive_vae(&model.vae_encoder, &dec, &x, &eps)
        });
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        for bad in [
            GanConfig { lambda_adv: 0.0, lambda_hid: 0.0, ..Default::default() },
            GanConfig { epochs: 0, ..Default::default() },
            GanConfig { image_shape: Shape::new(10, 16, 3), ..Default::default() },
            GanConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn multi_class_input_is_rejected() {
        let ds = crate::synth::wound_dataset(&[ClassLabel::D, ClassLabel::P], 2, Shape::new(4, 4, 3), 0).unwrap();
        assert!(train_gan(&ds, &micro()).is_err());
    }

    #[test]
    fn diversity_extremes() {
        let s = Shape::new(4, 4, 3);
        let black = Image::filled(s, 0.0);
        let white = Image::filled(s, 1.0);
        let r = diversity_of(&[&black, &white], 0.01).unwrap();
        assert_eq!(r.mean_pairwise_distance, 1.0);
        let r = diversity_of(&[&black, &black, &black], 1e-12).unwrap();
        assert_eq!((r.mean_pairwise_distance, r.min_pairwise_distance, r.collapse_flag), (0.0, 0.0, true));
    }
}
