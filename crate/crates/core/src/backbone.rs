//! Frozen feature extractors for transfer learning.
//!
//! `tiny-cnn` is bundled and built from a seeded initialization. The
//! pretrained adapters load ONNX exports of the standard ImageNet models and
//! require the `onnx` cargo feature plus locally available weight files.

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::{to_nchw, Image, Shape};
use crate::nn::{Init, Layer, Sequential, Tensor};
use crate::seed;

/// Environment variable naming a directory of `<model>.onnx` weight files.
pub const WEIGHTS_DIR_ENV: &str = "WOUNDAUG_WEIGHTS_DIR";

const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneName {
    TinyCnn,
    Mobilenetv2Adapter,
    Resnet50Adapter,
    Vgg16Adapter,
}

impl BackboneName {
    pub const ALL: [BackboneName; 4] = [
        BackboneName::TinyCnn,
        BackboneName::Mobilenetv2Adapter,
        BackboneName::Resnet50Adapter,
        BackboneName::Vgg16Adapter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::TinyCnn => "tiny-cnn",
            BackboneName::Mobilenetv2Adapter => "mobilenetv2-adapter",
            BackboneName::Resnet50Adapter => "resnet50-adapter",
            BackboneName::Vgg16Adapter => "vgg16-adapter",
        }
    }

    pub fn is_adapter(self) -> bool {
        self != BackboneName::TinyCnn
    }

    /// File stem of the expected ONNX export.
    pub fn weights_stem(self) -> Option<&'static str> {
        match self {
            BackboneName::TinyCnn => None,
            BackboneName::Mobilenetv2Adapter => Some("mobilenetv2"),
            BackboneName::Resnet50Adapter => Some("resnet50"),
            BackboneName::Vgg16Adapter => Some("vgg16"),
        }
    }

    /// Pooled feature width of the published model.
    pub fn published_feature_dim(self) -> Option<usize> {
        match self {
            BackboneName::TinyCnn => None,
            BackboneName::Mobilenetv2Adapter => Some(1280),
            BackboneName::Resnet50Adapter => Some(2048),
            BackboneName::Vgg16Adapter => Some(512),
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneName::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = BackboneName::ALL.iter().map(|b| b.as_str()).collect();
            Error::InvalidArgument(format!("unknown backbone {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub input_shape: Shape,
    /// Output width. Adapters overwrite this with the width of the loaded model.
    pub feature_dim: usize,
    #[serde(default = "default_true")]
    pub frozen: bool,
    /// Seed for the bundled backbone's initialization.
    #[serde(default)]
    pub init_seed: u64,
    /// Explicit weight file for adapters; otherwise looked up in
    /// `$WOUNDAUG_WEIGHTS_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

impl BackboneSpec {
    pub fn tiny(input_shape: Shape, feature_dim: usize) -> Self {
        BackboneSpec {
            name: BackboneName::TinyCnn,
            input_shape,
            feature_dim,
            frozen: true,
            init_seed: 0,
            weights: None,
        }
    }

    pub fn adapter(name: BackboneName) -> Self {
        BackboneSpec {
            name,
            input_shape: Shape::new(224, 224, 3),
            feature_dim: name.published_feature_dim().unwrap_or(1),
            frozen: true,
            init_seed: 0,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input_shape.validate()?;
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be at least 1".into()));
        }
        if !self.frozen {
            return Err(Error::InvalidArgument(
                "backbone fine-tuning is not supported; set frozen = true".into(),
            ));
        }
        if self.name == BackboneName::TinyCnn && (self.input_shape.height < 4 || self.input_shape.width < 4) {
            return Err(Error::InvalidArgument(format!(
                "tiny-cnn needs inputs of at least 4x4, got {}",
                self.input_shape
            )));
        }
        if self.name.is_adapter() && self.input_shape.channels != 3 {
            return Err(Error::InvalidArgument(format!("{} expects 3-channel input", self.name)));
        }
        Ok(())
    }

    /// Resolves the adapter weight file without loading it.
    pub fn locate_weights(&self) -> Result<PathBuf> {
        let Some(stem) = self.name.weights_stem() else {
            return Err(Error::InvalidArgument(format!("{} has no pretrained weights", self.name)));
        };
        let path = match (&self.weights, env::var_os(WEIGHTS_DIR_ENV)) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => Path::new(&dir).join(format!("{stem}.onnx")),
            (None, None) => {
                return Err(Error::MissingWeights {
                    backbone: self.name.to_string(),
                    detail: format!("no weights path configured and {WEIGHTS_DIR_ENV} is unset.\n{}", fetch_help(stem)),
                })
            }
        };
        if !path.is_file() {
            return Err(Error::MissingWeights {
                backbone: self.name.to_string(),
                detail: format!("{} does not exist.\n{}", path.display(), fetch_help(stem)),
            });
        }
        Ok(path)
    }
}

fn fetch_help(stem: &str) -> String {
    format!(
        "Export the ImageNet weights with `python scripts/export_backbones.py --out <dir> {stem}` \
         (requires torch, torchvision and onnx), which writes {stem}.onnx and {stem}.onnx.sha256; \
         then set {WEIGHTS_DIR_ENV}=<dir> or the backbone `weights` key."
    )
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Checks `path` against the digest in `path.sha256`.
pub fn verify_checksum(path: &Path) -> Result<()> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".sha256");
    let sidecar = PathBuf::from(sidecar);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let expected = text.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
    let actual = sha256_file(path)?;
    if expected != actual {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

enum Inner {
    Tiny(Sequential),
    #[cfg(feature = "onnx")]
    Onnx(onnx::Adapter),
}

/// An immutable image-batch to feature-batch map.
pub struct FeatureExtractor {
    spec: BackboneSpec,
    inner: Inner,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("spec", &self.spec)
            .field("checksum", &self.checksum())
            .finish()
    }
}

fn tiny_cnn(spec: &BackboneSpec) -> Sequential {
    let mut rng = seed::substream(spec.init_seed, "backbone/tiny-cnn");
    let c = spec.input_shape.channels;
    Sequential::new(vec![
        Layer::conv(c, 8, 3, 1, 1, Init::He, &mut rng),
        Layer::Relu,
        Layer::MaxPool2x,
        Layer::conv(8, 16, 3, 1, 1, Init::He, &mut rng),
        Layer::Relu,
        Layer::MaxPool2x,
        Layer::conv(16, spec.feature_dim, 3, 1, 1, Init::He, &mut rng),
        Layer::Relu,
        Layer::GlobalAvgPool,
    ])
}

pub fn build_backbone(spec: &BackboneSpec) -> Result<FeatureExtractor> {
    spec.validate()?;
    match spec.name {
        BackboneName::TinyCnn => Ok(FeatureExtractor {
            spec: spec.clone(),
            inner: Inner::Tiny(tiny_cnn(spec)),
        }),
        _ => build_adapter(spec),
    }
}

#[cfg(feature = "onnx")]
fn build_adapter(spec: &BackboneSpec) -> Result<FeatureExtractor> {
    let path = spec.locate_weights()?;
    verify_checksum(&path)?;
    let adapter = onnx::Adapter::load(&path, spec.input_shape)?;
    let mut spec = spec.clone();
    if spec.feature_dim != adapter.feature_dim {
        log::info!(
            "{}: using the model's feature width {} instead of the configured {}",
            spec.name,
            adapter.feature_dim,
            spec.feature_dim
        );
        spec.feature_dim = adapter.feature_dim;
    }
    spec.weights = Some(path);
    Ok(FeatureExtractor {
        spec,
        inner: Inner::Onnx(adapter),
    })
}

#[cfg(not(feature = "onnx"))]
fn build_adapter(spec: &BackboneSpec) -> Result<FeatureExtractor> {
    let path = spec.locate_weights()?;
    verify_checksum(&path)?;
    Err(Error::Backend(format!(
        "{} requires building with `--features onnx`",
        spec.name
    )))
}

impl FeatureExtractor {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    /// Frozen extractors expose no trainable parameters.
    pub fn trainable_parameter_count(&self) -> usize {
        0
    }

    /// SHA-256 over the parameters (tiny-cnn) or the weight file digest
    /// (adapters).
    pub fn checksum(&self) -> String {
        match &self.inner {
            Inner::Tiny(net) => net.checksum(),
            #[cfg(feature = "onnx")]
            Inner::Onnx(a) => a.digest.clone(),
        }
    }

    /// Maps `N` images to an `(N, feature_dim)` tensor.
    pub fn extract(&self, images: &[&Image]) -> Result<Tensor> {
        let shape = self.spec.input_shape;
        if let Some(bad) = images.iter().find(|img| img.shape() != shape) {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                actual: bad.shape().to_string(),
            });
        }
        let d = self.feature_dim();
        let chunks: Vec<Result<Vec<f64>>> = images
            .par_chunks(CHUNK)
            .map(|chunk| match &self.inner {
                Inner::Tiny(net) => {
                    let out = net.forward(&to_nchw(chunk, shape));
                    Ok(out.into_data())
                }
                #[cfg(feature = "onnx")]
                Inner::Onnx(a) => a.run(chunk),
            })
            .collect();
        let mut data = Vec::with_capacity(images.len() * d);
        for c in chunks {
            data.extend(c?);
        }
        Ok(Tensor::new(vec![images.len(), d], data))
    }

    pub fn extract_dataset(&self, ds: &LabeledDataset) -> Result<Tensor> {
        let images: Vec<&Image> = ds.samples().iter().map(|s| s.pixels.as_ref()).collect();
        self.extract(&images)
    }
}

#[cfg(feature = "onnx")]
mod onnx {
    use std::path::Path;

    use tract_onnx::prelude::*;

    use crate::error::{Error, Result};
    use crate::image::{Image, Shape};

    const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
    const STD: [f32; 3] = [0.229, 0.224, 0.225];

    type Plan = std::sync::Arc<TypedRunnableModel>;

    pub(super) struct Adapter {
        plan: Plan,
        shape: Shape,
        pub(super) feature_dim: usize,
        pub(super) digest: String,
    }

    fn backend(e: impl std::fmt::Display) -> Error {
        Error::Backend(e.to_string())
    }

    impl Adapter {
        pub(super) fn load(path: &Path, shape: Shape) -> Result<Self> {
            let (h, w) = (shape.height, shape.width);
            let model = tract_onnx::onnx()
                .model_for_path(path)
                .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, h, w]).into()))
                .and_then(|m| m.into_optimized())
                .map_err(backend)?;
            let fact = model.output_fact(0).map_err(backend)?;
            let dims = fact
                .shape
                .as_concrete()
                .ok_or_else(|| Error::Backend("model output shape is not concrete".into()))?;
            let feature_dim: usize = dims.iter().skip(1).product();
            let plan = model.into_runnable().map_err(backend)?;
            Ok(Adapter {
                plan,
                shape,
                feature_dim,
                digest: super::sha256_file(path)?,
            })
        }

        pub(super) fn run(&self, images: &[&Image]) -> Result<Vec<f64>> {
            let (h, w) = (self.shape.height, self.shape.width);
            let mut out = Vec::with_capacity(images.len() * self.feature_dim);
            for img in images {
                let px = img.data();
                let input = tract_ndarray::Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
                    (px[(y * w + x) * 3 + c] - MEAN[c]) / STD[c]
                });
                let result = self.plan.run(tvec!(Tensor::from(input).into())).map_err(backend)?;
                let view = result[0].to_plain_array_view::<f32>().map_err(backend)?;
                out.extend(view.iter().map(|&v| v as f64));
            }
            Ok(out)
        }
    }
}
