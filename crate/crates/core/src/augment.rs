//! Seeded geometric augmentation: rotation about the image center and
//! additive brightness shifts.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageSample, LabeledDataset, Origin};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    ConstantBlack,
    #[default]
    NearestEdge,
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant-black" => Ok(FillMode::ConstantBlack),
            "nearest-edge" => Ok(FillMode::NearestEdge),
            _ => Err(Error::InvalidArgument(format!(
                "unknown fill mode {s:?}; valid modes are constant-black, nearest-edge"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub rotation_max_deg: f64,
    pub brightness_max_delta: f64,
    pub fill_mode: FillMode,
    pub seed: u64,
    /// Apply rotation and brightness to every image instead of one of them.
    pub compose_both: bool,
    /// Draw brightness deltas from `[-max, max]` rather than `[0, max]`.
    pub signed_brightness: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            rotation_max_deg: 30.0,
            brightness_max_delta: 0.2,
            fill_mode: FillMode::NearestEdge,
            seed: 0,
            compose_both: false,
            signed_brightness: false,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::InvalidArgument(format!(
                "rotation_max_deg must lie in [0, 180], got {}",
                self.rotation_max_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.brightness_max_delta) {
            return Err(Error::InvalidArgument(format!(
                "brightness_max_delta must lie in [0, 1], got {}",
                self.brightness_max_delta
            )));
        }
        Ok(())
    }
}

/// Rotates counter-clockwise by `angle_deg` about the pixel-grid center with
/// bilinear resampling.
pub fn rotate_image(img: &Image, angle_deg: f64, fill: FillMode) -> Image {
    assert!(
        (-180.0..=180.0).contains(&angle_deg),
        "rotation angle {angle_deg} outside [-180, 180]"
    );
    let shape = img.shape();
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Image::filled(shape, 0.0);
    let mut acc = vec![0f64; ch];

    let fetch = |y: isize, x: isize, c: usize| -> f64 {
        match fill {
            FillMode::NearestEdge => {
                let yy = y.clamp(0, h as isize - 1) as usize;
                let xx = x.clamp(0, w as isize - 1) as usize;
                img.get(yy, xx, c) as f64
            }
            FillMode::ConstantBlack => {
                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                    0.0
                } else {
                    img.get(y as usize, x as usize, c) as f64
                }
            }
        }
    };

    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wgt * fetch(y0 + oy, x0 + ox, c);
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(y, x, c, a.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

pub fn brighten_image(img: &Image, delta: f64) -> Image {
    assert!(delta.abs() <= 1.0, "brightness delta {delta} outside [-1, 1]");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + delta).clamp(0.0, 1.0) as f32;
    }
    out
}

fn derived(sample: &ImageSample, pixels: Image) -> ImageSample {
    ImageSample {
        pixels: Arc::new(pixels),
        label: sample.label,
        source_id: sample.source_id.clone(),
        origin: Origin::GeometricAug,
        file: None,
    }
}

pub fn rotate(sample: &ImageSample, angle_deg: f64, fill: FillMode) -> ImageSample {
    derived(sample, rotate_image(&sample.pixels, angle_deg, fill))
}

pub fn adjust_brightness(sample: &ImageSample, delta: f64) -> ImageSample {
    derived(sample, brighten_image(&sample.pixels, delta))
}

/// The random draws made for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub angle_deg: f64,
    pub delta: f64,
    pub rotate: bool,
}

/// Draws are taken from a per-index substream so that the outcome does not
/// depend on evaluation order.
pub fn draw(policy: &AugmentationPolicy, index: usize) -> Draw {
    let mut rng = seed::substream(policy.seed, &format!("augment/{index}"));
    let u_angle: f64 = rng.random();
    let u_delta: f64 = rng.random();
    let rotate: bool = rng.random();
    let delta = if policy.signed_brightness {
        (2.0 * u_delta - 1.0) * policy.brightness_max_delta
    } else {
        u_delta * policy.brightness_max_delta
    };
    Draw {
        angle_deg: u_angle * policy.rotation_max_deg,
        delta,
        rotate,
    }
}

fn apply(sample: &ImageSample, policy: &AugmentationPolicy, d: Draw) -> ImageSample {
    let pixels = if policy.compose_both {
        brighten_image(&rotate_image(&sample.pixels, d.angle_deg, policy.fill_mode), d.delta)
    } else if d.rotate {
        rotate_image(&sample.pixels, d.angle_deg, policy.fill_mode)
    } else {
        brighten_image(&sample.pixels, d.delta)
    };
    derived(sample, pixels)
}

/// Produces a same-size dataset in which every image is either rotated or
/// brightness-shifted (both, with `compose_both`), chosen by a fair coin.
pub fn augment_dataset(ds: &LabeledDataset, policy: &AugmentationPolicy) -> Result<LabeledDataset> {
    policy.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot augment an empty dataset".into()));
    }
    let samples: Vec<ImageSample> = ds
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| apply(s, policy, draw(policy, i)))
        .collect();
    LabeledDataset::new(ds.shape(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;
    use crate::image::Shape;
    use rand::SeedableRng;

    fn random_image(shape: Shape, seed: u64, hi: f32) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(shape, |_, _, _| rng.random::<f32>() * hi)
    }

    /// Exact quarter turn counter-clockwise, written as an index permutation.
    fn rot90_oracle(img: &Image) -> Image {
        let s = img.shape();
        Image::from_fn(s, |y, x, c| img.get(x, s.width - 1 - y, c))
    }

    #[test]
    fn zero_angle_is_identity() {
        let img = random_image(Shape::new(9, 7, 3), 1, 1.0);
        for fill in [FillMode::NearestEdge, FillMode::ConstantBlack] {
            assert!(rotate_image(&img, 0.0, fill).max_abs_diff(&img) <= 1e-6);
        }
    }

    #[test]
    fn quarter_turn_matches_permutation() {
        let img = random_image(Shape::new(8, 8, 3), 2, 1.0);
        let rotated = rotate_image(&img, 90.0, FillMode::ConstantBlack);
        assert!(rotated.mean_abs_diff(&rot90_oracle(&img)) < 1e-3);
    }

    #[test]
    fn constant_field_stays_uniform() {
        let img = Image::filled(Shape::new(10, 10, 3), 0.5);
        for angle in [-170.0, -45.0, 13.0, 30.0, 90.0, 180.0] {
            let r = rotate_image(&img, angle, FillMode::NearestEdge);
            assert!(r.max_abs_diff(&img) <= 1e-6, "angle {angle}");
        }
    }

    #[test]
    fn brightness_cases() {
        let img = random_image(Shape::new(5, 5, 3), 3, 1.0);
        assert_eq!(brighten_image(&img, 0.0), img);
        let bright = brighten_image(&Image::filled(Shape::new(3, 3, 3), 0.9), 0.2);
        assert!(bright.data().iter().all(|&v| v == 1.0));
        let low = random_image(Shape::new(6, 6, 3), 4, 0.85);
        let shifted = brighten_image(&low, 0.1);
        assert!((shifted.mean() - low.mean() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn sample_metadata_is_kept() {
        let s = ImageSample::new(random_image(Shape::new(4, 4, 3), 5, 1.0), ClassLabel::P, "P/x.png", Origin::Real);
        let r = rotate(&s, 20.0, FillMode::NearestEdge);
        assert_eq!((r.label, r.source_id.as_str(), r.origin), (ClassLabel::P, "P/x.png", Origin::GeometricAug));
        let b = adjust_brightness(&s, 0.1);
        assert_eq!(b.label, ClassLabel::P);
    }

    #[test]
    fn policy_bounds() {
        let bad = AugmentationPolicy { rotation_max_deg: 200.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentationPolicy { brightness_max_delta: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(AugmentationPolicy::default().validate().is_ok());
    }

    #[test]
    fn draws_respect_ranges() {
        let policy = AugmentationPolicy { seed: 9, ..Default::default() };
        let mut heads = 0;
        for i in 0..400 {
            let d = draw(&policy, i);
            assert!((0.0..=30.0).contains(&d.angle_deg));
            assert!((0.0..=0.2).contains(&d.delta));
            heads += d.rotate as usize;
        }
        assert!((140..260).contains(&heads), "coin is far from fair: {heads}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = LabeledDataset::empty(Shape::new(4, 4, 3));
        assert!(augment_dataset(&ds, &AugmentationPolicy::default()).is_err());
    }
}
