//! Dense floating-point images and codec helpers.

use std::fmt;
use std::path::Path;

use ::image::{imageops::FilterType, DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Height, width, channels. Serialized as `"HxWxC"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!("degenerate shape {self}")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "only 1 or 3 channels are supported, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    /// Parses `HxWxC`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
        let bad = || Error::InvalidArgument(format!("expected HxWxC, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let dims: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let shape = Shape::new(dims[0], dims[1], dims[2]);
        shape.validate()?;
        Ok(shape)
    }
}

impl Serialize for Shape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Row-major `H x W x C` image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    shape: Shape,
    data: Vec<f32>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Image { shape, data })
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let idx = (y * self.shape.width + x) * self.shape.channels + c;
        self.data[idx] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Mean per-element absolute difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.shape, other.shape, "mean_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Decodes PNG/JPEG and resizes (bilinear) to `shape`.
    pub fn load(path: &Path, shape: Shape) -> Result<Self> {
        let dynamic = ::image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_dynamic(&dynamic, shape))
    }

    pub fn from_dynamic(img: &DynamicImage, shape: Shape) -> Self {
        let resized = if img.width() as usize == shape.width && img.height() as usize == shape.height
        {
            img.clone()
        } else {
            img.resize_exact(shape.width as u32, shape.height as u32, FilterType::Triangle)
        };
        let data: Vec<f32> = if shape.channels == 1 {
            resized
                .to_luma32f()
                .into_raw()
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        } else {
            resized
                .to_rgb32f()
                .into_raw()
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        };
        Image { shape, data }
    }

    /// Writes a 16-bit PNG, which keeps quantization error below 1e-5.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let to_u16 = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        let (w, h) = (self.shape.width as u32, self.shape.height as u32);
        let raw: Vec<u16> = self.data.iter().map(|&v| to_u16(v)).collect();
        let dynamic = if self.shape.channels == 1 {
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).unwrap())
        } else {
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).unwrap())
        };
        dynamic.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// 8-bit RGB view, replicating gray channels.
    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let (w, h) = (self.shape.width as u32, self.shape.height as u32);
        ::image::RgbImage::from_fn(w, h, |x, y| {
            let px = |c: usize| {
                let c = if self.shape.channels == 1 { 0 } else { c };
                (self.get(y as usize, x as usize, c).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Packs same-shape images into an `N x C x H x W` tensor.
pub fn to_nchw(images: &[&Image], shape: Shape) -> Tensor {
    let (hw, c) = (shape.height * shape.width, shape.channels);
    let mut data = Vec::with_capacity(images.len() * shape.len());
    for img in images {
        debug_assert_eq!(img.shape, shape);
        for ch in 0..c {
            data.extend((0..hw).map(|i| img.data[i * c + ch] as f64));
        }
    }
    Tensor::new(vec![images.len(), c, shape.height, shape.width], data)
}

/// Inverse of [`to_nchw`]; values are clamped to `[0, 1]`.
pub fn from_nchw(t: &Tensor, shape: Shape) -> Vec<Image> {
    let (hw, c) = (shape.height * shape.width, shape.channels);
    (0..t.batch())
        .map(|n| {
            let row = t.row(n);
            let mut data = vec![0f32; shape.len()];
            for ch in 0..c {
                for i in 0..hw {
                    data[i * c + ch] = row[ch * hw + i].clamp(0.0, 1.0) as f32;
                }
            }
            Image { shape, data }
        })
        .collect()
}
