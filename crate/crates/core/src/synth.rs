//! Procedural stand-ins for wound photographs.
//!
//! Each class has its own visual signature drawn on a randomized skin tone:
//! plain background texture (BG), intact skin (N), a small dark ulcer inside a
//! pale callus ring (D), a large maroon patch (P), a thin incision line (S)
//! and an irregular red lesion with yellow slough (V). Geometry is expressed
//! in relative coordinates, so any resolution works.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ClassLabel, ImageSample, LabeledDataset, Origin};
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::seed;

type Rgb = [f32; 3];

fn lerp(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Alpha that is 1 inside radius `r` and fades out over `soft`.
fn disc(d: f32, r: f32, soft: f32) -> f32 {
    1.0 - smoothstep(r - soft, r + soft, d)
}

struct Canvas {
    shape: Shape,
    rgb: Vec<Rgb>,
}

impl Canvas {
    fn new(shape: Shape, mut f: impl FnMut(f32, f32) -> Rgb) -> Self {
        let mut rgb = Vec::with_capacity(shape.height * shape.width);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let (u, v) = Self::coords(shape, y, x);
                rgb.push(f(u, v));
            }
        }
        Canvas { shape, rgb }
    }

    fn coords(shape: Shape, y: usize, x: usize) -> (f32, f32) {
        (
            (x as f32 + 0.5) / shape.width as f32,
            (y as f32 + 0.5) / shape.height as f32,
        )
    }

    fn paint(&mut self, mut f: impl FnMut(f32, f32) -> Option<(Rgb, f32)>) {
        for y in 0..self.shape.height {
            for x in 0..self.shape.width {
                let (u, v) = Self::coords(self.shape, y, x);
                if let Some((color, alpha)) = f(u, v) {
                    let px = &mut self.rgb[y * self.shape.width + x];
                    *px = lerp(*px, color, alpha.clamp(0.0, 1.0));
                }
            }
        }
    }

    fn finish(self, rng: &mut impl Rng, noise: f32) -> Image {
        let dist = Normal::new(0.0f32, noise.max(1e-9)).unwrap();
        let shape = self.shape;
        let mut data = Vec::with_capacity(shape.len());
        for px in &self.rgb {
            if shape.channels == 1 {
                let g = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                data.push((g + dist.sample(rng)).clamp(0.0, 1.0));
            } else {
                for &c in px {
                    data.push((c + dist.sample(rng)).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(shape, data).expect("canvas matches shape")
    }
}

fn skin(rng: &mut impl Rng) -> Rgb {
    let light = [0.93, 0.78, 0.68];
    let dark = [0.66, 0.46, 0.34];
    lerp(light, dark, rng.random_range(0.0..0.7))
}

fn shaded(base: Rgb, rng: &mut impl Rng) -> impl FnMut(f32, f32) -> Rgb {
    let gx: f32 = rng.random_range(-0.05..0.05);
    let gy: f32 = rng.random_range(-0.05..0.05);
    move |u, v| {
        let s = 1.0 + gx * (u - 0.5) + gy * (v - 0.5);
        [base[0] * s, base[1] * s, base[2] * s]
    }
}

/// Draws one synthetic image of `label`.
pub fn wound_image(label: ClassLabel, shape: Shape, rng: &mut impl Rng) -> Image {
    let mut canvas = match label {
        ClassLabel::BG => {
            let base = lerp([0.22, 0.32, 0.45], [0.30, 0.42, 0.36], rng.random());
            Canvas::new(shape, shaded(base, rng))
        }
        _ => {
            let base = skin(rng);
            Canvas::new(shape, shaded(base, rng))
        }
    };
    let cx: f32 = rng.random_range(0.38..0.62);
    let cy: f32 = rng.random_range(0.38..0.62);
    let soft = 0.6 / shape.width.min(shape.height) as f32;
    match label {
        ClassLabel::BG | ClassLabel::N => {}
        ClassLabel::D => {
            let outer: f32 = rng.random_range(0.15..0.21);
            let inner = outer * rng.random_range(0.5..0.6);
            canvas.paint(|u, v| {
                let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                Some(([0.96, 0.92, 0.72], disc(d, outer, soft)))
            });
            canvas.paint(|u, v| {
                let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                Some(([0.40, 0.06, 0.07], disc(d, inner, soft)))
            });
        }
        ClassLabel::P => {
            let rx: f32 = rng.random_range(0.26..0.34);
            let ry = rx * rng.random_range(0.75..1.0);
            let color = lerp([0.50, 0.18, 0.34], [0.42, 0.14, 0.30], rng.random());
            canvas.paint(|u, v| {
                let d = (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt() * rx;
                Some((color, disc(d, rx, 2.0 * soft)))
            });
        }
        ClassLabel::S => {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let (s, c) = theta.sin_cos();
            let half_len: f32 = rng.random_range(0.32..0.4);
            let half_width: f32 = rng.random_range(0.035..0.05);
            canvas.paint(|u, v| {
                let du = u - cx;
                let dv = v - cy;
                let along = du * c + dv * s;
                let across = (-du * s + dv * c).abs();
                let a = disc(across, half_width, soft) * disc(along.abs(), half_len, soft);
                Some(([0.62, 0.10, 0.16], a))
            });
        }
        ClassLabel::V => {
            let r0: f32 = rng.random_range(0.25..0.32);
            let phase1: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let phase2: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let sx: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            canvas.paint(|u, v| {
                let du = u - cx;
                let dv = v - cy;
                let theta = dv.atan2(du);
                let r = r0 * (1.0 + 0.22 * (3.0 * theta + phase1).sin() + 0.12 * (5.0 * theta + phase2).sin());
                let d = (du * du + dv * dv).sqrt();
                let slough = smoothstep(0.55, 0.85, (9.0 * u + sx).sin() * (7.0 * v - sx).cos());
                let color = lerp([0.82, 0.14, 0.12], [0.86, 0.74, 0.30], slough);
                Some((color, disc(d, r, soft)))
            });
        }
    }
    canvas.finish(rng, 0.02)
}

/// In-memory synthetic set with `per_class` images for each of `labels`.
pub fn wound_dataset(labels: &[ClassLabel], per_class: usize, shape: Shape, seed: u64) -> Result<LabeledDataset> {
    shape.validate()?;
    let mut samples = Vec::with_capacity(labels.len() * per_class);
    for &label in labels {
        let mut rng = seed::substream(seed, &format!("synth/{}", label.code()));
        for i in 0..per_class {
            let img = wound_image(label, shape, &mut rng);
            samples.push(ImageSample::new(
                img,
                label,
                format!("{}/synth_{i:04}.png", label.code()),
                Origin::Real,
            ));
        }
    }
    LabeledDataset::new(shape, samples)
}

/// Writes a `root/{BG,D,N,P,S,V}/synth_NNNN.png` tree of 8-bit images.
pub fn write_wound_tree(root: &Path, counts: &[(ClassLabel, usize)], shape: Shape, seed: u64) -> Result<()> {
    for label in ClassLabel::ALL {
        let dir = root.join(label.code());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for &(label, n) in counts {
        let ds = wound_dataset(&[label], n, shape, seed)?;
        for s in ds.samples() {
            let path = root.join(&s.source_id);
            s.pixels.to_rgb8().save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

/// Single soft blob of a fixed color on black, at a random position and
/// scale: a distribution simple enough for desk-scale GAN runs.
pub fn toy_blob(shape: Shape, rng: &mut impl Rng) -> Image {
    let cx: f32 = rng.random_range(0.3..0.7);
    let cy: f32 = rng.random_range(0.3..0.7);
    let sigma: f32 = rng.random_range(0.09..0.15);
    let color: Rgb = [0.92, 0.38, 0.26];
    let canvas = Canvas::new(shape, |u, v| {
        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
        let a = (-d2 / (2.0 * sigma * sigma)).exp();
        [color[0] * a, color[1] * a, color[2] * a]
    });
    canvas.finish(rng, 0.0)
}

pub fn toy_blobs(n: usize, shape: Shape, label: ClassLabel, seed: u64) -> LabeledDataset {
    let mut rng = seed::substream(seed, "toy-blobs");
    let samples = (0..n)
        .map(|i| ImageSample::new(toy_blob(shape, &mut rng), label, format!("toy/{i:04}"), Origin::Real))
        .collect();
    LabeledDataset::new(shape, samples).expect("generated at the declared shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let shape = Shape::new(16, 16, 3);
        let a = wound_dataset(&ClassLabel::ALL, 3, shape, 9).unwrap();
        let b = wound_dataset(&ClassLabel::ALL, 3, shape, 9).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert!(a.samples().iter().all(|s| s.pixels.in_unit_range()));
        assert!(a.class_counts().values().all(|&n| n == 3));
    }

    #[test]
    fn classes_differ_in_mean_color() {
        let shape = Shape::new(16, 16, 3);
        let ds = wound_dataset(&ClassLabel::ALL, 20, shape, 1).unwrap();
        let mean_red = |l: ClassLabel| -> f64 {
            let sub = ds.filter_class(l);
            sub.samples().iter().map(|s| s.pixels.mean()).sum::<f64>() / sub.len() as f64
        };
        assert!(mean_red(ClassLabel::BG) < mean_red(ClassLabel::N));
        assert!(mean_red(ClassLabel::P) < mean_red(ClassLabel::N));
    }

    #[test]
    fn toy_blobs_vary() {
        let ds = toy_blobs(4, Shape::new(16, 16, 3), ClassLabel::D, 3);
        let s = ds.samples();
        assert!(s[0].pixels.mean_abs_diff(&s[1].pixels) > 1e-3);
    }
}
