//! Deterministic figure output: SVG line charts and heat maps, PNG sample
//! sheets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::image::{Image, Shape};

/// One grid result for the accuracy chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub epochs: usize,
    pub learning_rate: f64,
    pub accuracy: f64,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn lr_label(lr: f64) -> String {
    let s = format!("{lr}");
    if s.len() > 8 {
        format!("{lr:e}")
    } else {
        s
    }
}

/// Test accuracy against learning rate, one series per epoch setting.
/// Learning rates are placed at evenly spaced positions in ascending order.
pub fn accuracy_vs_lr_svg(title: &str, points: &[GridPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no grid points to plot".into()));
    }
    let mut lrs: Vec<f64> = points.iter().map(|p| p.learning_rate).collect();
    lrs.sort_by(|a, b| a.total_cmp(b));
    lrs.dedup();
    let mut series: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for p in points {
        let xi = lrs.iter().position(|&l| l == p.learning_rate).expect("collected above");
        series.entry(p.epochs).or_default().push((xi, p.accuracy));
    }

    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |i: usize| {
        if lrs.len() == 1 {
            left + pw / 2.0
        } else {
            left + pw * i as f64 / (lrs.len() - 1) as f64
        }
    };
    let y_of = |a: f64| top + ph * (1.0 - a.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let y = y_of(a);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{a:.1}</text>"#, left - 6.0, y + 4.0);
    }
    for (i, &lr) in lrs.iter().enumerate() {
        let x = x_of(i);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, top + ph + 18.0, lr_label(lr));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">learning rate</text>"#, left + pw / 2.0, h - 16.0);
    let _ = writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">test accuracy</text>"#, top + ph / 2.0, top + ph / 2.0);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

    for (k, (epochs, pts)) in series.iter_mut().enumerate() {
        pts.sort_by_key(|p| p.0);
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(i, a)| format!("{:.1},{:.1}", x_of(i), y_of(a))).collect();
        if coords.len() > 1 {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        }
        for &(i, a) in pts.iter() {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#, x_of(i), y_of(a));
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{epochs} epochs</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Confusion matrix heat map with counts printed in each cell.
pub fn confusion_svg(title: &str, cm: &ConfusionMatrix) -> String {
    let k = cm.labels.len();
    let cell = 56.0;
    let (left, top) = (90.0, 60.0);
    let w = left + cell * k as f64 + 30.0;
    let h = top + cell * k as f64 + 60.0;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for (i, label) in cm.labels.iter().enumerate() {
        let y = top + cell * i as f64;
        let x = left + cell * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, left - 8.0, y + cell / 2.0 + 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, x + cell / 2.0, top - 8.0);
        for j in 0..k {
            let v = cm.counts[i][j];
            let t = v as f64 / max;
            let shade = (255.0 * (1.0 - 0.8 * t)).round() as u8;
            let fill = format!("#{shade:02x}{shade:02x}ff");
            let text = if t > 0.6 { "white" } else { "black" };
            let cx = left + cell * j as f64;
            let _ = writeln!(s, r##"<rect x="{cx:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888888"/>"##);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{text}">{v}</text>"#, cx + cell / 2.0, y + cell / 2.0 + 4.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">predicted</text>"#, left + cell * k as f64 / 2.0, top + cell * k as f64 + 30.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">true</text>"#, top + cell * k as f64 / 2.0, top + cell * k as f64 / 2.0);
    s.push_str("</svg>\n");
    s
}

/// Per-epoch loss traces.
pub fn loss_curves_svg(title: &str, series: &[(&str, Vec<f64>)]) -> Result<String> {
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::InvalidArgument("no loss values to plot".into()));
    }
    let finite = || series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let lo = finite().fold(f64::INFINITY, f64::min).min(0.0);
    let mut hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 130.0, 40.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |i: usize| left + pw * i as f64 / (n.max(2) - 1) as f64;
    let y_of = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.3}</text>"#, left - 6.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{lo:.3}</text>"#, left - 6.0, top + ph + 4.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch (1..{n})</text>"#, left + pw / 2.0, h - 12.0);
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x_of(i), y_of(v)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, coords.join(" "));
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Tiles images into a grid with a one-pixel white gutter.
pub fn sample_sheet(images: &[&Image], cols: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("sample sheet needs at least one image".into()))?;
    let shape = first.shape();
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let sheet_shape = Shape::new(
        rows * (shape.height + 1) + 1,
        cols * (shape.width + 1) + 1,
        shape.channels,
    );
    let mut sheet = Image::filled(sheet_shape, 1.0);
    for (k, img) in images.iter().enumerate() {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_string(),
                actual: img.shape().to_string(),
            });
        }
        let oy = (k / cols) * (shape.height + 1) + 1;
        let ox = (k % cols) * (shape.width + 1) + 1;
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    sheet.set(oy + y, ox + x, c, img.get(y, x, c));
                }
            }
        }
    }
    Ok(sheet)
}
