//! Minimal PNG charts: line series on a shared axis and a confusion
//! heatmap. No text is drawn; the matching CSV carries the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::CliError;

const W: u32 = 480;
const H: u32 = 320;
const PAD: f64 = 24.0;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<(), CliError> {
    img.save(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Series of (x, y) points; axes span the data range (y from 0 when all
/// values are non-negative).
pub fn line_chart(series: &[Vec<(f64, f64)>], path: &Path) -> Result<(), CliError> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let pts = series.iter().flatten();
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        return save(&img, path);
    }
    if y_lo >= 0.0 {
        y_lo = 0.0;
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let map = |(x, y): (f64, f64)| {
        (
            PAD + (x - x_lo) / span(x_lo, x_hi) * (W as f64 - 2.0 * PAD),
            H as f64 - PAD - (y - y_lo) / span(y_lo, y_hi) * (H as f64 - 2.0 * PAD),
        )
    };
    let axis = Rgb([80, 80, 80]);
    line(&mut img, (PAD, PAD), (PAD, H as f64 - PAD), axis);
    line(&mut img, (PAD, H as f64 - PAD), (W as f64 - PAD, H as f64 - PAD), axis);
    for (i, s) in series.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        for w in s.windows(2) {
            line(&mut img, map(w[0]), map(w[1]), c);
        }
        for &p in s {
            let (x, y) = map(p);
            line(&mut img, (x - 2.0, y), (x + 2.0, y), c);
            line(&mut img, (x, y - 2.0), (x, y + 2.0), c);
        }
    }
    save(&img, path)
}

/// Row-normalized confusion matrix, darker = larger share.
pub fn heatmap(confusion: &[Vec<usize>], path: &Path) -> Result<(), CliError> {
    let k = confusion.len().max(1) as u32;
    let cell = (320 / k).max(4);
    let mut img = RgbImage::from_pixel(k * cell, k * cell, Rgb([255, 255, 255]));
    for (i, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let share = if total > 0 { v as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - share)).round() as u8;
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(j as u32 * cell + x, i as u32 * cell + y, Rgb([shade, shade, 255]));
                }
            }
        }
    }
    save(&img, path)
}
