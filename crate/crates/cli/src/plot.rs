//! Minimal static PNG plotting: metric curves and sample contact sheets.

use std::path::Path;

use anyhow::{Context, Result};
use handfusion_core::img::Image;
use image::{Rgb, RgbImage};

const MARGIN: u32 = 40;
const WIDTH: u32 = 640;
const HEIGHT: u32 = 420;

/// 3x5 bitmap glyphs for tick labels (digits, minus, dot).
fn glyph(c: char) -> [u8; 15] {
    match c {
        '0' => [1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1],
        '1' => [0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1],
        '2' => [1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1],
        '3' => [1, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 1],
        '4' => [1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1],
        '5' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '6' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '7' => [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0],
        '8' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '9' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '-' => [0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0],
        '.' => [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
        _ => [0; 15],
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str) {
    let mut cx = x;
    for c in text.chars() {
        let bits = glyph(c);
        for (i, &bit) in bits.iter().enumerate() {
            if bit == 1 {
                let (gx, gy) = ((i % 3) as u32, (i / 3) as u32);
                let (px, py) = (cx + gx, y + gy);
                if px < img.width() && py < img.height() {
                    img.put_pixel(px, py, Rgb([30, 30, 30]));
                }
            }
        }
        cx += 4;
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Renders a metric-vs-parameter curve as a PNG (axes, gridlines, polyline,
/// markers, numeric tick labels).
pub fn render_line_plot(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;

    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x_min, x_max, y_min, y_max) = if finite.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let x_min = finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x_max = finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let y_min = finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let y_max = finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x_pad = ((x_max - x_min) * 0.05).max(1e-9);
        let y_pad = ((y_max - y_min) * 0.08).max(1e-9);
        (x_min - x_pad, x_max + x_pad, y_min - y_pad, y_max + y_pad)
    };
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN as f64 + (x - x_min) / (x_max - x_min) * plot_w,
            MARGIN as f64 + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h,
        )
    };

    // Gridlines and tick labels.
    let grid = Rgb([225, 225, 225]);
    let axis = Rgb([40, 40, 40]);
    for i in 0..=4u32 {
        let fx = x_min + (x_max - x_min) * f64::from(i) / 4.0;
        let fy = y_min + (y_max - y_min) * f64::from(i) / 4.0;
        let (px, _) = to_px(fx, y_min);
        let (_, py) = to_px(x_min, fy);
        draw_line(&mut img, (px, MARGIN as f64), (px, (HEIGHT - MARGIN) as f64), grid);
        draw_line(&mut img, (MARGIN as f64, py), ((WIDTH - MARGIN) as f64, py), grid);
        draw_text(&mut img, px as u32 - 8, HEIGHT - MARGIN + 6, &format!("{fx:.2}"));
        draw_text(&mut img, 4, py as u32 - 2, &format!("{fy:.2}"));
    }
    draw_line(
        &mut img,
        (MARGIN as f64, (HEIGHT - MARGIN) as f64),
        ((WIDTH - MARGIN) as f64, (HEIGHT - MARGIN) as f64),
        axis,
    );
    draw_line(
        &mut img,
        (MARGIN as f64, MARGIN as f64),
        (MARGIN as f64, (HEIGHT - MARGIN) as f64),
        axis,
    );

    // Polyline with square markers.
    let line = Rgb([40, 90, 200]);
    let mut sorted = finite.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in sorted.windows(2) {
        draw_line(&mut img, to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), line);
    }
    for &(x, y) in &sorted {
        let (px, py) = to_px(x, y);
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let (mx, my) = (px as i64 + dx, py as i64 + dy);
                if mx >= 0 && my >= 0 && (mx as u32) < WIDTH && (my as u32) < HEIGHT {
                    img.put_pixel(mx as u32, my as u32, Rgb([180, 40, 40]));
                }
            }
        }
    }

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .with_context(|| format!("writing plot to {}", path.display()))
}

/// Tiles grayscale images into a contact sheet with separators.
pub fn contact_sheet(images: &[Image]) -> Image {
    assert!(!images.is_empty());
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (h, w) = (images[0].height(), images[0].width());
    let gap = 2usize;
    let sheet_h = rows * h + (rows + 1) * gap;
    let sheet_w = cols * w + (cols + 1) * gap;
    let mut sheet = Image::filled(1, sheet_h, sheet_w, 1.0);
    for (i, img) in images.iter().enumerate() {
        let gray = img.to_gray();
        let (row, col) = (i / cols, i % cols);
        let y0 = gap + row * (h + gap);
        let x0 = gap + col * (w + gap);
        for y in 0..h.min(gray.height()) {
            for x in 0..w.min(gray.width()) {
                sheet.set(0, y0 + y, x0 + x, gray.get(0, y, x));
            }
        }
    }
    sheet
}
