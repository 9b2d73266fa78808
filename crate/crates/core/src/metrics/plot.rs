//! Minimal polyline plots written straight to PNG: axes box, auto-scaled
//! ranges, numeric tick labels from a built-in 3×5 pixel font, and one
//! palette color per series (legend swatches top-right, in series order).

use super::MetricsError;
use crate::image_buf::ImageRgb;
use std::path::Path;

/// One line in a plot; points are (x, y) in data coordinates.
#[derive(Debug, Clone, Copy)]
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

const PALETTE: [[f64; 3]; 6] = [
    [0.80, 0.15, 0.15],
    [0.15, 0.35, 0.80],
    [0.10, 0.60, 0.25],
    [0.85, 0.55, 0.10],
    [0.50, 0.20, 0.70],
    [0.15, 0.15, 0.15],
];

const MARGIN_L: usize = 52;
const MARGIN_R: usize = 12;
const MARGIN_T: usize = 12;
const MARGIN_B: usize = 26;
const AXIS_GRAY: [f64; 3] = [0.25, 0.25, 0.25];

/// Rows of a 3-wide glyph, most significant bit leftmost.
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'e' => [0b111, 0b100, 0b111, 0b100, 0b111],
        _ => return None,
    })
}

fn set_px(img: &mut ImageRgb, x: i64, y: i64, color: [f64; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        img.set(x as usize, y as usize, color);
    }
}

fn draw_text(img: &mut ImageRgb, x: i64, y: i64, text: &str, color: [f64; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        set_px(img, cx + rx as i64, y + ry as i64, color);
                    }
                }
            }
        }
        cx += 4;
    }
}

fn text_width(text: &str) -> i64 {
    4 * text.chars().count() as i64
}

fn draw_segment(img: &mut ImageRgb, a: (f64, f64), b: (f64, f64), color: [f64; 3]) {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        set_px(img, (a.0 + t * dx).round() as i64, (a.1 + t * dy).round() as i64, color);
    }
}

fn fmt_tick(v: f64) -> String {
    if !v.is_finite() {
        return "0".to_string();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s.is_empty() || s == "-" { "0".to_string() } else { s.to_string() }
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Renders `series` as polylines into a `width`×`height` PNG. Non-finite
/// points break the line; ranges auto-fit the finite data. Series labels are
/// carried by palette order (swatches top-right); pair the plot with a table
/// when names matter.
pub fn save_polyline_plot(
    path: &Path,
    width: usize,
    height: usize,
    series: &[PlotSeries<'_>],
) -> Result<(), MetricsError> {
    let w = width.max(MARGIN_L + MARGIN_R + 48);
    let h = height.max(MARGIN_T + MARGIN_B + 48);
    let mut img = ImageRgb::filled(w, h, [1.0, 1.0, 1.0]);
    let (x0, x1) = range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range_of(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));

    let plot_w = (w - MARGIN_L - MARGIN_R - 1) as f64;
    let plot_h = (h - MARGIN_T - MARGIN_B - 1) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN_L as f64 + (x - x0) / (x1 - x0) * plot_w,
            (h - MARGIN_B - 1) as f64 - (y - y0) / (y1 - y0) * plot_h,
        )
    };

    let (left, right) = (MARGIN_L as i64 - 1, (w - MARGIN_R) as i64);
    let (top, bottom) = (MARGIN_T as i64 - 1, (h - MARGIN_B) as i64);
    for x in left..=right {
        set_px(&mut img, x, top, AXIS_GRAY);
        set_px(&mut img, x, bottom, AXIS_GRAY);
    }
    for y in top..=bottom {
        set_px(&mut img, left, y, AXIS_GRAY);
        set_px(&mut img, right, y, AXIS_GRAY);
    }

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mapped: Vec<Option<(f64, f64)>> = s
            .points
            .iter()
            .map(|&(x, y)| (x.is_finite() && y.is_finite()).then(|| to_px(x, y)))
            .collect();
        for pair in mapped.windows(2) {
            if let (Some(a), Some(b)) = (pair[0], pair[1]) {
                draw_segment(&mut img, a, b, color);
            }
        }
        if let [Some(only)] = mapped.as_slice() {
            for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                set_px(&mut img, only.0.round() as i64 + dx, only.1.round() as i64 + dy, color);
            }
        }
        let sy = MARGIN_T as i64 + 4 + 6 * si as i64;
        for dx in 0..10 {
            set_px(&mut img, right - 14 + dx, sy, color);
            set_px(&mut img, right - 14 + dx, sy + 1, color);
        }
    }

    let y_hi = fmt_tick(y1);
    let y_lo = fmt_tick(y0);
    draw_text(&mut img, 2, top, &y_hi, AXIS_GRAY);
    draw_text(&mut img, 2, bottom - 5, &y_lo, AXIS_GRAY);
    draw_text(&mut img, left, bottom + 4, &fmt_tick(x0), AXIS_GRAY);
    let x_hi = fmt_tick(x1);
    draw_text(&mut img, right - text_width(&x_hi) + 1, bottom + 4, &x_hi, AXIS_GRAY);

    img.save_png8(path)?;
    Ok(())
}
