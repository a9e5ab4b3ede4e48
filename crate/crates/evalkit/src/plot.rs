//! Minimal self-contained PNG plotting for report artifacts: empirical CDF
//! curves and small text tables. Text uses a built-in 3x5 pixel font, which
//! keeps the crate free of font dependencies.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::EvalError;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([32, 32, 32]);
const CURVE: Rgb<u8> = Rgb([24, 64, 160]);
const GRID: Rgb<u8> = Rgb([214, 214, 214]);

/// Row bitmaps (3 bits wide, msb left) for a small lowercase charset.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_lowercase() {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'a' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'g' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'k' => [0b101, 0b110, 0b100, 0b110, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'r' => [0b110, 0b101, 0b110, 0b110, 0b101],
        's' => [0b011, 0b100, 0b010, 0b001, 0b110],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        ',' => [0b000, 0b000, 0b000, 0b010, 0b100],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '=' => [0b000, 0b111, 0b000, 0b111, 0b000],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        '/' => [0b001, 0b001, 0b010, 0b100, 0b100],
        '@' => [0b010, 0b101, 0b111, 0b100, 0b011],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (ri, row) in rows.iter().enumerate() {
            for ci in 0..3u8 {
                if row & (0b100 >> ci) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let px = cx + (ci as u32 * scale + sx) as i64;
                            let py = y + (ri as u32 * scale + sy) as i64;
                            put(img, px, py, color);
                        }
                    }
                }
            }
        }
        cx += (4 * scale) as i64;
    }
}

fn text_width(text: &str, scale: u32) -> i64 {
    (text.chars().count() as u32 * 4 * scale) as i64
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the empirical CDF of `values` as a step curve. Values need not be
/// pre-sorted.
pub fn render_cdf_png(
    path: &Path,
    values: &[f64],
    title: &str,
) -> Result<(), EvalError> {
    if values.is_empty() {
        return Err(EvalError::EvalFailed("cannot plot an empty CDF".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let (w, h) = (520u32, 340u32);
    let (ml, mr, mt, mb) = (56i64, 20i64, 28i64, 40i64);
    let mut img = RgbImage::from_pixel(w, h, BG);

    let x_min = *sorted.first().unwrap();
    let x_max = *sorted.last().unwrap();
    let span = if (x_max - x_min).abs() < 1e-12 {
        1.0
    } else {
        x_max - x_min
    };
    let plot_w = w as i64 - ml - mr;
    let plot_h = h as i64 - mt - mb;
    let to_px = |v: f64| ml + ((v - x_min) / span * plot_w as f64).round() as i64;
    let to_py = |c: f64| mt + plot_h - (c * plot_h as f64).round() as i64;

    for frac in [0.25, 0.5, 0.75] {
        let y = to_py(frac);
        draw_line(&mut img, ml, y, ml + plot_w, y, GRID);
    }

    draw_line(&mut img, ml, mt, ml, mt + plot_h, FG);
    draw_line(&mut img, ml, mt + plot_h, ml + plot_w, mt + plot_h, FG);

    let n = sorted.len();
    let mut prev = (to_px(sorted[0]), to_py(0.0));
    for (i, &v) in sorted.iter().enumerate() {
        let c = (i + 1) as f64 / n as f64;
        let x = to_px(v);
        // Step: horizontal run at the prior level, then a riser.
        draw_line(&mut img, prev.0, prev.1, x, prev.1, CURVE);
        draw_line(&mut img, x, prev.1, x, to_py(c), CURVE);
        prev = (x, to_py(c));
    }

    for frac in [0.0, 0.5, 1.0] {
        let y = to_py(frac);
        let label = format_tick(frac);
        draw_text(&mut img, ml - 8 - text_width(&label, 2), y - 5, &label, 2, FG);
        draw_line(&mut img, ml - 4, y, ml, y, FG);
    }
    for (frac, v) in [(0.0, x_min), (0.5, x_min + span / 2.0), (1.0, x_max)] {
        let x = ml + (frac * plot_w as f64) as i64;
        let label = format_tick(v);
        draw_text(
            &mut img,
            x - text_width(&label, 2) / 2,
            mt + plot_h + 8,
            &label,
            2,
            FG,
        );
        draw_line(&mut img, x, mt + plot_h, x, mt + plot_h + 4, FG);
    }
    draw_text(&mut img, ml, 8, title, 2, FG);

    img.save(path)?;
    Ok(())
}

/// Renders label/value rows as a simple table image.
pub fn render_table_png(path: &Path, rows: &[(String, String)]) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EvalFailed("cannot render an empty table".into()));
    }
    let scale = 2u32;
    let row_h = (7 * scale) as i64;
    let label_w = rows
        .iter()
        .map(|(l, _)| text_width(l, scale))
        .max()
        .unwrap_or(0);
    let value_w = rows
        .iter()
        .map(|(_, v)| text_width(v, scale))
        .max()
        .unwrap_or(0);
    let pad = 12i64;
    let w = (pad * 3 + label_w + value_w) as u32;
    let h = (pad * 2 + row_h * rows.len() as i64) as u32;
    let mut img = RgbImage::from_pixel(w.max(64), h.max(32), BG);
    for (i, (label, value)) in rows.iter().enumerate() {
        let y = pad + i as i64 * row_h;
        draw_text(&mut img, pad, y, label, scale, FG);
        draw_text(&mut img, pad * 2 + label_w, y, value, scale, CURVE);
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_png_is_written_and_nontrivial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.png");
        let values: Vec<f64> = (0..50).map(|i| (i as f64 / 10.0).sin().abs()).collect();
        render_cdf_png(&path, &values, "test cdf").unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.width(), 520);
        let non_white = img.pixels().filter(|p| p.0 != [255, 255, 255]).count();
        assert!(non_white > 500, "plot looks blank: {non_white} colored pixels");
    }

    #[test]
    fn table_png_lists_all_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.png");
        let rows = vec![
            ("median dssim".to_string(), "0.123".to_string()),
            ("tar".to_string(), "0.5".to_string()),
        ];
        render_table_png(&path, &rows).unwrap();
        assert!(path.exists());
    }

    #[test]
    fn empty_inputs_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_cdf_png(&dir.path().join("x.png"), &[], "t").is_err());
        assert!(render_table_png(&dir.path().join("y.png"), &[]).is_err());
    }
}
