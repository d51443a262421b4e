use std::path::Path;

use hgt_core::imaging::{save_image, Raster};

use crate::{PipelineError, Result, TranslationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlayStyle {
    pub box_color: [u8; 3],
    /// Burn `index:code` above each box.
    pub labels: bool,
    pub label_color: [u8; 3],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            box_color: [255, 0, 0],
            labels: true,
            label_color: [0, 0, 255],
        }
    }
}

/// 3×5 bitmap font, one row per byte, most significant of the low three
/// bits on the left.
fn glyph_bits(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        ':' => [0, 2, 0, 2, 0],
        _ => [0; 5],
    }
}

fn put(img: &mut Raster, x: isize, y: isize, rgb: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        for (c, v) in rgb.into_iter().enumerate() {
            img.set(x as usize, y as usize, c, v);
        }
    }
}

fn draw_text(img: &mut Raster, text: &str, x: isize, y: isize, rgb: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let ox = x + 4 * i as isize;
        for (dy, row) in glyph_bits(ch).into_iter().enumerate() {
            for dx in 0..3 {
                if row & (4 >> dx) != 0 {
                    put(img, ox + dx, y + dy as isize, rgb);
                }
            }
        }
    }
}

/// RGB copy of `image` with every glyph box of `report` outlined.
pub fn render_overlay(
    image: &Raster,
    report: &TranslationReport,
    style: &OverlayStyle,
) -> Result<Raster> {
    let (w, h) = (image.width(), image.height());
    if let Some(g) = report.glyphs.iter().find(|g| !g.bbox.within(w, h)) {
        return Err(PipelineError::Overlay(format!(
            "glyph {} box {:?} lies outside the {w}x{h} image",
            g.index, g.bbox
        )));
    }
    let mut out = image.to_rgb();
    for g in &report.glyphs {
        let b = g.bbox;
        for x in b.x0..b.x1 {
            put(&mut out, x as isize, b.y0 as isize, style.box_color);
            put(&mut out, x as isize, b.y1 as isize - 1, style.box_color);
        }
        for y in b.y0..b.y1 {
            put(&mut out, b.x0 as isize, y as isize, style.box_color);
            put(&mut out, b.x1 as isize - 1, y as isize, style.box_color);
        }
    }
    if style.labels {
        for g in &report.glyphs {
            let b = g.bbox;
            let y = if b.y0 >= 6 {
                b.y0 as isize - 6
            } else {
                b.y1 as isize + 1
            };
            draw_text(
                &mut out,
                &format!("{}:{}", g.index, g.code),
                b.x0 as isize,
                y,
                style.label_color,
            );
        }
    }
    Ok(out)
}

/// Write the overlay as a binary PPM.
pub fn emit_overlay(
    image: &Raster,
    report: &TranslationReport,
    style: &OverlayStyle,
    path: impl AsRef<Path>,
) -> Result<()> {
    let out = render_overlay(image, report, style)?;
    save_image(&out, path.as_ref()).map_err(|e| PipelineError::Overlay(e.to_string()))
}
