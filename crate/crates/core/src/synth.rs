//! Procedural glyphs and plates with known ground truth.
//!
//! Every glyph is a single 8-connected stroke tree derived deterministically
//! from its code text, so a rendered plate can be checked against the exact
//! sequence it was drawn from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::{BinaryRaster, Raster};
use crate::layout::BBox;

pub const INK: u8 = 0;
pub const GROUND: u8 = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("{codes} glyphs do not fit in {slots} slots")]
    TooManyGlyphs { codes: usize, slots: usize },
    #[error("glyph size {glyph} too large for {cell_w}x{slot_h} slots")]
    GlyphTooLarge {
        glyph: usize,
        cell_w: usize,
        slot_h: usize,
    },
    #[error("glyph size {0} below the 12 px minimum")]
    GlyphTooSmall(usize),
}

/// FNV-1a over the code text.
pub fn code_seed(code: &str) -> u64 {
    code.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn stamp(mask: &mut BinaryRaster, cx: f64, cy: f64, r: f64) {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let ri = r.ceil() as isize;
    let (x0, y0) = (cx.round() as isize, cy.round() as isize);
    for y in y0 - ri..=y0 + ri {
        for x in x0 - ri..=x0 + ri {
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy <= r * r + 0.25 {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
}

fn stroke(mask: &mut BinaryRaster, a: (f64, f64), b: (f64, f64), r: f64) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        stamp(mask, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), r);
    }
}

/// A `size × size` mask holding one connected glyph for `code`. The glyph
/// keeps at least one pixel of background on every side.
pub fn glyph_mask(code: &str, size: usize) -> BinaryRaster {
    let mut mask = BinaryRaster::empty(size, size);
    let mut rng = ChaCha8Rng::seed_from_u64(code_seed(code));
    let r = (size as f64 / 16.0).max(1.0);
    // Nodes keep clear of the edge by the larger blob radius.
    let lo = 2.0 * r + 1.0;
    let hi = size as f64 - 2.0 * r - 2.0;
    let point = |rng: &mut ChaCha8Rng| (rng.random_range(lo..hi), rng.random_range(lo..hi));

    let mut nodes = vec![point(&mut rng)];
    let strokes = rng.random_range(3..=6);
    for _ in 0..strokes {
        let from = nodes[rng.random_range(0..nodes.len())];
        let mut to = point(&mut rng);
        for _ in 0..8 {
            let d = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
            if d >= size as f64 / 4.0 {
                break;
            }
            to = point(&mut rng);
        }
        stroke(&mut mask, from, to, r);
        nodes.push(to);
    }
    // A blob at one node makes otherwise similar trees easier to tell apart.
    if rng.random_bool(0.5) {
        let at = nodes[rng.random_range(0..nodes.len())];
        stamp(&mut mask, at.0, at.1, r * 2.0);
    }
    mask
}

/// Tight bounding box of the foreground of `mask`, if any.
pub fn mask_bbox(mask: &BinaryRaster) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x1 > 0).then_some(BBox { x0, y0, x1, y1 })
}

/// Dark-on-light grayscale rendering of [`glyph_mask`].
pub fn glyph_image(code: &str, size: usize) -> Raster {
    let mut r = Raster::filled(size, size, GROUND);
    let mask = glyph_mask(code, size);
    for y in 0..size {
        for x in 0..size {
            if mask.get(x, y) {
                r.set(x, y, 0, INK);
            }
        }
    }
    r
}

/// Ink every foreground pixel of `mask` into `img` with its top-left corner at
/// `(x, y)`, returning the glyph's box in image coordinates.
pub fn paste_mask(img: &mut Raster, mask: &BinaryRaster, x: usize, y: usize) -> Option<BBox> {
    for my in 0..mask.height() {
        for mx in 0..mask.width() {
            let (px, py) = (x + mx, y + my);
            if mask.get(mx, my) && px < img.width() && py < img.height() {
                img.set(px, py, 0, INK);
            }
        }
    }
    mask_bbox(mask).map(|b| b.translate(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateSpec {
    pub n_cols: usize,
    /// Glyph slots per column.
    pub slots: usize,
    pub cell_w: usize,
    pub slot_h: usize,
    pub glyph_size: usize,
    /// Draw vertical separators between columns.
    pub separators: bool,
    /// Gaps knocked out of each separator (damaged borders).
    pub separator_gaps: usize,
    /// Draw a rectangular frame around the plate.
    pub frame: bool,
    /// Add one long vertical stroke inside each column, away from the cuts.
    pub interior_strokes: bool,
    /// Maximum glyph offset from the slot centre, in pixels.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for PlateSpec {
    fn default() -> Self {
        Self {
            n_cols: 3,
            slots: 4,
            cell_w: 48,
            slot_h: 48,
            glyph_size: 32,
            separators: true,
            separator_gaps: 0,
            frame: false,
            interior_strokes: false,
            jitter: 2,
            seed: 0,
        }
    }
}

impl PlateSpec {
    pub fn width(&self) -> usize {
        self.n_cols * self.cell_w
    }

    pub fn height(&self) -> usize {
        self.slots * self.slot_h
    }

    /// Column separators sit exactly on the equal-width cut positions.
    pub fn col_cuts(&self) -> Vec<usize> {
        (1..self.n_cols).map(|i| i * self.cell_w).collect()
    }

    /// Left edge of the column read in position `reading_col` (0 = rightmost).
    pub fn column_x0(&self, reading_col: usize) -> usize {
        (self.n_cols - 1 - reading_col) * self.cell_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedGlyph {
    pub code: String,
    pub bbox: BBox,
    /// Reading-order column, 0 = rightmost.
    pub column: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plate {
    pub image: Raster,
    /// Glyphs in reading order.
    pub glyphs: Vec<PlacedGlyph>,
    pub col_cuts: Vec<usize>,
}

/// Render `codes` right-to-left by column, top-to-bottom within a column.
pub fn render_plate<S: AsRef<str>>(codes: &[S], spec: &PlateSpec) -> Result<Plate, SynthError> {
    let slots = spec.n_cols * spec.slots;
    if codes.len() > slots {
        return Err(SynthError::TooManyGlyphs {
            codes: codes.len(),
            slots,
        });
    }
    if spec.glyph_size < 12 {
        return Err(SynthError::GlyphTooSmall(spec.glyph_size));
    }
    // Room for the separator, a cell inset and the jitter on every side.
    let room = spec.glyph_size + 2 * spec.jitter + 12;
    if room > spec.cell_w || room > spec.slot_h {
        return Err(SynthError::GlyphTooLarge {
            glyph: spec.glyph_size,
            cell_w: spec.cell_w,
            slot_h: spec.slot_h,
        });
    }

    let (w, h) = (spec.width(), spec.height());
    let mut img = Raster::filled(w, h, GROUND);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    if spec.separators {
        for &cut in &spec.col_cuts() {
            let mut on = vec![true; h];
            for _ in 0..spec.separator_gaps {
                let len = (h / 12).max(1);
                let start = rng.random_range(0..h - len);
                on[start..start + len].fill(false);
            }
            for (y, _) in on.iter().enumerate().filter(|(_, &v)| v) {
                img.set(cut - 1, y, 0, INK);
                img.set(cut, y, 0, INK);
            }
        }
    }
    if spec.frame {
        for x in 0..w {
            for y in [0, 1, h - 2, h - 1] {
                img.set(x, y, 0, INK);
            }
        }
        for y in 0..h {
            for x in [0, 1, w - 2, w - 1] {
                img.set(x, y, 0, INK);
            }
        }
    }
    if spec.interior_strokes {
        for col in 0..spec.n_cols {
            let x0 = spec.column_x0(col);
            let x = x0 + spec.cell_w / 2 + rng.random_range(0..=spec.cell_w / 8);
            let len = h / 2 + rng.random_range(0..=h / 8);
            let y0 = rng.random_range(0..=h - len);
            for y in y0..y0 + len {
                img.set(x, y, 0, INK);
                img.set(x + 1, y, 0, INK);
            }
        }
    }

    let j = spec.jitter as i64;
    let mut glyphs = Vec::with_capacity(codes.len());
    for (i, code) in codes.iter().enumerate() {
        let code = code.as_ref();
        let (column, slot) = (i / spec.slots, i % spec.slots);
        let cx = spec.column_x0(column) as isize + (spec.cell_w - spec.glyph_size) as isize / 2;
        let cy = (slot * spec.slot_h) as isize + (spec.slot_h - spec.glyph_size) as isize / 2;
        let (dx, dy) = if j > 0 {
            (
                rng.random_range(-j..=j) as isize,
                rng.random_range(-j..=j) as isize,
            )
        } else {
            (0, 0)
        };
        let mask = glyph_mask(code, spec.glyph_size);
        let bbox = paste_mask(&mut img, &mask, (cx + dx) as usize, (cy + dy) as usize)
            .expect("glyph masks are never empty");
        glyphs.push(PlacedGlyph {
            code: code.to_string(),
            bbox,
            column,
            slot,
        });
    }
    Ok(Plate {
        image: img,
        glyphs,
        col_cuts: spec.col_cuts(),
    })
}

/// Scatter `codes` over a `width × height` page on a jittered grid, with at
/// least `gap` background pixels between any two glyph squares. Returns the
/// page and the glyph boxes in drawing order.
pub fn scatter_glyphs<S: AsRef<str>>(
    codes: &[S],
    width: usize,
    height: usize,
    glyph_size: usize,
    gap: usize,
    seed: u64,
) -> Option<(Raster, Vec<BBox>)> {
    let pitch = glyph_size + gap;
    let (cols, rows) = (width / pitch, height / pitch);
    if cols * rows < codes.len() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..cols * rows).collect();
    // Partial Fisher–Yates: the first len slots end up random and distinct.
    for i in 0..codes.len() {
        let k = rng.random_range(i..slots.len());
        slots.swap(i, k);
    }
    let mut img = Raster::filled(width, height, GROUND);
    let mut boxes = Vec::with_capacity(codes.len());
    for (code, &slot) in codes.iter().zip(&slots) {
        let (sx, sy) = ((slot % cols) * pitch, (slot / cols) * pitch);
        let ox = rng.random_range(0..=gap / 2);
        let oy = rng.random_range(0..=gap / 2);
        let mask = glyph_mask(code.as_ref(), glyph_size);
        boxes.push(paste_mask(&mut img, &mask, sx + ox, sy + oy)?);
    }
    Some((img, boxes))
}
