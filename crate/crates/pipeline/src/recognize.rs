use hgt_core::imaging::{binarize_otsu, to_grayscale, Raster};
use hgt_core::layout::BBox;
use hgt_models::glyphclass::{predict_topk, GlyphClassifier};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeScore {
    pub code: String,
    pub prob: f64,
}

/// Maps a glyph on a plate to Gardiner codes.
pub trait GlyphRecognizer {
    /// The `k` most likely codes for the glyph at `bbox` of the grayscale
    /// `plate`, most likely first.
    fn recognize(&self, plate: &Raster, bbox: &BBox, k: usize) -> Result<Vec<CodeScore>, String>;
}

/// `bbox` grown by `margin` times its longer side on every edge, clipped to
/// the image, and cut out of `g`.
pub fn glyph_crop(g: &Raster, bbox: &BBox, margin: f64) -> Raster {
    let pad = (margin * bbox.width().max(bbox.height()) as f64).round() as usize;
    let x0 = bbox.x0.saturating_sub(pad);
    let y0 = bbox.y0.saturating_sub(pad);
    let x1 = (bbox.x1 + pad).min(g.width());
    let y1 = (bbox.y1 + pad).min(g.height());
    g.crop(x0, y0, x1, y1)
        .expect("clipped box lies inside the image")
}

/// Crop a glyph image to its ink the same way the pipeline crops plate
/// glyphs, so a classifier trained on the result sees plate-like inputs.
/// Images without ink are returned unchanged.
pub fn crop_to_ink(img: &Raster, margin: f64) -> Raster {
    let g = to_grayscale(img);
    let b = binarize_otsu(&g);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..b.height() {
        for x in 0..b.width() {
            if b.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 == 0 {
        return g;
    }
    glyph_crop(&g, &BBox { x0, y0, x1, y1 }, margin)
}

/// The residual CNN applied to margin-padded glyph crops.
pub struct CnnRecognizer {
    pub model: GlyphClassifier,
    pub margin: f64,
}

impl GlyphRecognizer for CnnRecognizer {
    fn recognize(&self, plate: &Raster, bbox: &BBox, k: usize) -> Result<Vec<CodeScore>, String> {
        let crop = glyph_crop(plate, bbox, self.margin);
        let preds = predict_topk(&self.model, &crop, k).map_err(|e| e.to_string())?;
        Ok(preds
            .into_iter()
            .map(|p| CodeScore {
                code: p.label,
                prob: p.prob,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_is_clipped_to_the_image() {
        let g = Raster::filled(20, 10, 255);
        let c = glyph_crop(
            &g,
            &BBox {
                x0: 1,
                y0: 2,
                x1: 11,
                y1: 6,
            },
            0.2,
        );
        // Pad 2 px: [0, 13) × [0, 8).
        assert_eq!((c.width(), c.height()), (13, 8));
    }

    #[test]
    fn ink_crop_finds_the_glyph() {
        let mut g = Raster::filled(30, 30, 255);
        for y in 10..20 {
            for x in 5..15 {
                g.set(x, y, 0, 0);
            }
        }
        let c = crop_to_ink(&g, 0.1);
        assert_eq!((c.width(), c.height()), (12, 12));
        let blank = Raster::filled(8, 8, 200);
        assert_eq!(crop_to_ink(&blank, 0.1), blank);
    }
}
