use hgt_core::imaging::{to_grayscale, Raster};
use serde::{Deserialize, Serialize};

/// Histogram-of-oriented-gradients layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell: usize,
    /// Unsigned orientation bins over [0°, 180°).
    pub bins: usize,
    /// Block side in cells; blocks step by one cell.
    pub block: usize,
    /// L2-hys clip value.
    pub clip: f64,
    pub eps: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell: 8,
            bins: 9,
            block: 2,
            clip: 0.2,
            eps: 1e-6,
        }
    }
}

impl HogConfig {
    /// Descriptor length for a `width × height` input.
    pub fn descriptor_len(&self, width: usize, height: usize) -> usize {
        let (cx, cy) = (width / self.cell, height / self.cell);
        if cx < self.block || cy < self.block {
            return 0;
        }
        (cx - self.block + 1) * (cy - self.block + 1) * self.block * self.block * self.bins
    }
}

fn l2_normalize(v: &mut [f64], eps: f64) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

/// HOG descriptor of a gray image (colour input is converted first).
///
/// Gradients are central differences, zero on the image border. Each pixel
/// votes its magnitude into the two nearest orientation bins, whose centres
/// sit at `k · 180° / bins`, weighted linearly by angular distance. Blocks
/// are L2-normalized, clipped at `clip` and renormalized.
pub fn hog_features(g: &Raster, cfg: &HogConfig) -> Vec<f32> {
    let g = to_grayscale(g);
    let (w, h) = (g.width(), g.height());
    let (cx, cy) = (w / cfg.cell, h / cfg.cell);
    let bin_width = 180.0 / cfg.bins as f64;
    let mut cells = vec![0.0f64; cx * cy * cfg.bins];
    for y in 0..cy * cfg.cell {
        for x in 0..cx * cfg.cell {
            if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
                continue;
            }
            let gx = g.luma(x + 1, y) as f64 - g.luma(x - 1, y) as f64;
            let gy = g.luma(x, y + 1) as f64 - g.luma(x, y - 1) as f64;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = lo as usize % cfg.bins;
            let b1 = (b0 + 1) % cfg.bins;
            let cell = ((y / cfg.cell) * cx + x / cfg.cell) * cfg.bins;
            cells[cell + b0] += mag * (1.0 - frac);
            cells[cell + b1] += mag * frac;
        }
    }
    let mut out = Vec::with_capacity(cfg.descriptor_len(w, h));
    if cx < cfg.block || cy < cfg.block {
        return Vec::new();
    }
    let mut block = Vec::with_capacity(cfg.block * cfg.block * cfg.bins);
    for by in 0..=cy - cfg.block {
        for bx in 0..=cx - cfg.block {
            block.clear();
            for dy in 0..cfg.block {
                for dx in 0..cfg.block {
                    let c = ((by + dy) * cx + bx + dx) * cfg.bins;
                    block.extend_from_slice(&cells[c..c + cfg.bins]);
                }
            }
            l2_normalize(&mut block, cfg.eps);
            block.iter_mut().for_each(|x| *x = x.min(cfg.clip));
            l2_normalize(&mut block, cfg.eps);
            out.extend(block.iter().map(|&x| x as f32));
        }
    }
    out
}
