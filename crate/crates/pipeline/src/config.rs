use std::path::{Path, PathBuf};

use hgt_core::layout::ReadingOrder;
use serde::{Deserialize, Serialize};

use crate::{PipelineError, Result};

/// Grid geometry; `None` means estimate columns from the ink profile, or a
/// single row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_cols: Option<usize>,
    pub n_rows: Option<usize>,
}

/// Pipeline settings, read from JSON. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sign lexicon TSV; the bundled lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    /// Without a translator the report stops at the transliteration.
    pub translator: Option<PathBuf>,
    /// External detector boxes in image coordinates.
    pub detections: Option<PathBuf>,
    pub grid: GridConfig,
    /// Snapping tolerance in pixels; 2 px or 2% of the dimension by default.
    pub tol: Option<f64>,
    pub margin: f64,
    pub min_area: usize,
    pub iou_thresh: f64,
    pub reading_order: ReadingOrder,
    pub beam: usize,
    pub max_len: usize,
    /// Length-normalization exponent for beam ranking.
    pub length_alpha: f64,
    pub seed: u64,
    pub invert: bool,
    /// Candidates kept per glyph in the report.
    pub top_k: usize,
    /// Pixels trimmed from each cell edge before segmentation, so column
    /// rules and frame lines are not taken for glyphs.
    pub cell_inset: usize,
    /// Hough vote threshold as a fraction of the separator length.
    pub hough_votes: f64,
    /// Context kept around a glyph box when cropping it for the classifier,
    /// as a fraction of the box's longer side.
    pub glyph_margin: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lexicon: None,
            classifier: None,
            translator: None,
            detections: None,
            grid: GridConfig::default(),
            tol: None,
            margin: 0.03,
            min_area: 16,
            iou_thresh: 0.3,
            reading_order: ReadingOrder::Rtl,
            beam: 1,
            max_len: 64,
            length_alpha: 0.0,
            seed: 0,
            invert: false,
            top_k: 3,
            cell_inset: 3,
            hough_votes: 0.5,
            glyph_margin: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.lexicon,
            &mut self.classifier,
            &mut self.translator,
            &mut self.detections,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if matches!(self.grid.n_cols, Some(0)) || matches!(self.grid.n_rows, Some(0)) {
            return bad("grid counts must be at least 1".into());
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                return bad(format!("tol {t} must be non-negative"));
            }
        }
        if !(0.0..0.25).contains(&self.margin) {
            return bad(format!("margin {} outside [0, 0.25)", self.margin));
        }
        if !(self.iou_thresh > 0.0 && self.iou_thresh <= 1.0) {
            return bad(format!("iou_thresh {} outside (0, 1]", self.iou_thresh));
        }
        if self.beam == 0 || self.max_len == 0 || self.top_k == 0 {
            return bad("beam, max_len and top_k must be positive".into());
        }
        if !(self.hough_votes > 0.0 && self.hough_votes <= 1.0) {
            return bad(format!("hough_votes {} outside (0, 1]", self.hough_votes));
        }
        if !(0.0..=1.0).contains(&self.glyph_margin) || !self.length_alpha.is_finite() {
            return bad("glyph_margin must lie in [0, 1] and length_alpha be finite".into());
        }
        Ok(())
    }

    /// Every referenced file must exist before a run starts.
    pub fn check_files(&self) -> Result<()> {
        for p in [
            &self.lexicon,
            &self.classifier,
            &self.translator,
            &self.detections,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(PipelineError::Config(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(
            PipelineConfig::from_json("{}").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"beem": 3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"iou_thresh": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"grid": {"n_cols": 0}}"#).is_err());
        let cfg = PipelineConfig::from_json(r#"{"reading_order": "ltr", "grid": {"n_cols": 4}}"#)
            .unwrap();
        assert_eq!(cfg.reading_order, ReadingOrder::Ltr);
        assert_eq!(cfg.grid.n_cols, Some(4));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"classifier": "models/cls.hgtc"}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.classifier.unwrap(), dir.path().join("models/cls.hgtc"));
    }
}
