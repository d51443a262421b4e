use hgt_core::layout::{BBox, DetectionSource, ReadingOrder};
use hgt_models::translator::DecodeScore;
use serde::{Deserialize, Serialize};

use crate::CodeScore;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphRecord {
    /// Position in reading order.
    pub index: usize,
    /// Grid cell `[col, row]`, columns counted from the left edge.
    pub cell: [usize; 2],
    /// Image coordinates, half-open.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub source: DetectionSource,
    pub topk: Vec<CodeScore>,
    /// Always the first entry of `topk`.
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub n_cols: usize,
    pub n_rows: usize,
    pub col_cuts: Vec<usize>,
    pub row_cuts: Vec<usize>,
    /// Cuts no detected line supported.
    pub inserted_cuts: usize,
    /// Detected lines rejected as glyph strokes or margin clutter.
    pub rejected_lines: usize,
}

/// A cell or glyph the pipeline gave up on without stopping the plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: [usize; 2],
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub schema: u32,
    pub width: usize,
    pub height: usize,
    pub reading_order: ReadingOrder,
    pub seed: u64,
    pub grid: GridInfo,
    pub glyphs: Vec<GlyphRecord>,
    pub transliteration: Vec<String>,
    /// Determinatives and unknown or unparsable codes.
    pub dropped: Vec<String>,
    pub english: Option<String>,
    pub score: Option<DecodeScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedCell>,
    /// Only present when requested; wall-clock values would otherwise make
    /// reports differ between identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<StageTiming>>,
}

impl TranslationReport {
    pub fn codes(&self) -> Vec<&str> {
        self.glyphs.iter().map(|g| g.code.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
