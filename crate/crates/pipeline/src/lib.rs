//! Plate-to-English pipeline: grid splitting, glyph segmentation,
//! classification, transliteration and translation, with JSON reports and
//! annotated overlays.

mod config;
mod overlay;
mod recognize;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{GridConfig, PipelineConfig};
pub use overlay::{emit_overlay, render_overlay, OverlayStyle};
pub use recognize::{crop_to_ink, glyph_crop, CnnRecognizer, CodeScore, GlyphRecognizer};
pub use report::{
    GlyphRecord, GridInfo, SkippedCell, StageTiming, TranslationReport, REPORT_SCHEMA,
};
pub use run::{
    run_pipeline, run_pipeline_with, segment_plate, CellDetection, Models, RunOptions, Segmentation,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A failure that stops the whole plate, tagged with the stage it came
    /// from.
    #[error("{stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("overlay: {0}")]
    Overlay(String),
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
