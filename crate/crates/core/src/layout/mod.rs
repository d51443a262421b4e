//! Plate layout: grid splitting with the Hough transform, contour-based
//! glyph segmentation and the merge of contour boxes with imported detector
//! boxes.

mod contours;
mod detections;
mod grid;
mod hough;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contours::{connected_components, contour_boxes, find_contours, Contour};
pub use detections::{
    hybrid_merge, import_detections, iou, load_labelme, parse_detections, parse_labelme,
    sort_reading_order, BBox, Detection, DetectionSource, LabelMeAnnotation, LabeledBox,
};
pub use grid::{
    cell_rects, estimate_columns, expected_grid, filter_and_snap, filter_and_snap_detailed,
    split_cells, Cell, CellRect, GridSpec, SnapReport,
};
pub use hough::{column_thetas, hough_lines, row_thetas, Line};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("tolerance {tol} px is not below half the minimum cut spacing {spacing} px")]
    TolTooLarge { tol: f64, spacing: f64 },
    #[error("bad cuts: {0}")]
    BadCuts(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("detection parse error: {0}")]
    ParseError(String),
    #[error("detection score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LayoutError>;

/// Which family of separators a pass works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Near-vertical separators between columns; positions are x coordinates.
    Columns,
    /// Near-horizontal separators between rows; positions are y coordinates.
    Rows,
}

/// Column order on the plate. Within a column glyphs always read top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingOrder {
    /// Rightmost column first, the usual direction for the Unas plates.
    #[default]
    Rtl,
    Ltr,
}

impl FromStr for ReadingOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rtl" => Ok(Self::Rtl),
            "ltr" => Ok(Self::Ltr),
            other => Err(format!(
                "unknown reading order {other:?} (expected rtl or ltr)"
            )),
        }
    }
}

impl fmt::Display for ReadingOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rtl => "rtl",
            Self::Ltr => "ltr",
        })
    }
}
