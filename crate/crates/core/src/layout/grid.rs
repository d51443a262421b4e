use serde::{Deserialize, Serialize};

use super::{Axis, LayoutError, Line, ReadingOrder, Result};
use crate::imaging::{BinaryRaster, Raster};

/// Expected plate geometry: image size, column/row counts and the margin
/// band (as a fraction of the image dimension) in which detected lines are
/// ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub n_cols: usize,
    pub n_rows: usize,
    pub margin: f64,
}

impl GridSpec {
    pub const DEFAULT_MARGIN: f64 = 0.03;

    pub fn new(width: usize, height: usize, n_cols: usize, n_rows: usize) -> Result<Self> {
        let spec = Self {
            width,
            height,
            n_cols,
            n_rows,
            margin: Self::DEFAULT_MARGIN,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        self.margin = margin;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(LayoutError::InvalidGrid(
                "image dimensions must be positive".into(),
            ));
        }
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(LayoutError::InvalidGrid(format!(
                "need at least one column and row, got {}x{}",
                self.n_cols, self.n_rows
            )));
        }
        if self.n_cols > self.width || self.n_rows > self.height {
            return Err(LayoutError::InvalidGrid(format!(
                "{}x{} cells do not fit a {}x{} image",
                self.n_cols, self.n_rows, self.width, self.height
            )));
        }
        if !(0.0..0.25).contains(&self.margin) {
            return Err(LayoutError::InvalidGrid(format!(
                "margin {} outside [0, 0.25)",
                self.margin
            )));
        }
        Ok(())
    }

    fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::Columns => self.width,
            Axis::Rows => self.height,
        }
    }

    /// Default snapping tolerance: 2 px or 2% of the dimension, whichever is
    /// larger.
    pub fn default_tol(&self, axis: Axis) -> f64 {
        (0.02 * self.extent(axis) as f64).max(2.0)
    }
}

fn equal_cuts(extent: usize, n: usize) -> Vec<usize> {
    // round(i·extent/n) with halves rounded up, in exact integer arithmetic.
    (1..n).map(|i| (2 * i * extent + n) / (2 * n)).collect()
}

/// Interior cut positions of an evenly divided plate: `round(i·W/n)` for
/// columns and `round(i·H/n)` for rows.
pub fn expected_grid(spec: &GridSpec) -> (Vec<usize>, Vec<usize>) {
    (
        equal_cuts(spec.width, spec.n_cols),
        equal_cuts(spec.height, spec.n_rows),
    )
}

/// What happened to each detected line during [`filter_and_snap_detailed`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SnapReport {
    /// Final cut positions; always the expected cuts.
    pub cuts: Vec<usize>,
    /// `(detected position, cut it was snapped to)`.
    pub matched: Vec<(f64, usize)>,
    /// Lines near no expected cut, typically strokes inside glyphs.
    pub rejected: Vec<f64>,
    /// Lines inside the margin band at either edge.
    pub in_margin: Vec<f64>,
    /// Expected cuts that no detected line supported.
    pub inserted: Vec<usize>,
}

/// Reconcile detected separator lines with the expected grid.
///
/// Lines inside the margin band are discarded first. Each remaining line
/// either lies within `tol` of an expected cut, and is snapped to it, or is
/// rejected as a stroke belonging to a glyph. Expected cuts without support
/// are inserted anyway, so the result is the expected cut list regardless of
/// what was detected.
pub fn filter_and_snap_detailed(
    detected: &[Line],
    expected_cuts: &[usize],
    tol: f64,
    spec: &GridSpec,
    axis: Axis,
) -> Result<SnapReport> {
    spec.validate()?;
    let extent = spec.extent(axis);
    let mut bounds = Vec::with_capacity(expected_cuts.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(expected_cuts);
    bounds.push(extent);
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LayoutError::BadCuts(format!(
            "expected cuts {expected_cuts:?} must increase strictly inside (0, {extent})"
        )));
    }
    let spacing = bounds
        .windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .unwrap_or(extent) as f64;
    if !(tol >= 0.0) || tol >= spacing / 2.0 {
        return Err(LayoutError::TolTooLarge { tol, spacing });
    }

    let band = spec.margin * extent as f64;
    let mut report = SnapReport::default();
    let mut supported = vec![false; expected_cuts.len()];
    for line in detected.iter().filter(|l| l.is_aligned(axis)) {
        let Some(pos) = line.position(axis, spec.width, spec.height) else {
            continue;
        };
        if pos <= band || pos >= extent as f64 - band {
            report.in_margin.push(pos);
            continue;
        }
        match expected_cuts
            .iter()
            .position(|&e| (pos - e as f64).abs() <= tol)
        {
            Some(i) => {
                supported[i] = true;
                report.matched.push((pos, expected_cuts[i]));
            }
            None => report.rejected.push(pos),
        }
    }
    report.inserted = expected_cuts
        .iter()
        .zip(&supported)
        .filter(|(_, &s)| !s)
        .map(|(&e, _)| e)
        .collect();
    report.cuts = expected_cuts.to_vec();
    Ok(report)
}

pub fn filter_and_snap(
    detected: &[Line],
    expected_cuts: &[usize],
    tol: f64,
    spec: &GridSpec,
    axis: Axis,
) -> Result<Vec<usize>> {
    Ok(filter_and_snap_detailed(detected, expected_cuts, tol, spec, axis)?.cuts)
}

/// Placement of one grid cell in the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    /// Column index counted from the left edge.
    pub col: usize,
    pub row: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub rect: CellRect,
    pub raster: Raster,
}

fn check_cuts(cuts: &[usize], extent: usize, what: &str) -> Result<()> {
    let mut prev = 0;
    for &c in cuts {
        if c <= prev || c >= extent {
            return Err(LayoutError::BadCuts(format!(
                "{what} cuts {cuts:?} must increase strictly inside (0, {extent})"
            )));
        }
        prev = c;
    }
    Ok(())
}

/// Cell rectangles in reading order: columns in `order`, top to bottom
/// within each column.
pub fn cell_rects(
    width: usize,
    height: usize,
    col_cuts: &[usize],
    row_cuts: &[usize],
    order: ReadingOrder,
) -> Result<Vec<CellRect>> {
    check_cuts(col_cuts, width, "column")?;
    check_cuts(row_cuts, height, "row")?;
    let xs: Vec<usize> = std::iter::once(0)
        .chain(col_cuts.iter().copied())
        .chain(std::iter::once(width))
        .collect();
    let ys: Vec<usize> = std::iter::once(0)
        .chain(row_cuts.iter().copied())
        .chain(std::iter::once(height))
        .collect();
    let n_cols = xs.len() - 1;
    let cols: Vec<usize> = match order {
        ReadingOrder::Rtl => (0..n_cols).rev().collect(),
        ReadingOrder::Ltr => (0..n_cols).collect(),
    };
    let mut rects = Vec::with_capacity(n_cols * (ys.len() - 1));
    for col in cols {
        for row in 0..ys.len() - 1 {
            rects.push(CellRect {
                col,
                row,
                x0: xs[col],
                y0: ys[row],
                x1: xs[col + 1],
                y1: ys[row + 1],
            });
        }
    }
    Ok(rects)
}

/// Cut `r` into grid cells, emitted in reading order.
pub fn split_cells(
    r: &Raster,
    col_cuts: &[usize],
    row_cuts: &[usize],
    order: ReadingOrder,
) -> Result<Vec<Cell>> {
    cell_rects(r.width(), r.height(), col_cuts, row_cuts, order)?
        .into_iter()
        .map(|rect| {
            let raster = r
                .crop(rect.x0, rect.y0, rect.x1, rect.y1)
                .map_err(|e| LayoutError::BadCuts(e.to_string()))?;
            Ok(Cell { rect, raster })
        })
        .collect()
}

const PROFILE_WINDOW: usize = 5;

/// Estimate the number of text columns from the vertical projection profile.
///
/// The per-column ink count is smoothed with a centred 5-px window; every
/// interior run below 10% of the mean is a valley, and the estimate is one
/// more than the number of valleys. A ridge narrower than three windows
/// between two valleys is a ruled separator rather than a column of text, so
/// the valleys on either side of it count once.
pub fn estimate_columns(b: &BinaryRaster) -> usize {
    let (w, h) = (b.width(), b.height());
    let profile: Vec<f64> = (0..w)
        .map(|x| (0..h).filter(|&y| b.get(x, y)).count() as f64)
        .collect();
    let half = PROFILE_WINDOW / 2;
    let smoothed: Vec<f64> = (0..w)
        .map(|x| {
            let lo = x.saturating_sub(half);
            let hi = (x + half).min(w - 1);
            profile[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mean = smoothed.iter().sum::<f64>() / w as f64;
    if mean == 0.0 {
        return 1;
    }
    let low: Vec<bool> = smoothed.iter().map(|&v| v < 0.1 * mean).collect();

    // Runs of equal `low` values as (is_low, start, end_exclusive).
    let mut runs: Vec<(bool, usize, usize)> = Vec::new();
    for (x, &l) in low.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.0 == l => run.2 = x + 1,
            _ => runs.push((l, x, x + 1)),
        }
    }
    let max_ridge = 3 * PROFILE_WINDOW;
    let mut valleys = 0;
    let mut i = 0;
    while i < runs.len() {
        let (is_low, start, end) = runs[i];
        if !is_low || start == 0 || end == w {
            i += 1;
            continue;
        }
        valleys += 1;
        // Swallow `ridge, valley` pairs where the ridge is a thin separator.
        let mut j = i + 1;
        while j + 1 < runs.len() {
            let (_, rs, re) = runs[j];
            let (next_low, _, next_end) = runs[j + 1];
            if re - rs < max_ridge && next_low && next_end != w {
                j += 2;
            } else {
                break;
            }
        }
        i = j;
    }
    1 + valleys
}
