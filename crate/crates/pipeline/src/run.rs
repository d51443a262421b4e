use std::path::{Path, PathBuf};
use std::time::Instant;

use hgt_core::gardiner::{load_lexicon, parse_gardiner, sequence_to_translit, Lexicon};
use hgt_core::imaging::{
    binarize_otsu, invert, load_image, save_image, to_grayscale, BinaryRaster, Raster,
};
use hgt_core::layout::{
    cell_rects, column_thetas, contour_boxes, estimate_columns, expected_grid,
    filter_and_snap_detailed, find_contours, hough_lines, hybrid_merge, import_detections,
    row_thetas, Axis, CellRect, Detection, GridSpec, SnapReport,
};
use hgt_models::glyphclass::GlyphClassifier;
use hgt_models::translator::{beam_decode, decode_scores, greedy_decode, Translator};
use log::{debug, warn};
use serde::Serialize;

use crate::{
    CnnRecognizer, GlyphRecognizer, GlyphRecord, GridInfo, PipelineConfig, PipelineError, Result,
    SkippedCell, StageTiming, TranslationReport, REPORT_SCHEMA,
};

/// Everything a run needs besides the image.
pub struct Models {
    pub recognizer: Box<dyn GlyphRecognizer>,
    pub translator: Option<Translator>,
    pub lexicon: Lexicon,
}

impl Models {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        cfg.check_files()?;
        let lexicon = match &cfg.lexicon {
            Some(p) => load_lexicon(p).map_err(|e| PipelineError::stage("lexicon", e))?,
            None => Lexicon::bundled(),
        };
        let path = cfg
            .classifier
            .as_ref()
            .ok_or_else(|| PipelineError::Config("a classifier checkpoint is required".into()))?;
        let model = GlyphClassifier::load(path).map_err(|e| PipelineError::stage("classify", e))?;
        let translator = cfg
            .translator
            .as_ref()
            .map(Translator::load)
            .transpose()
            .map_err(|e| PipelineError::stage("translate", e))?;
        Ok(Self {
            recognizer: Box::new(CnnRecognizer {
                model,
                margin: cfg.glyph_margin,
            }),
            translator,
            lexicon,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write numbered intermediate results here.
    pub dump_dir: Option<PathBuf>,
    /// Record per-stage wall-clock times in the report.
    pub timings: bool,
}

/// Load the models and image named by `cfg` and run the whole pipeline.
pub fn run_pipeline(image: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<TranslationReport> {
    let models = Models::load(cfg)?;
    let img = load_image(image.as_ref()).map_err(|e| PipelineError::stage("load", e))?;
    run_pipeline_with(&img, cfg, &models, &RunOptions::default())
}

struct Clock {
    on: bool,
    last: Instant,
    laps: Vec<StageTiming>,
}

impl Clock {
    fn lap(&mut self, stage: &str) {
        if self.on {
            let now = Instant::now();
            self.laps.push(StageTiming {
                stage: stage.to_string(),
                ms: (now - self.last).as_secs_f64() * 1e3,
            });
            self.last = now;
        }
    }
}

struct Dumper<'a> {
    dir: Option<&'a Path>,
    next: usize,
}

impl Dumper<'_> {
    fn path(&mut self, name: &str) -> Option<PathBuf> {
        let dir = self.dir?;
        self.next += 1;
        Some(dir.join(format!("{:02}_{name}", self.next)))
    }

    fn raster(&mut self, name: &str, r: &Raster) -> Result<()> {
        if let Some(p) = self.path(name) {
            save_image(r, &p).map_err(|e| PipelineError::stage("dump", e))?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        if let Some(p) = self.path(name) {
            let text = serde_json::to_string_pretty(v).expect("dump serializes");
            std::fs::write(&p, text).map_err(|e| PipelineError::Io { path: p, source: e })?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct GridDump<'a> {
    spec: &'a GridSpec,
    columns: &'a SnapReport,
    rows: &'a SnapReport,
}

fn snap_axis(
    bin: &BinaryRaster,
    spec: &GridSpec,
    cuts: &[usize],
    axis: Axis,
    cfg: &PipelineConfig,
) -> Result<SnapReport> {
    if cuts.is_empty() {
        return Ok(SnapReport::default());
    }
    let (thetas, length) = match axis {
        Axis::Columns => (column_thetas(), spec.height),
        Axis::Rows => (row_thetas(), spec.width),
    };
    let votes = (cfg.hough_votes * length as f64).ceil().max(1.0) as u32;
    let lines = hough_lines(bin, &thetas, votes);
    let tol = cfg.tol.unwrap_or_else(|| spec.default_tol(axis));
    filter_and_snap_detailed(&lines, cuts, tol, spec, axis)
        .map_err(|e| PipelineError::stage("grid", e))
}

fn inset(rect: &CellRect, by: usize) -> Option<(usize, usize, usize, usize)> {
    let (x0, y0) = (rect.x0 + by, rect.y0 + by);
    let (x1, y1) = (rect.x1.checked_sub(by)?, rect.y1.checked_sub(by)?);
    (x0 < x1 && y0 < y1).then_some((x0, y0, x1, y1))
}

fn contains_center(rect: &CellRect, d: &Detection) -> bool {
    let (cx, cy) = d.bbox.center();
    (rect.x0 as f64) <= cx && cx < rect.x1 as f64 && (rect.y0 as f64) <= cy && cy < rect.y1 as f64
}

/// A detection and the grid cell it was found in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDetection {
    pub cell: [usize; 2],
    #[serde(flatten)]
    pub detection: Detection,
}

/// Grid and glyph boxes of a plate, before classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    /// The preprocessed grayscale plate.
    #[serde(skip)]
    pub gray: Raster,
    pub grid: GridInfo,
    /// Cells in reading order.
    pub cells: Vec<CellRect>,
    /// Glyph boxes in reading order.
    pub detections: Vec<CellDetection>,
    pub skipped: Vec<SkippedCell>,
}

/// Preprocess, split into grid cells and find the glyph boxes of each cell.
pub fn segment_plate(image: &Raster, cfg: &PipelineConfig) -> Result<Segmentation> {
    cfg.validate()?;
    let mut dump = Dumper { dir: None, next: 0 };
    let mut clock = Clock {
        on: false,
        last: Instant::now(),
        laps: Vec::new(),
    };
    segment_inner(image, cfg, &mut dump, &mut clock)
}

fn segment_inner(
    image: &Raster,
    cfg: &PipelineConfig,
    dump: &mut Dumper<'_>,
    clock: &mut Clock,
) -> Result<Segmentation> {
    let (w, h) = (image.width(), image.height());

    let mut gray = to_grayscale(image);
    if cfg.invert {
        gray = invert(&gray);
    }
    let bin = binarize_otsu(&gray);
    dump.raster("gray.pgm", &gray)?;
    dump.raster("binary.pgm", &bin.to_raster())?;
    clock.lap("preprocess");

    let n_cols = cfg.grid.n_cols.unwrap_or_else(|| estimate_columns(&bin));
    let n_rows = cfg.grid.n_rows.unwrap_or(1);
    let spec = GridSpec::new(w, h, n_cols, n_rows)
        .and_then(|s| s.with_margin(cfg.margin))
        .map_err(|e| PipelineError::stage("grid", e))?;
    let (col_expected, row_expected) = expected_grid(&spec);
    let cols = snap_axis(&bin, &spec, &col_expected, Axis::Columns, cfg)?;
    let rows = snap_axis(&bin, &spec, &row_expected, Axis::Rows, cfg)?;
    let (col_cuts, row_cuts) = (cols.cuts.clone(), rows.cuts.clone());
    dump.json(
        "grid.json",
        &GridDump {
            spec: &spec,
            columns: &cols,
            rows: &rows,
        },
    )?;
    let grid = GridInfo {
        n_cols,
        n_rows,
        col_cuts: col_cuts.clone(),
        row_cuts: row_cuts.clone(),
        inserted_cuts: cols.inserted.len() + rows.inserted.len(),
        rejected_lines: [&cols, &rows]
            .iter()
            .map(|r| r.rejected.len() + r.in_margin.len())
            .sum(),
    };
    let rects = cell_rects(w, h, &col_cuts, &row_cuts, cfg.reading_order)
        .map_err(|e| PipelineError::stage("grid", e))?;
    dump.json("cells.json", &rects)?;
    clock.lap("grid");

    let external = match &cfg.detections {
        Some(p) => import_detections(p, w, h).map_err(|e| PipelineError::stage("segment", e))?,
        None => Vec::new(),
    };
    let mut skipped = Vec::new();
    let mut detections = Vec::new();
    for rect in &rects {
        let cell = [rect.col, rect.row];
        let ext: Vec<Detection> = external
            .iter()
            .filter(|d| contains_center(rect, d))
            .cloned()
            .collect();
        let mut contour = Vec::new();
        match inset(rect, cfg.cell_inset) {
            Some((x0, y0, x1, y1)) => {
                let sub = bin
                    .crop(x0, y0, x1, y1)
                    .expect("inset lies inside the cell");
                contour.extend(
                    contour_boxes(&find_contours(&sub), cfg.min_area)
                        .into_iter()
                        .map(|b| Detection::contour(b.translate(x0, y0))),
                );
            }
            None => {
                warn!("cell {cell:?} is narrower than twice the inset; only external boxes used");
                skipped.push(SkippedCell {
                    cell,
                    stage: "segment".into(),
                    error: format!("cell smaller than the {} px inset", cfg.cell_inset),
                });
            }
        }
        let merged = hybrid_merge(&contour, &ext, cfg.iou_thresh, cfg.reading_order);
        debug!(
            "cell {cell:?}: {} contour, {} external, {} kept",
            contour.len(),
            ext.len(),
            merged.len()
        );
        detections.extend(
            merged
                .into_iter()
                .map(|detection| CellDetection { cell, detection }),
        );
    }
    dump.json("detections.json", &detections)?;
    clock.lap("segment");
    Ok(Segmentation {
        gray,
        grid,
        cells: rects,
        detections,
        skipped,
    })
}

/// Run the pipeline on an in-memory image.
///
/// A glyph that cannot be classified is skipped and listed in the report;
/// failures that concern the whole plate (grid geometry, translation) stop
/// the run with an error tagged by stage.
pub fn run_pipeline_with(
    image: &Raster,
    cfg: &PipelineConfig,
    models: &Models,
    opts: &RunOptions,
) -> Result<TranslationReport> {
    cfg.validate()?;
    let mut clock = Clock {
        on: opts.timings,
        last: Instant::now(),
        laps: Vec::new(),
    };
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let mut dump = Dumper {
        dir: opts.dump_dir.as_deref(),
        next: 0,
    };
    let seg = segment_inner(image, cfg, &mut dump, &mut clock)?;
    let (w, h) = (image.width(), image.height());
    let gray = seg.gray;
    let mut skipped = seg.skipped;

    let mut glyphs = Vec::with_capacity(seg.detections.len());
    for CellDetection {
        cell,
        detection: det,
    } in &seg.detections
    {
        let cell = *cell;
        let topk = models
            .recognizer
            .recognize(&gray, &det.bbox, cfg.top_k)
            .and_then(|t| {
                if t.is_empty() {
                    Err("recognizer returned no candidates".to_string())
                } else {
                    Ok(t)
                }
            });
        let topk = match topk {
            Ok(t) => t,
            Err(e) => {
                warn!("glyph {:?} in cell {cell:?} skipped: {e}", det.bbox);
                skipped.push(SkippedCell {
                    cell,
                    stage: "classify".into(),
                    error: e,
                });
                continue;
            }
        };
        glyphs.push(GlyphRecord {
            index: glyphs.len(),
            cell,
            bbox: det.bbox,
            source: det.source,
            code: topk[0].code.clone(),
            topk,
        });
    }
    dump.json("glyphs.json", &glyphs)?;
    clock.lap("classify");

    let mut transliteration = Vec::new();
    let mut dropped = Vec::new();
    for g in &glyphs {
        match parse_gardiner(&g.code) {
            Ok(code) => {
                let t = sequence_to_translit(&[code], &models.lexicon);
                transliteration.extend(t.tokens);
                dropped.extend(t.dropped.iter().map(ToString::to_string));
            }
            Err(e) => {
                warn!("glyph {} has unparsable code {:?}: {e}", g.index, g.code);
                dropped.push(g.code.clone());
            }
        }
    }
    dump.json("transliteration.json", &transliteration)?;
    clock.lap("transliterate");

    let (english, score) = match &models.translator {
        Some(t) if !transliteration.is_empty() => {
            let hyp = if cfg.beam == 1 {
                greedy_decode(t, &transliteration, cfg.max_len)
            } else {
                beam_decode(t, &transliteration, cfg.beam, cfg.max_len, cfg.length_alpha)
                    .map(|mut hs| hs.remove(0))
            }
            .map_err(|e| PipelineError::stage("translate", e))?;
            let score = decode_scores(std::slice::from_ref(&hyp)).ok();
            (Some(hyp.words().join(" ")), score)
        }
        _ => (None, None),
    };
    clock.lap("translate");

    let mut report = TranslationReport {
        schema: REPORT_SCHEMA,
        width: w,
        height: h,
        reading_order: cfg.reading_order,
        seed: cfg.seed,
        grid: seg.grid,
        glyphs,
        transliteration,
        dropped,
        english,
        score,
        skipped,
        timings: None,
    };
    dump.json("report.json", &report)?;
    clock.lap("report");
    if opts.timings {
        report.timings = Some(clock.laps);
    }
    Ok(report)
}
