mod support;

use std::time::Instant;

use hgt_core::gardiner::Lexicon;
use hgt_core::imaging::{invert, Raster};
use hgt_core::layout::{BBox, DetectionSource};
use hgt_core::synth::{glyph_mask, paste_mask, render_plate, PlateSpec};
use hgt_pipeline::{
    render_overlay, run_pipeline_with, segment_plate, CodeScore, GlyphRecognizer, Models,
    OverlayStyle, PipelineError, RunOptions, TranslationReport,
};
use support::*;

fn run(img: &Raster, cfg: &hgt_pipeline::PipelineConfig, models: &Models) -> TranslationReport {
    run_pipeline_with(img, cfg, models, &RunOptions::default()).unwrap()
}

#[test]
fn blank_plate_gives_an_empty_report() {
    let plate = offering_plate(0);
    let models = oracle_models(&plate, None);
    let blank = Raster::filled(144, 192, 255);
    for cfg in [plate_config(3), hgt_pipeline::PipelineConfig::default()] {
        let r = run(&blank, &cfg, &models);
        assert!(r.glyphs.is_empty() && r.transliteration.is_empty());
        assert_eq!(r.english, None);
        assert_eq!(r.schema, 1);
    }
}

#[test]
fn rendered_plates_round_trip() {
    let codes = [
        "A1", "V31", "G17", "N35", "D21", "I9", "M17", "O1", "R4", "S34", "Aa15", "Z1",
    ];
    for seed in 0..6 {
        for n_cols in [2, 3, 4] {
            let spec = PlateSpec {
                n_cols,
                slots: 12usize.div_ceil(n_cols),
                separator_gaps: (seed % 3) as usize,
                frame: seed % 2 == 0,
                seed,
                ..PlateSpec::default()
            };
            let plate = render_plate(&codes, &spec).unwrap();
            let models = oracle_models(&plate, None);
            let r = run(&plate.image, &plate_config(n_cols), &models);
            assert_eq!(r.codes(), codes, "seed {seed}, {n_cols} columns");
            assert!(r.skipped.is_empty());
            for (g, placed) in r.glyphs.iter().zip(&plate.glyphs) {
                assert_eq!(g.bbox, placed.bbox);
                assert_eq!(g.source, DetectionSource::Contour);
                assert_eq!(g.code, g.topk[0].code);
            }
        }
    }
}

#[test]
fn columns_are_estimated_when_not_configured() {
    let plate = offering_plate(4);
    let models = oracle_models(&plate, None);
    let r = run(
        &plate.image,
        &hgt_pipeline::PipelineConfig::default(),
        &models,
    );
    assert_eq!(r.grid.n_cols, 3);
    assert_eq!(r.codes(), OFFERING_SIGNS);
}

#[test]
fn left_to_right_reverses_column_order() {
    let plate = offering_plate(1);
    let models = oracle_models(&plate, None);
    let mut cfg = plate_config(3);
    cfg.reading_order = hgt_core::layout::ReadingOrder::Ltr;
    let got = run(&plate.image, &cfg, &models).codes().join(" ");
    let want: Vec<&str> = OFFERING_SIGNS.chunks(4).rev().flatten().copied().collect();
    assert_eq!(got, want.join(" "));
}

#[test]
fn inverted_plates_need_the_invert_flag() {
    let plate = offering_plate(2);
    let models = oracle_models(&plate, None);
    let mut cfg = plate_config(3);
    cfg.invert = true;
    let r = run(&invert(&plate.image), &cfg, &models);
    assert_eq!(r.codes(), OFFERING_SIGNS);
}

#[test]
fn offering_plate_translates_with_the_overfit_model() {
    let plate = offering_plate(7);
    let models = oracle_models(&plate, Some(overfit_translator().clone()));
    for beam in [1, 4] {
        let mut cfg = plate_config(3);
        cfg.beam = beam;
        let r = run(&plate.image, &cfg, &models);
        assert_eq!(r.transliteration.join(" "), OFFERING_TRANSLIT);
        assert_eq!(r.dropped, ["A40"]);
        assert_eq!(r.english.as_deref(), Some(OFFERING_ENGLISH));
        let s = r.score.unwrap();
        assert!((s.pred_ppl - (-s.avg_logprob).exp()).abs() < 1e-9);
    }
}

#[test]
fn reports_are_byte_identical() {
    let plate = offering_plate(3);
    let models = oracle_models(&plate, Some(overfit_translator().clone()));
    let a = run(&plate.image, &plate_config(3), &models).to_json();
    let b = run(&plate.image, &plate_config(3), &models).to_json();
    assert_eq!(a, b);
    assert!(!a.contains("timings"));
    let back: TranslationReport = serde_json::from_str(&a).unwrap();
    assert_eq!(back.to_json(), a);
}

struct FailsOn(&'static str, RenderOracle);

impl GlyphRecognizer for FailsOn {
    fn recognize(&self, plate: &Raster, bbox: &BBox, k: usize) -> Result<Vec<CodeScore>, String> {
        let r = self.1.recognize(plate, bbox, k)?;
        if r[0].code == self.0 {
            Err("simulated damage".into())
        } else {
            Ok(r)
        }
    }
}

#[test]
fn a_failing_glyph_is_skipped_not_fatal() {
    let plate = offering_plate(5);
    let models = Models {
        recognizer: Box::new(FailsOn(
            "Q3",
            RenderOracle {
                glyphs: plate.glyphs.clone(),
            },
        )),
        translator: None,
        lexicon: Lexicon::bundled(),
    };
    let r = run(&plate.image, &plate_config(3), &models);
    let want: Vec<&str> = OFFERING_SIGNS
        .iter()
        .copied()
        .filter(|&c| c != "Q3")
        .collect();
    assert_eq!(r.codes(), want);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].stage, "classify");
    // Q3 sits in the second column read, i.e. the middle one.
    assert_eq!(r.skipped[0].cell, [1, 0]);
    let idx: Vec<usize> = r.glyphs.iter().map(|g| g.index).collect();
    assert_eq!(idx, (0..11).collect::<Vec<_>>());
}

#[test]
fn unknown_codes_are_dropped_from_the_transliteration() {
    struct Constant;
    impl GlyphRecognizer for Constant {
        fn recognize(&self, _: &Raster, _: &BBox, _: usize) -> Result<Vec<CodeScore>, String> {
            Ok(vec![CodeScore {
                code: "not-a-code".into(),
                prob: 1.0,
            }])
        }
    }
    let plate = offering_plate(0);
    let models = Models {
        recognizer: Box::new(Constant),
        translator: Some(overfit_translator().clone()),
        lexicon: Lexicon::bundled(),
    };
    let r = run(&plate.image, &plate_config(3), &models);
    assert_eq!(r.glyphs.len(), 12);
    assert!(r.transliteration.is_empty());
    assert_eq!(r.dropped.len(), 12);
    assert_eq!(r.english, None);
}

#[test]
fn grid_failures_stop_the_run_with_a_stage_tag() {
    let plate = offering_plate(0);
    let models = oracle_models(&plate, None);
    let mut cfg = plate_config(3);
    cfg.tol = Some(30.0);
    match run_pipeline_with(&plate.image, &cfg, &models, &RunOptions::default()) {
        Err(PipelineError::Stage { stage, .. }) => assert_eq!(stage, "grid"),
        other => panic!("expected a grid error, got {other:?}"),
    }
}

#[test]
fn external_boxes_split_touching_glyphs() {
    // Two glyphs in one column joined by an ink bridge.
    let mut img = Raster::filled(120, 80, 255);
    let a = paste_mask(&mut img, &glyph_mask("A1", 32), 20, 20).unwrap();
    let b = paste_mask(&mut img, &glyph_mask("V31", 32), 64, 20).unwrap();
    let y = (a.y0.max(b.y0) + a.y1.min(b.y1)) / 2;
    for x in a.x0 + 5..b.x1 - 5 {
        img.set(x, y, 0, 0);
        img.set(x, y + 1, 0, 0);
    }
    struct Any;
    impl GlyphRecognizer for Any {
        fn recognize(&self, _: &Raster, _: &BBox, _: usize) -> Result<Vec<CodeScore>, String> {
            Ok(vec![CodeScore {
                code: "A1".into(),
                prob: 1.0,
            }])
        }
    }
    let models = Models {
        recognizer: Box::new(Any),
        translator: None,
        lexicon: Lexicon::bundled(),
    };
    let cfg = plate_config(1);
    assert_eq!(run(&img, &cfg, &models).glyphs.len(), 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.json");
    let json = format!(
        r#"[{{"box":[{},{},{},{}],"score":0.9}},{{"box":[{},{},{},{}],"score":0.8}}]"#,
        a.x0, a.y0, a.x1, a.y1, b.x0, b.y0, b.x1, b.y1
    );
    std::fs::write(&path, json).unwrap();
    let mut cfg = cfg;
    cfg.detections = Some(path);
    let r = run(&img, &cfg, &models);
    let boxes: Vec<BBox> = r.glyphs.iter().map(|g| g.bbox).collect();
    // Right to left.
    assert_eq!(boxes, [b, a]);
    assert!(r
        .glyphs
        .iter()
        .all(|g| g.source == DetectionSource::External));
}

#[test]
fn segmentation_matches_the_run() {
    let plate = offering_plate(6);
    let seg = segment_plate(&plate.image, &plate_config(3)).unwrap();
    let models = oracle_models(&plate, None);
    let r = run(&plate.image, &plate_config(3), &models);
    assert_eq!(seg.cells.len(), 3);
    assert_eq!(seg.detections.len(), r.glyphs.len());
    for (d, g) in seg.detections.iter().zip(&r.glyphs) {
        assert_eq!(d.detection.bbox, g.bbox);
        assert_eq!(d.cell, g.cell);
    }
    assert_eq!(seg.grid, r.grid);
}

#[test]
fn timings_account_for_the_run() {
    let plate = offering_plate(8);
    let models = oracle_models(&plate, Some(overfit_translator().clone()));
    let opts = RunOptions {
        timings: true,
        ..RunOptions::default()
    };
    let cfg = plate_config(3);
    let start = Instant::now();
    let r = run_pipeline_with(&plate.image, &cfg, &models, &opts).unwrap();
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let t = r.timings.unwrap();
    let stages: Vec<&str> = t.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(
        stages,
        [
            "preprocess",
            "grid",
            "segment",
            "classify",
            "transliterate",
            "translate",
            "report"
        ]
    );
    let sum: f64 = t.iter().map(|s| s.ms).sum();
    assert!(
        sum <= wall && sum >= 0.95 * wall,
        "stages {sum} ms, wall {wall} ms"
    );
}

#[test]
fn dump_dir_holds_numbered_stage_outputs() {
    let plate = offering_plate(9);
    let models = oracle_models(&plate, None);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        dump_dir: Some(dir.path().join("stages")),
        timings: false,
    };
    run_pipeline_with(&plate.image, &plate_config(3), &models, &opts).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("stages"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "01_gray.pgm",
            "02_binary.pgm",
            "03_grid.json",
            "04_cells.json",
            "05_detections.json",
            "06_glyphs.json",
            "07_transliteration.json",
            "08_report.json",
        ]
    );
}

fn report_with(boxes: &[BBox]) -> TranslationReport {
    let plate = offering_plate(0);
    let models = oracle_models(&plate, None);
    let mut r = run(&Raster::filled(10, 10, 255), &plate_config(1), &models);
    let template = hgt_pipeline::GlyphRecord {
        index: 0,
        cell: [0, 0],
        bbox: BBox {
            x0: 0,
            y0: 0,
            x1: 1,
            y1: 1,
        },
        source: DetectionSource::Contour,
        topk: vec![CodeScore {
            code: "A1".into(),
            prob: 1.0,
        }],
        code: "A1".into(),
    };
    r.glyphs = boxes
        .iter()
        .enumerate()
        .map(|(i, &bbox)| hgt_pipeline::GlyphRecord {
            index: i,
            bbox,
            ..template.clone()
        })
        .collect();
    r
}

#[test]
fn overlay_of_an_empty_report_is_the_input() {
    let plate = offering_plate(0);
    let out = render_overlay(&plate.image, &report_with(&[]), &OverlayStyle::default()).unwrap();
    assert_eq!(out, plate.image.to_rgb());
}

#[test]
fn overlay_recolors_exactly_the_box_perimeter() {
    let img = Raster::filled(40, 30, 200);
    let b = BBox {
        x0: 5,
        y0: 7,
        x1: 20,
        y1: 16,
    };
    let style = OverlayStyle {
        labels: false,
        ..OverlayStyle::default()
    };
    let out = render_overlay(&img, &report_with(&[b]), &style).unwrap();
    let base = img.to_rgb();
    let mut changed = 0;
    for y in 0..30 {
        for x in 0..40 {
            let differs = (0..3).any(|c| out.get(x, y, c) != base.get(x, y, c));
            let inside = (b.x0..b.x1).contains(&x) && (b.y0..b.y1).contains(&y);
            let on_edge = inside && (x == b.x0 || x == b.x1 - 1 || y == b.y0 || y == b.y1 - 1);
            assert_eq!(differs, on_edge, "pixel ({x}, {y})");
            changed += differs as usize;
        }
    }
    assert_eq!(changed, 2 * (15 + 9) - 4);

    let labelled = render_overlay(&img, &report_with(&[b]), &OverlayStyle::default()).unwrap();
    assert_ne!(labelled, out);
}

#[test]
fn overlay_rejects_boxes_outside_the_image() {
    let img = Raster::filled(40, 30, 200);
    let r = report_with(&[BBox {
        x0: 30,
        y0: 0,
        x1: 41,
        y1: 5,
    }]);
    assert!(matches!(
        render_overlay(&img, &r, &OverlayStyle::default()),
        Err(PipelineError::Overlay(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    assert!(hgt_pipeline::emit_overlay(
        &img,
        &r,
        &OverlayStyle::default(),
        dir.path().join("o.ppm")
    )
    .is_err());
}

#[test]
fn overlay_file_is_a_ppm() {
    let plate = offering_plate(0);
    let models = oracle_models(&plate, None);
    let r = run(&plate.image, &plate_config(3), &models);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("o.ppm");
    hgt_pipeline::emit_overlay(&plate.image, &r, &OverlayStyle::default(), &p).unwrap();
    let back = hgt_core::imaging::load_image(&p).unwrap();
    assert_eq!(back.channels(), 3);
    assert_eq!(
        back,
        render_overlay(&plate.image, &r, &OverlayStyle::default()).unwrap()
    );
}
