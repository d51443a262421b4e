//! Fixtures shared by the pipeline, CLI and acceptance tests.

#![allow(dead_code)]

use std::sync::OnceLock;

use hgt_core::gardiner::Lexicon;
use hgt_core::layout::{iou, BBox};
use hgt_core::synth::{render_plate, PlacedGlyph, Plate, PlateSpec};
use hgt_models::translator::{
    toy_corpus, train_translator, TrainOptions, Translator, TranslatorConfig,
};
use hgt_pipeline::{CodeScore, GlyphRecognizer, Models, PipelineConfig};

/// The offering formula, sign by sign; the final determinative carries no
/// sound.
pub const OFFERING_SIGNS: [&str; 12] = [
    "M23", "X1", "N35", "R4", "X1", "Q3", "D37", "R8", "O29", "G5", "S34", "A40",
];
pub const OFFERING_TRANSLIT: &str = "sw t n Htp t p di nTr aA Hr anx";
pub const OFFERING_ENGLISH: &str = "an offering which the king gives to horus the great god living";

/// Knows where every glyph of a rendered plate was drawn and answers with
/// the code drawn at the best-overlapping position.
pub struct RenderOracle {
    pub glyphs: Vec<PlacedGlyph>,
}

impl GlyphRecognizer for RenderOracle {
    fn recognize(
        &self,
        _: &hgt_core::imaging::Raster,
        bbox: &BBox,
        _k: usize,
    ) -> Result<Vec<CodeScore>, String> {
        let best = self
            .glyphs
            .iter()
            .map(|g| (iou(&g.bbox, bbox), g))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or("empty plate")?;
        if best.0 < 0.5 {
            return Err(format!("no glyph was drawn at {bbox:?}"));
        }
        Ok(vec![CodeScore {
            code: best.1.code.clone(),
            prob: 1.0,
        }])
    }
}

pub fn offering_plate(seed: u64) -> Plate {
    let spec = PlateSpec {
        seed,
        ..PlateSpec::default()
    };
    render_plate(&OFFERING_SIGNS, &spec).unwrap()
}

pub fn plate_config(n_cols: usize) -> PipelineConfig {
    PipelineConfig {
        grid: hgt_pipeline::GridConfig {
            n_cols: Some(n_cols),
            n_rows: Some(1),
        },
        ..PipelineConfig::default()
    }
}

/// The toy-corpus translator trained until every target token is right.
pub fn overfit_translator() -> &'static Translator {
    static MODEL: OnceLock<Translator> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut opts = TrainOptions::new(500, 2e-3, 1);
        opts.stop_at_accuracy = Some(1.0);
        train_translator(&toy_corpus(), &TranslatorConfig::default(), &opts)
            .unwrap()
            .0
    })
}

pub fn oracle_models(plate: &Plate, translator: Option<Translator>) -> Models {
    Models {
        recognizer: Box::new(RenderOracle {
            glyphs: plate.glyphs.clone(),
        }),
        translator,
        lexicon: Lexicon::bundled(),
    }
}
