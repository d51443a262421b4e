use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgt_core::imaging::{
    binarize_otsu, invert, load_image, save_image, to_grayscale, AugSpec, Raster,
};
use hgt_core::layout::ReadingOrder;
use hgt_core::metrics::{
    bleu_corpus, bleu_sentence_avg, bleu_tokenize, perplexity, whitespace_tokenize, BleuSummary,
    ClassificationReport, ConfusionMatrix, MetricsReport,
};
use hgt_core::synth::{render_plate, PlateSpec};
use hgt_models::glyphclass::{
    evaluate, predict_topk, rendered_glyph_set, split_dataset, train_classifier, ClassifierConfig,
    GlyphClassifier, GlyphDataset, SplitSpec, TrainOptions as ClassifierTrainOptions,
};
use hgt_models::translator::{
    beam_decode, decode_scores, greedy_decode, load_parallel_corpus, toy_corpus, train_translator,
    Hypothesis, TrainOptions as TranslatorTrainOptions, Translator, TranslatorConfig,
};
use hgt_pipeline::{
    crop_to_ink, emit_overlay, run_pipeline_with, segment_plate, Models, OverlayStyle,
    PipelineConfig, RunOptions,
};
use serde::Serialize;
use serde_json::json;

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

/// Hieroglyph plate segmentation, sign classification and translation.
#[derive(Parser)]
#[command(name = "hgt", version)]
struct Cli {
    /// Seed for every random choice: initialization, shuffling, dropout,
    /// augmentation and data splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert to grayscale, optionally invert and binarize.
    Preprocess(PreprocessArgs),
    /// Split a plate into grid cells and report glyph boxes.
    Segment(SegmentArgs),
    /// Train, evaluate or apply the glyph classifier.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Train, evaluate or apply the transliteration translator.
    #[command(subcommand)]
    Translate(TranslateCommand),
    /// Run the whole pipeline on a plate and print the report.
    Run(RunArgs),
    /// Score hypotheses against references.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Draw a synthetic plate from Gardiner codes.
    Render(RenderArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Comma-separated codes in reading order.
    #[arg(long, value_delimiter = ',', required = true)]
    codes: Vec<String>,
    #[arg(long, default_value_t = 3)]
    n_cols: usize,
    /// Glyph slots per column.
    #[arg(long, default_value_t = 4)]
    slots: usize,
    #[arg(long)]
    no_separators: bool,
    #[arg(long)]
    frame: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the drawn glyph boxes and codes as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Treat light ink on a dark ground.
    #[arg(long)]
    invert: bool,
    /// Write the Otsu foreground mask instead of the grayscale image.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct PlateArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    n_cols: Option<usize>,
    #[arg(long)]
    n_rows: Option<usize>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    reading_order: Option<ReadingOrder>,
}

impl PlateArgs {
    fn config(&self, seed: Option<u64>) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.invert |= self.invert;
        cfg.grid.n_cols = self.n_cols.or(cfg.grid.n_cols);
        cfg.grid.n_rows = self.n_rows.or(cfg.grid.n_rows);
        if let Some(d) = &self.detections {
            cfg.detections = Some(d.clone());
        }
        if let Some(o) = self.reading_order {
            cfg.reading_order = o;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    plate: PlateArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    plate: PlateArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write an annotated PPM.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Leave index and code labels out of the overlay.
    #[arg(long)]
    no_labels: bool,
    /// Dump every stage's output as numbered PGM/JSON files.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Include per-stage wall-clock times in the report.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct GlyphSource {
    /// Directory with one subdirectory per Gardiner code, or a
    /// `path<TAB>code` list.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated codes to render synthetic training glyphs for.
    #[arg(long, value_delimiter = ',')]
    render: Option<Vec<String>>,
}

#[derive(Args)]
struct CropArgs {
    /// Context kept around the ink when cropping, as a fraction of the
    /// glyph's longer side.
    #[arg(long, default_value_t = 0.1)]
    crop_margin: f64,
    /// Use images as they are instead of cropping them to their ink.
    #[arg(long)]
    no_crop: bool,
}

impl CropArgs {
    fn apply(&self, img: Raster) -> Raster {
        if self.no_crop {
            img
        } else {
            crop_to_ink(&img, self.crop_margin)
        }
    }
}

#[derive(Subcommand)]
enum ClassifyCommand {
    Train(ClassifyTrainArgs),
    Eval(ClassifyEvalArgs),
    Predict(ClassifyPredictArgs),
}

#[derive(Args)]
struct ClassifyTrainArgs {
    #[command(flatten)]
    source: GlyphSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 48)]
    glyph_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    /// Train only the head; backbone weights stay at their initial values.
    #[arg(long)]
    freeze_backbone: bool,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Keep training after every training item is classified correctly.
    #[arg(long)]
    no_early_stop: bool,
    #[command(flatten)]
    crop: CropArgs,
}

#[derive(Args)]
struct ClassifyEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    crop: CropArgs,
}

#[derive(Args)]
struct ClassifyPredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    crop: CropArgs,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CorpusSource {
    /// `transliteration<TAB>english` lines.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// The bundled 50-pair corpus.
    #[arg(long)]
    toy: bool,
}

impl CorpusSource {
    fn load(&self) -> CliResult<Vec<(String, String)>> {
        Ok(match &self.corpus {
            Some(p) => load_parallel_corpus(p)?,
            None => toy_corpus(),
        })
    }
}

#[derive(Subcommand)]
enum TranslateCommand {
    Train(TranslateTrainArgs),
    Eval(TranslateEvalArgs),
    Predict(TranslatePredictArgs),
}

#[derive(Args)]
struct TranslateTrainArgs {
    #[command(flatten)]
    source: CorpusSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Stop once teacher-forced token accuracy reaches this value.
    #[arg(long)]
    stop_at_accuracy: Option<f64>,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Length-normalization exponent for beam ranking.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

impl DecodeArgs {
    fn decode(&self, model: &Translator, src: &[String]) -> CliResult<Hypothesis> {
        Ok(if self.beam == 1 {
            greedy_decode(model, src, self.max_len)?
        } else {
            beam_decode(model, src, self.beam, self.max_len, self.alpha)?.remove(0)
        })
    }
}

#[derive(Args)]
struct TranslateEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: CorpusSource,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct TranslatePredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Space-separated transliteration tokens.
    #[arg(long)]
    text: String,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// BLEU-4 of one hypothesis per line against one reference per line.
    Bleu(BleuArgs),
    /// Classification scores from `truth<TAB>predicted` label lines.
    Classification(ClassificationArgs),
    /// Perplexity of natural-log token probabilities, one per line.
    Ppl(PplArgs),
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    hyps: PathBuf,
    /// Add-epsilon smoothing for the sentence-averaged score.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Args)]
struct ClassificationArgs {
    #[arg(long)]
    pairs: PathBuf,
}

#[derive(Args)]
struct PplArgs {
    #[arg(long)]
    logprobs: PathBuf,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
        None => {
            // A closed pipe (`hgt ... | head`) is not an error.
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn preprocess(args: &PreprocessArgs) -> CliResult {
    let mut g = to_grayscale(&load_image(&args.image)?);
    if args.invert {
        g = invert(&g);
    }
    if args.binary {
        g = invert(&binarize_otsu(&g).to_raster());
    }
    save_image(&g, &args.out)?;
    Ok(())
}

fn load_glyphs(
    source: &GlyphSource,
    args: &ClassifyTrainArgs,
    seed: u64,
) -> CliResult<GlyphDataset<Raster>> {
    let mut ds = match (&source.data, &source.render) {
        (Some(p), _) => glyph_dataset(p)?,
        (None, Some(codes)) => rendered_glyph_set(
            codes,
            args.per_class,
            args.glyph_size,
            &AugSpec::standard(seed),
        )?,
        (None, None) => unreachable!("clap requires one source"),
    };
    for item in &mut ds.items {
        item.0 = args
            .crop
            .apply(std::mem::replace(&mut item.0, Raster::filled(1, 1, 0)));
    }
    Ok(ds)
}

fn glyph_dataset(path: &Path) -> CliResult<GlyphDataset<Raster>> {
    let ds = if path.is_dir() {
        GlyphDataset::from_dir(path)?
    } else {
        GlyphDataset::from_labels_tsv(path)?
    };
    Ok(ds.load_images()?)
}

fn classify(cmd: &ClassifyCommand, seed: u64) -> CliResult {
    match cmd {
        ClassifyCommand::Train(args) => {
            let ds = load_glyphs(&args.source, args, seed)?;
            let (train, valid, test) = split_dataset(&ds, &SplitSpec::standard(seed))?;
            let mut opts = ClassifierTrainOptions::new(args.epochs, args.lr, seed);
            opts.batch_size = args.batch_size;
            opts.stop_when_fit = !args.no_early_stop;
            let (model, history) = match &args.init {
                Some(p) => {
                    let mut m = GlyphClassifier::load(p)?;
                    if m.class_index != ds.class_index {
                        return Err("initial checkpoint was trained on different classes".into());
                    }
                    m.set_freeze_backbone(args.freeze_backbone);
                    let h = m.fit(&train, &valid, &opts)?;
                    (m, h)
                }
                None => {
                    let mut cfg = ClassifierConfig::new(ds.num_classes());
                    cfg.input_size = args.input_size;
                    cfg.freeze_backbone = args.freeze_backbone;
                    train_classifier(&train, &valid, &cfg, &opts)?
                }
            };
            model.save(&args.out)?;
            let test_eval = (!test.is_empty())
                .then(|| evaluate(&model, &test))
                .transpose()?;
            let test_metrics = test_eval
                .as_ref()
                .map(|e| ClassificationReport::from_matrix(&e.confusion))
                .transpose()?;
            emit(
                &json!({
                    "classes": ds.class_index.labels(),
                    "split": [train.len(), valid.len(), test.len()],
                    "epochs": history.len(),
                    "last": history.last(),
                    "test": test_metrics
                        .map(|m| MetricsReport::default().with_classification(&m)),
                }),
                None,
            )
        }
        ClassifyCommand::Eval(args) => {
            let model = GlyphClassifier::load(&args.model)?;
            let mut ds = glyph_dataset(&args.data)?;
            for item in &mut ds.items {
                item.0 = args
                    .crop
                    .apply(std::mem::replace(&mut item.0, Raster::filled(1, 1, 0)));
            }
            // Labels are matched by name, so the data may list classes in
            // any order.
            let eval_ds = GlyphDataset {
                items: ds
                    .items
                    .iter()
                    .map(|(img, id)| {
                        let label = ds.class_index.label(*id).unwrap_or_default();
                        model
                            .class_index
                            .id(label)
                            .map(|m| (img.clone(), m))
                            .ok_or_else(|| format!("class {label} unknown to the model"))
                    })
                    .collect::<Result<_, _>>()?,
                class_index: model.class_index.clone(),
            };
            let e = evaluate(&model, &eval_ds)?;
            let report = ClassificationReport::from_matrix(&e.confusion)?;
            emit(
                &json!({
                    "items": eval_ds.len(),
                    "loss": e.loss,
                    "metrics": MetricsReport::default().with_classification(&report),
                }),
                None,
            )
        }
        ClassifyCommand::Predict(args) => {
            let model = GlyphClassifier::load(&args.model)?;
            let img = args.crop.apply(load_image(&args.image)?);
            emit(&predict_topk(&model, &img, args.k)?, None)
        }
    }
}

fn translate(cmd: &TranslateCommand, seed: u64) -> CliResult {
    match cmd {
        TranslateCommand::Train(args) => {
            let pairs = args.source.load()?;
            let cfg = TranslatorConfig {
                max_len: args.max_len,
                ..TranslatorConfig::default()
            };
            let mut opts = TranslatorTrainOptions::new(args.epochs, args.lr, seed);
            opts.batch_size = args.batch_size;
            opts.stop_at_accuracy = args.stop_at_accuracy;
            let (model, history) = train_translator(&pairs, &cfg, &opts)?;
            model.save(&args.out)?;
            emit(
                &json!({"pairs": pairs.len(), "epochs": history.len(), "last": history.last()}),
                None,
            )
        }
        TranslateCommand::Eval(args) => {
            let model = Translator::load(&args.model)?;
            let pairs = args.source.load()?;
            let mut hyps = Vec::with_capacity(pairs.len());
            for (src, _) in &pairs {
                hyps.push(args.decode.decode(&model, &whitespace_tokenize(src))?);
            }
            let texts: Vec<String> = hyps.iter().map(|h| h.words().join(" ")).collect();
            let refs: Vec<Vec<String>> =
                pairs.iter().map(|(_, t)| whitespace_tokenize(t)).collect();
            let outs: Vec<Vec<String>> = texts.iter().map(|t| whitespace_tokenize(t)).collect();
            let norm_refs: Vec<Vec<String>> = pairs.iter().map(|(_, t)| bleu_tokenize(t)).collect();
            let norm_outs: Vec<Vec<String>> = texts.iter().map(|t| bleu_tokenize(t)).collect();
            let score = decode_scores(&hyps)?;
            let exact = refs.iter().zip(&outs).filter(|(r, o)| r == o).count();
            emit(
                &json!({
                    "pairs": pairs.len(),
                    "exact": exact,
                    "bleu_corpus": BleuSummary::from(&bleu_corpus(&refs, &outs, 4)?),
                    "bleu_sentence_avg": BleuSummary::from(&bleu_sentence_avg(&refs, &outs, 0.1)?),
                    "bleu_normalized": BleuSummary::from(&bleu_corpus(&norm_refs, &norm_outs, 4)?),
                    "score": score,
                }),
                None,
            )
        }
        TranslateCommand::Predict(args) => {
            let model = Translator::load(&args.model)?;
            let hyp = args
                .decode
                .decode(&model, &whitespace_tokenize(&args.text))?;
            emit(
                &json!({
                    "english": hyp.words().join(" "),
                    "score": decode_scores(std::slice::from_ref(&hyp))?,
                }),
                None,
            )
        }
    }
}

fn lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read(path)?.lines().map(str::to_string).collect())
}

fn metrics(cmd: &MetricsCommand) -> CliResult {
    match cmd {
        MetricsCommand::Bleu(args) => {
            let (refs, hyps) = (lines(&args.refs)?, lines(&args.hyps)?);
            let ws = |v: &[String]| v.iter().map(|s| whitespace_tokenize(s)).collect::<Vec<_>>();
            let nt = |v: &[String]| v.iter().map(|s| bleu_tokenize(s)).collect::<Vec<_>>();
            emit(
                &json!({
                    "corpus": BleuSummary::from(&bleu_corpus(&ws(&refs), &ws(&hyps), 4)?),
                    "sentence_avg": BleuSummary::from(&bleu_sentence_avg(&ws(&refs), &ws(&hyps), args.epsilon)?),
                    "normalized": BleuSummary::from(&bleu_corpus(&nt(&refs), &nt(&hyps), 4)?),
                }),
                None,
            )
        }
        MetricsCommand::Classification(args) => {
            let mut pairs = Vec::new();
            for (n, line) in read(&args.pairs)?.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let (t, p) = line
                    .split_once('\t')
                    .ok_or_else(|| format!("line {}: expected truth<TAB>predicted", n + 1))?;
                pairs.push((t.trim().to_string(), p.trim().to_string()));
            }
            let mut labels: Vec<&str> = pairs
                .iter()
                .flat_map(|(t, p)| [t.as_str(), p.as_str()])
                .collect();
            labels.sort_unstable();
            labels.dedup();
            let id = |s: &str| labels.binary_search(&s).expect("label collected");
            let cm = ConfusionMatrix::from_pairs(
                labels.len(),
                pairs.iter().map(|(t, p)| (id(t), id(p))),
            )?;
            let report = ClassificationReport::from_matrix(&cm)?;
            emit(
                &json!({"labels": labels, "metrics": MetricsReport::default().with_classification(&report)}),
                None,
            )
        }
        MetricsCommand::Ppl(args) => {
            let lps = read(&args.logprobs)?
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()?;
            emit(&MetricsReport::default().with_ppl(perplexity(&lps)?), None)
        }
    }
}

fn segment(args: &SegmentArgs, seed: Option<u64>) -> CliResult {
    let cfg = args.plate.config(seed)?;
    cfg.check_files()?;
    let img = load_image(&args.plate.image)?;
    emit(&segment_plate(&img, &cfg)?, args.out.as_deref())
}

fn run(args: &RunArgs, seed: Option<u64>) -> CliResult {
    let cfg = args.plate.config(seed)?;
    let models = Models::load(&cfg)?;
    let img = load_image(&args.plate.image)?;
    let opts = RunOptions {
        dump_dir: args.dump_dir.clone(),
        timings: args.timings,
    };
    let report = run_pipeline_with(&img, &cfg, &models, &opts)?;
    if let Some(p) = &args.overlay {
        let style = OverlayStyle {
            labels: !args.no_labels,
            ..OverlayStyle::default()
        };
        emit_overlay(&img, &report, &style, p)?;
    }
    emit(&report, args.out.as_deref())
}

fn render(args: &RenderArgs, seed: u64) -> CliResult {
    let spec = PlateSpec {
        n_cols: args.n_cols,
        slots: args.slots,
        separators: !args.no_separators,
        frame: args.frame,
        seed,
        ..PlateSpec::default()
    };
    let plate = render_plate(&args.codes, &spec)?;
    save_image(&plate.image, &args.out)?;
    if let Some(p) = &args.truth {
        let glyphs: Vec<_> = plate
            .glyphs
            .iter()
            .map(|g| json!({"code": g.code, "box": g.bbox, "column": g.column, "slot": g.slot}))
            .collect();
        emit(
            &json!({"col_cuts": plate.col_cuts, "glyphs": glyphs}),
            Some(p),
        )?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Segment(a) => segment(a, cli.seed),
        Command::Classify(c) => classify(c, seed),
        Command::Translate(c) => translate(c, seed),
        Command::Run(a) => run(a, cli.seed),
        Command::Metrics(c) => metrics(c),
        Command::Render(a) => render(a, seed),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
