use std::path::Path;

use hgt_core::imaging::{pad_to_square, resize_bilinear, to_grayscale, Raster};
use hgt_core::metrics::ConfusionMatrix;
use hgt_nn::{load_checkpoint, save_checkpoint, Adam, Optimizer, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassIndex, GlyphDataset, GlyphError, Result};

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const HEAD_PREFIX: &str = "head.";

const STANDARDIZE_EPS: f64 = 1e-6;
const CHECKPOINT_KIND: &str = "glyph-classifier";

/// Residual micro-CNN with a dense classification head.
///
/// Backbone: 3×3 stride-2 stem, max-pool, then `blocks` residual blocks;
/// every block after the first is preceded by a stride-2 convolution that
/// doubles the channels. Head: global average pool → dense(`head_hidden`) →
/// relu → dropout → dense(K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub blocks: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub freeze_backbone: bool,
}

impl ClassifierConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            input_size: 64,
            stem_channels: 16,
            blocks: 3,
            head_hidden: 256,
            dropout: 0.3,
            num_classes,
            freeze_backbone: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlyphError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.blocks == 0 || self.stem_channels == 0 || self.head_hidden == 0 {
            return bad("blocks, stem channels and head width must be positive".into());
        }
        let factor = 4usize << (self.blocks - 1);
        if self.input_size == 0 || self.input_size % factor != 0 {
            return bad(format!(
                "input size {} must be a positive multiple of {factor}",
                self.input_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn channels(&self, block: usize) -> usize {
        self.stem_channels << block
    }
}

/// Gray, pad to square with the image's brightest sample, bilinear resize,
/// then standardize to zero mean and unit deviation.
pub(crate) fn preprocess(img: &Raster, size: usize) -> Vec<f32> {
    let g = to_grayscale(img);
    let fill = g.data().iter().copied().max().unwrap_or(255);
    let g = resize_bilinear(&pad_to_square(&g, fill), size, size);
    let n = g.data().len() as f64;
    let mean = g.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = g
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let scale = 1.0 / (var.sqrt() + STANDARDIZE_EPS);
    g.data()
        .iter()
        .map(|&v| ((v as f64 - mean) * scale) as f32)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphClassifier {
    pub config: ClassifierConfig,
    pub class_index: ClassIndex,
    pub params: ParamStore,
}

fn he(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

impl GlyphClassifier {
    /// Freshly initialized model (He-normal weights, zero biases).
    pub fn new(config: ClassifierConfig, class_index: ClassIndex, seed: u64) -> Result<Self> {
        config.validate()?;
        if class_index.len() != config.num_classes {
            return Err(GlyphError::InvalidConfig(format!(
                "{} labels for {} classes",
                class_index.len(),
                config.num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let mut conv = |ps: &mut ParamStore, name: &str, cout: usize, cin: usize| -> Result<()> {
            ps.insert(
                format!("{BACKBONE_PREFIX}{name}.w"),
                he(vec![cout, cin, 3, 3], cin * 9, &mut rng),
            )?;
            ps.insert(
                format!("{BACKBONE_PREFIX}{name}.b"),
                Tensor::zeros(vec![cout]),
            )?;
            Ok(())
        };
        conv(&mut ps, "stem", config.stem_channels, 1)?;
        for i in 0..config.blocks {
            let c = config.channels(i);
            if i > 0 {
                conv(&mut ps, &format!("down{i}"), c, config.channels(i - 1))?;
            }
            conv(&mut ps, &format!("block{i}.conv1"), c, c)?;
            conv(&mut ps, &format!("block{i}.conv2"), c, c)?;
            ps.insert(
                format!("{BACKBONE_PREFIX}block{i}.ln.g"),
                Tensor::filled(vec![c], 1.0),
            )?;
            ps.insert(
                format!("{BACKBONE_PREFIX}block{i}.ln.b"),
                Tensor::zeros(vec![c]),
            )?;
        }
        let c = config.channels(config.blocks - 1);
        let (h, k) = (config.head_hidden, config.num_classes);
        ps.insert(format!("{HEAD_PREFIX}fc1.w"), he(vec![c, h], c, &mut rng))?;
        ps.insert(format!("{HEAD_PREFIX}fc1.b"), Tensor::zeros(vec![h]))?;
        ps.insert(
            format!("{HEAD_PREFIX}fc2.w"),
            Tensor::randn(vec![h, k], (1.0 / h as f64).sqrt(), &mut rng),
        )?;
        ps.insert(format!("{HEAD_PREFIX}fc2.b"), Tensor::zeros(vec![k]))?;
        let mut model = Self {
            config,
            class_index,
            params: ps,
        };
        model.apply_freeze();
        Ok(model)
    }

    fn apply_freeze(&mut self) {
        if self.config.freeze_backbone {
            self.params.freeze_prefix(BACKBONE_PREFIX);
        } else {
            self.params.unfreeze_prefix(BACKBONE_PREFIX);
        }
    }

    pub fn set_freeze_backbone(&mut self, freeze: bool) {
        self.config.freeze_backbone = freeze;
        self.apply_freeze();
    }

    /// Zero the output layer, making every prediction uniform.
    pub fn zero_head(&mut self) {
        for name in [format!("{HEAD_PREFIX}fc2.w"), format!("{HEAD_PREFIX}fc2.b")] {
            if let Ok(t) = self.params.get_mut(&name) {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn p(&self, tape: &mut Tape<f32>, name: &str) -> Var {
        let t = self.params.get(name).expect("parameter created in new");
        tape.param(name, t)
    }

    fn conv(&self, tape: &mut Tape<f32>, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.p(tape, &format!("{BACKBONE_PREFIX}{name}.w"));
        let b = self.p(tape, &format!("{BACKBONE_PREFIX}{name}.b"));
        Ok(tape.conv2d(x, w, Some(b), stride, 1)?)
    }

    /// Logits `[B, K]` for preprocessed inputs `[B, 1, S, S]`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape<f32>,
        inputs: Vec<f32>,
        batch: usize,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let s = self.config.input_size;
        let x = tape.constant(vec![batch, 1, s, s], inputs)?;
        let h = self.conv(tape, x, "stem", 2)?;
        let h = tape.relu(h);
        let mut h = tape.maxpool2x2(h)?;
        for i in 0..self.config.blocks {
            if i > 0 {
                h = self.conv(tape, h, &format!("down{i}"), 2)?;
                h = tape.relu(h);
            }
            let r = self.conv(tape, h, &format!("block{i}.conv1"), 1)?;
            let g = self.p(tape, &format!("{BACKBONE_PREFIX}block{i}.ln.g"));
            let b = self.p(tape, &format!("{BACKBONE_PREFIX}block{i}.ln.b"));
            let r = tape.layer_norm(r, 1, Some(g), Some(b))?;
            let r = tape.relu(r);
            let r = self.conv(tape, r, &format!("block{i}.conv2"), 1)?;
            let sum = tape.add(h, r)?;
            h = tape.relu(sum);
        }
        let h = tape.global_avg_pool(h)?;
        let w1 = self.p(tape, &format!("{HEAD_PREFIX}fc1.w"));
        let b1 = self.p(tape, &format!("{HEAD_PREFIX}fc1.b"));
        let h = tape.matmul(h, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.config.dropout, train, rng)?;
        let w2 = self.p(tape, &format!("{HEAD_PREFIX}fc2.w"));
        let b2 = self.p(tape, &format!("{HEAD_PREFIX}fc2.b"));
        let h = tape.matmul(h, w2)?;
        Ok(tape.add(h, b2)?)
    }

    /// Class probabilities for each image, in inference mode.
    pub fn probabilities(&self, images: &[&Raster]) -> Result<Vec<Vec<f64>>> {
        let k = self.config.num_classes;
        let mut out = Vec::with_capacity(images.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in images.chunks(32) {
            let inputs = chunk
                .iter()
                .flat_map(|img| preprocess(img, self.config.input_size))
                .collect();
            let mut tape = Tape::new();
            let logits = self.forward(&mut tape, inputs, chunk.len(), false, &mut rng)?;
            for row in tape.value(logits).chunks(k) {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
                let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
                let z: f64 = e.iter().sum();
                out.push(e.into_iter().map(|v| v / z).collect());
            }
        }
        Ok(out)
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.config,
            "labels": self.class_index.labels(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_checkpoint(&self.params, Some(&self.meta()), path)?)
    }

    /// Load a checkpoint written by [`GlyphClassifier::save`]; parameter
    /// names and shapes must match the stored configuration.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let bad = |m: &str| GlyphError::InvalidConfig(format!("checkpoint: {m}"));
        let meta = ck.meta.ok_or_else(|| bad("missing model description"))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(bad("not a glyph classifier"));
        }
        let config: ClassifierConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
        let labels: Vec<String> =
            serde_json::from_value(meta["labels"].clone()).map_err(|e| bad(&e.to_string()))?;
        let mut model = Self::new(config, ClassIndex::new(labels), 0)?;
        if model.params.len() != ck.params.len() {
            return Err(bad("parameter set does not match the configuration"));
        }
        for (name, t) in ck.params.iter() {
            let slot = model
                .params
                .get_mut(name)
                .map_err(|_| bad(&format!("unexpected parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(bad(&format!("parameter {name} has shape {:?}", t.shape())));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(model)
    }
}

/// One predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: usize,
    pub label: String,
    pub prob: f64,
}

/// The `k` most probable classes, most probable first (ties by class id).
pub fn predict_topk(model: &GlyphClassifier, img: &Raster, k: usize) -> Result<Vec<Prediction>> {
    let probs = model.probabilities(&[img])?.remove(0);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|c| Prediction {
            class_id: c,
            label: model.class_index.label(c).unwrap_or_default().to_string(),
            prob: probs[c],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Mean cross-entropy, accuracy and confusion matrix in inference mode.
pub fn evaluate(model: &GlyphClassifier, data: &GlyphDataset<Raster>) -> Result<Evaluation> {
    let k = model.config.num_classes;
    let images: Vec<&Raster> = data.items.iter().map(|(img, _)| img).collect();
    let probs = model.probabilities(&images)?;
    let mut confusion = ConfusionMatrix::new(k);
    let mut loss = 0.0;
    for (p, (_, truth)) in probs.iter().zip(&data.items) {
        let pred = (0..k)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        confusion
            .record(*truth, pred)
            .map_err(|e| GlyphError::InvalidConfig(e.to_string()))?;
        loss -= p[*truth].max(f64::MIN_POSITIVE).ln();
    }
    let n = data.len().max(1) as f64;
    let correct: u64 = (0..k).map(|c| confusion.get(c, c)).sum();
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Stop once every training item is classified correctly.
    pub stop_when_fit: bool,
}

impl TrainOptions {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            seed,
            batch_size: 16,
            stop_when_fit: false,
        }
    }
}

/// Per-epoch metrics, measured in inference mode after the epoch's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

fn check_split(a: &ClassIndex, b: &ClassIndex, k: usize) -> Result<()> {
    if a != b || a.len() != k {
        return Err(GlyphError::InvalidConfig(
            "train and valid splits must share the model's class index".into(),
        ));
    }
    Ok(())
}

impl GlyphClassifier {
    /// Adam on mean cross-entropy over shuffled minibatches. Frozen
    /// parameters are recorded as constants and never updated.
    pub fn fit(
        &mut self,
        train: &GlyphDataset<Raster>,
        valid: &GlyphDataset<Raster>,
        opts: &TrainOptions,
    ) -> Result<Vec<EpochStats>> {
        let k = self.config.num_classes;
        check_split(&train.class_index, &self.class_index, k)?;
        if !valid.is_empty() {
            check_split(&valid.class_index, &self.class_index, k)?;
        }
        if train.is_empty() || opts.batch_size == 0 {
            return Err(GlyphError::InvalidConfig(
                "training needs items and a positive batch size".into(),
            ));
        }
        let s = self.config.input_size;
        let inputs: Vec<Vec<f32>> = train
            .items
            .iter()
            .map(|(img, _)| preprocess(img, s))
            .collect();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5348_5546);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4452_4f50);
        let mut opt = Adam::new(opts.lr);
        let mut history = Vec::with_capacity(opts.epochs);
        for epoch in 1..=opts.epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(opts.batch_size) {
                let x = batch
                    .iter()
                    .flat_map(|&i| inputs[i].iter().copied())
                    .collect();
                let targets: Vec<Option<usize>> =
                    batch.iter().map(|&i| Some(train.items[i].1)).collect();
                let mut tape = Tape::new();
                let logits = self.forward(&mut tape, x, batch.len(), true, &mut dropout_rng)?;
                let loss = tape.cross_entropy(logits, &targets)?;
                if !tape.value(loss)[0].is_finite() {
                    return Err(GlyphError::DivergedLoss { epoch });
                }
                let grads = tape.backward(loss)?;
                opt.step(&mut self.params, &grads)?;
            }
            let tr = evaluate(self, train)?;
            if !tr.loss.is_finite() {
                return Err(GlyphError::DivergedLoss { epoch });
            }
            let va = if valid.is_empty() {
                None
            } else {
                Some(evaluate(self, valid)?)
            };
            history.push(EpochStats {
                epoch,
                train_loss: tr.loss,
                train_accuracy: tr.accuracy,
                valid_loss: va.as_ref().map(|e| e.loss),
                valid_accuracy: va.as_ref().map(|e| e.accuracy),
            });
            if opts.stop_when_fit && tr.accuracy == 1.0 {
                break;
            }
        }
        Ok(history)
    }
}

/// Initialize a model from `opts.seed` and train it.
pub fn train_classifier(
    train: &GlyphDataset<Raster>,
    valid: &GlyphDataset<Raster>,
    cfg: &ClassifierConfig,
    opts: &TrainOptions,
) -> Result<(GlyphClassifier, Vec<EpochStats>)> {
    let mut model = GlyphClassifier::new(cfg.clone(), train.class_index.clone(), opts.seed)?;
    let history = model.fit(train, valid, opts)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(k: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_size: 16,
            stem_channels: 4,
            blocks: 2,
            head_hidden: 8,
            dropout: 0.0,
            num_classes: k,
            freeze_backbone: false,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ClassifierConfig::new(10).validate().is_ok());
        assert!(ClassifierConfig::new(1).validate().is_err());
        let mut c = ClassifierConfig::new(3);
        c.input_size = 60;
        assert!(c.validate().is_err());
    }

    #[test]
    fn standardized_input() {
        let mut img = Raster::filled(20, 10, 200);
        img.set(3, 3, 0, 10);
        let x = preprocess(&img, 16);
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
        assert!(preprocess(&Raster::filled(16, 16, 7), 16)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut m =
            GlyphClassifier::new(tiny(5), ClassIndex::new(["A1", "B1", "C1", "D1", "E1"]), 3)
                .unwrap();
        m.zero_head();
        let top = predict_topk(&m, &Raster::filled(16, 16, 9), 5).unwrap();
        assert_eq!(top.len(), 5);
        for p in &top {
            assert!((p.prob - 0.2).abs() < 1e-12);
        }
        assert_eq!(top[0].class_id, 0);
    }
}
