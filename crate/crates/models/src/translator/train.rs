use hgt_nn::{Adam, Optimizer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_vocab, Batch, Result, Translator, TranslatorConfig, TranslatorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop once teacher-forced token accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl TrainOptions {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            seed,
            batch_size: 10,
            clip_norm: Some(1.0),
            stop_at_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches.
    pub train_loss: f64,
    /// Teacher-forced argmax accuracy over target tokens (with `<eos>`),
    /// inference mode, after the epoch's updates.
    pub token_accuracy: f64,
}

impl Translator {
    /// Adam on teacher-forced cross-entropy over shuffled minibatches.
    pub fn fit(
        &mut self,
        pairs: &[(String, String)],
        opts: &TrainOptions,
    ) -> Result<Vec<EpochStats>> {
        if pairs.is_empty() {
            return Err(TranslatorError::EmptyCorpus);
        }
        if opts.batch_size == 0 {
            return Err(TranslatorError::InvalidConfig(
                "batch size must be positive".into(),
            ));
        }
        let data = self.encode_pairs(pairs);
        let max = self.config.max_len;
        for (s, t) in &data {
            if s.len() > max || t.len() + 1 > max {
                return Err(TranslatorError::SequenceTooLong {
                    len: s.len().max(t.len() + 1),
                    max,
                });
            }
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5348_5546);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4452_4f50);
        let mut opt = Adam::new(opts.lr);
        let mut history = Vec::with_capacity(opts.epochs);
        for epoch in 1..=opts.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(opts.batch_size) {
                let items: Vec<_> = chunk.iter().map(|&i| data[i].clone()).collect();
                let batch = Batch::new(&items, 0, 0);
                let (tape, _, loss) = self.loss_tape(&batch, true, &mut dropout_rng)?;
                let value = tape.value(loss)[0] as f64;
                if !value.is_finite() {
                    return Err(TranslatorError::DivergedLoss { epoch });
                }
                let mut grads = tape.backward(loss)?;
                if let Some(c) = opts.clip_norm {
                    grads.clip_global_norm(c);
                }
                opt.step(&mut self.params, &grads)?;
                total += value;
                batches += 1;
            }
            let (correct, counted) = self.token_accuracy_counts(&data)?;
            let token_accuracy = correct as f64 / counted.max(1) as f64;
            history.push(EpochStats {
                epoch,
                train_loss: total / batches as f64,
                token_accuracy,
            });
            if opts.stop_at_accuracy.is_some_and(|a| token_accuracy >= a) {
                break;
            }
        }
        Ok(history)
    }
}

/// Build both vocabularies from `pairs`, initialize from `opts.seed` and
/// train.
pub fn train_translator(
    pairs: &[(String, String)],
    cfg: &TranslatorConfig,
    opts: &TrainOptions,
) -> Result<(Translator, Vec<EpochStats>)> {
    if pairs.is_empty() {
        return Err(TranslatorError::EmptyCorpus);
    }
    let src: Vec<&str> = pairs.iter().map(|(s, _)| s.as_str()).collect();
    let tgt: Vec<&str> = pairs.iter().map(|(_, t)| t.as_str()).collect();
    let mut model = Translator::new(
        cfg.clone(),
        build_vocab(&src, 1)?,
        build_vocab(&tgt, 1)?,
        opts.seed,
    )?;
    let history = model.fit(pairs, opts)?;
    Ok((model, history))
}
