use std::path::Path;

use hgt_nn::kernels::log_softmax_row;
use hgt_nn::{load_checkpoint, save_checkpoint, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS, EOS, PAD};
use super::{Result, TranslatorError};

const CHECKPOINT_KIND: &str = "translator";

/// Pre-layer-norm encoder-decoder transformer with sinusoidal positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Longest source or target sequence, counting `<bos>`/`<eos>`.
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            max_len: 64,
            dropout: 0.1,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TranslatorError::InvalidConfig(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "model dimension {} must be a positive multiple of {} heads",
                self.d_model, self.heads
            ));
        }
        if self.max_len < 2 {
            return bad(format!("max length {} must be at least 2", self.max_len));
        }
        if self.ffn_dim == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("layer counts and feed-forward width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(…)`.
fn positional_encoding(len: usize, d: usize) -> Vec<f32> {
    let mut pe = vec![0.0f32; len * d];
    for t in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = t as f64 / rate;
            pe[t * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() } as f32;
        }
    }
    pe
}

/// A padded batch of id sequences. Targets are teacher-forced: the decoder
/// reads `<bos> y…` and predicts `y… <eos>`; padding rows are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src: Vec<usize>,
    pub src_len: usize,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<Option<usize>>,
    pub tgt_len: usize,
}

impl Batch {
    /// Pad every sequence to the longest one, or to the given minimum
    /// lengths if larger.
    pub fn new(pairs: &[(Vec<usize>, Vec<usize>)], min_src: usize, min_tgt: usize) -> Self {
        let src_len = pairs
            .iter()
            .map(|(s, _)| s.len())
            .max()
            .unwrap_or(0)
            .max(min_src)
            .max(1);
        let tgt_len = pairs
            .iter()
            .map(|(_, t)| t.len() + 1)
            .max()
            .unwrap_or(1)
            .max(min_tgt);
        let mut src = Vec::with_capacity(pairs.len() * src_len);
        let mut tgt_in = Vec::with_capacity(pairs.len() * tgt_len);
        let mut tgt_out = Vec::with_capacity(pairs.len() * tgt_len);
        for (s, t) in pairs {
            src.extend(
                s.iter()
                    .copied()
                    .chain(std::iter::repeat(PAD))
                    .take(src_len),
            );
            let input = std::iter::once(BOS).chain(t.iter().copied());
            tgt_in.extend(input.chain(std::iter::repeat(PAD)).take(tgt_len));
            let output = t.iter().map(|&y| Some(y)).chain(std::iter::once(Some(EOS)));
            tgt_out.extend(output.chain(std::iter::repeat(None)).take(tgt_len));
        }
        Self {
            size: pairs.len(),
            src,
            src_len,
            tgt_in,
            tgt_out,
            tgt_len,
        }
    }
}

/// Encoder output for one source sentence, reused across decoding steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    pub(crate) src: Vec<usize>,
    pub(crate) memory: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translator {
    pub config: TranslatorConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub params: ParamStore,
}

/// Forward context: the tape, dropout stream and mode.
struct Fwd<'a> {
    tape: Tape<f32>,
    train: bool,
    rng: &'a mut ChaCha8Rng,
}

impl Translator {
    pub fn new(
        config: TranslatorConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut ps = ParamStore::new();
        let linear = |ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize| {
            ps.insert(
                format!("{name}.w"),
                Tensor::randn(vec![i, o], (1.0 / i as f64).sqrt(), rng),
            )?;
            ps.insert(format!("{name}.b"), Tensor::zeros(vec![o]))
        };
        let norm = |ps: &mut ParamStore, name: &str| {
            ps.insert(format!("{name}.g"), Tensor::filled(vec![d], 1.0))?;
            ps.insert(format!("{name}.b"), Tensor::zeros(vec![d]))
        };
        let std = (1.0 / d as f64).sqrt();
        ps.insert(
            "src.embed",
            Tensor::randn(vec![src_vocab.len(), d], std, &mut rng),
        )?;
        ps.insert(
            "tgt.embed",
            Tensor::randn(vec![tgt_vocab.len(), d], std, &mut rng),
        )?;
        let attn = |ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| -> hgt_nn::Result<()> {
            for p in ["q", "k", "v", "o"] {
                linear(ps, rng, &format!("{name}.{p}"), d, d)?;
            }
            Ok(())
        };
        let ffn = |ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| -> hgt_nn::Result<()> {
            linear(ps, rng, &format!("{name}.ffn1"), d, config.ffn_dim)?;
            linear(ps, rng, &format!("{name}.ffn2"), config.ffn_dim, d)
        };
        for l in 0..config.enc_layers {
            let p = format!("enc{l}");
            norm(&mut ps, &format!("{p}.ln1"))?;
            attn(&mut ps, &mut rng, &format!("{p}.self"))?;
            norm(&mut ps, &format!("{p}.ln2"))?;
            ffn(&mut ps, &mut rng, &p)?;
        }
        norm(&mut ps, "enc.ln")?;
        for l in 0..config.dec_layers {
            let p = format!("dec{l}");
            norm(&mut ps, &format!("{p}.ln1"))?;
            attn(&mut ps, &mut rng, &format!("{p}.self"))?;
            norm(&mut ps, &format!("{p}.ln2"))?;
            attn(&mut ps, &mut rng, &format!("{p}.cross"))?;
            norm(&mut ps, &format!("{p}.ln3"))?;
            ffn(&mut ps, &mut rng, &p)?;
        }
        norm(&mut ps, "dec.ln")?;
        linear(&mut ps, &mut rng, "out", d, tgt_vocab.len())?;
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params: ps,
        })
    }

    fn p(&self, f: &mut Fwd, name: &str) -> Var {
        f.tape.param(
            name,
            self.params.get(name).expect("parameter created in new"),
        )
    }

    fn linear(&self, f: &mut Fwd, x: Var, name: &str) -> Result<Var> {
        let w = self.p(f, &format!("{name}.w"));
        let b = self.p(f, &format!("{name}.b"));
        let y = f.tape.matmul(x, w)?;
        Ok(f.tape.add(y, b)?)
    }

    fn norm(&self, f: &mut Fwd, x: Var, name: &str) -> Result<Var> {
        let g = self.p(f, &format!("{name}.g"));
        let b = self.p(f, &format!("{name}.b"));
        Ok(f.tape.layer_norm(x, 2, Some(g), Some(b))?)
    }

    fn dropout(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        Ok(f.tape
            .dropout(x, self.config.dropout, f.train, &mut *f.rng)?)
    }

    fn attention(&self, f: &mut Fwd, x: Var, kv: Var, name: &str, allowed: &[bool]) -> Result<Var> {
        let q = self.linear(f, x, &format!("{name}.q"))?;
        let k = self.linear(f, kv, &format!("{name}.k"))?;
        let v = self.linear(f, kv, &format!("{name}.v"))?;
        let a = f
            .tape
            .attention(q, k, v, self.config.heads, Some(allowed))?;
        self.linear(f, a, &format!("{name}.o"))
    }

    /// `x + dropout(sublayer(x))`.
    fn residual(&self, f: &mut Fwd, x: Var, y: Var) -> Result<Var> {
        let y = self.dropout(f, y)?;
        Ok(f.tape.add(x, y)?)
    }

    fn ffn(&self, f: &mut Fwd, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(f, x, &format!("{name}.ffn1"))?;
        let h = f.tape.relu(h);
        self.linear(f, h, &format!("{name}.ffn2"))
    }

    fn embed(&self, f: &mut Fwd, table: &str, ids: &[usize], b: usize, t: usize) -> Result<Var> {
        let d = self.config.d_model;
        if t > self.config.max_len {
            return Err(TranslatorError::SequenceTooLong {
                len: t,
                max: self.config.max_len,
            });
        }
        let table = self.p(f, table);
        let e = f.tape.embedding(table, ids, &[b, t])?;
        let e = f.tape.scale(e, (d as f64).sqrt());
        let pe = f.tape.constant(vec![t, d], positional_encoding(t, d))?;
        let x = f.tape.add(e, pe)?;
        self.dropout(f, x)
    }

    fn encode_var(&self, f: &mut Fwd, src: &[usize], b: usize, ts: usize) -> Result<Var> {
        let allowed: Vec<bool> = (0..b)
            .flat_map(|bi| {
                let row = &src[bi * ts..(bi + 1) * ts];
                (0..ts).flat_map(move |_| row.iter().map(|&s| s != PAD))
            })
            .collect();
        let mut x = self.embed(f, "src.embed", src, b, ts)?;
        for l in 0..self.config.enc_layers {
            let p = format!("enc{l}");
            let h = self.norm(f, x, &format!("{p}.ln1"))?;
            let h = self.attention(f, h, h, &format!("{p}.self"), &allowed)?;
            x = self.residual(f, x, h)?;
            let h = self.norm(f, x, &format!("{p}.ln2"))?;
            let h = self.ffn(f, h, &p)?;
            x = self.residual(f, x, h)?;
        }
        self.norm(f, x, "enc.ln")
    }

    /// Logits `[B·Tt, V]` for teacher-forced decoder inputs.
    #[allow(clippy::too_many_arguments)]
    fn decode_var(
        &self,
        f: &mut Fwd,
        memory: Var,
        src: &[usize],
        ts: usize,
        tgt_in: &[usize],
        b: usize,
        tt: usize,
    ) -> Result<Var> {
        // Causal self-attention; a query may also never look at padding.
        let causal: Vec<bool> = (0..b)
            .flat_map(|bi| {
                let row = &tgt_in[bi * tt..(bi + 1) * tt];
                (0..tt).flat_map(move |i| (0..tt).map(move |j| j <= i && row[j] != PAD))
            })
            .collect();
        let cross: Vec<bool> = (0..b)
            .flat_map(|bi| {
                let row = &src[bi * ts..(bi + 1) * ts];
                (0..tt).flat_map(move |_| row.iter().map(|&s| s != PAD))
            })
            .collect();
        let mut x = self.embed(f, "tgt.embed", tgt_in, b, tt)?;
        for l in 0..self.config.dec_layers {
            let p = format!("dec{l}");
            let h = self.norm(f, x, &format!("{p}.ln1"))?;
            let h = self.attention(f, h, h, &format!("{p}.self"), &causal)?;
            x = self.residual(f, x, h)?;
            let h = self.norm(f, x, &format!("{p}.ln2"))?;
            let h = self.attention(f, h, memory, &format!("{p}.cross"), &cross)?;
            x = self.residual(f, x, h)?;
            let h = self.norm(f, x, &format!("{p}.ln3"))?;
            let h = self.ffn(f, h, &p)?;
            x = self.residual(f, x, h)?;
        }
        let x = self.norm(f, x, "dec.ln")?;
        let logits = self.linear(f, x, "out")?;
        Ok(f.tape.reshape(logits, vec![b * tt, self.tgt_vocab.len()])?)
    }

    /// Record the teacher-forced loss of `batch` on a fresh tape.
    pub(crate) fn loss_tape(
        &self,
        batch: &Batch,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tape<f32>, Var, Var)> {
        let mut f = Fwd {
            tape: Tape::new(),
            train,
            rng,
        };
        let memory = self.encode_var(&mut f, &batch.src, batch.size, batch.src_len)?;
        let logits = self.decode_var(
            &mut f,
            memory,
            &batch.src,
            batch.src_len,
            &batch.tgt_in,
            batch.size,
            batch.tgt_len,
        )?;
        let loss = f.tape.cross_entropy(logits, &batch.tgt_out)?;
        Ok((f.tape, logits, loss))
    }

    /// Mean cross-entropy over non-padding target positions, inference mode.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (tape, _, loss) = self.loss_tape(batch, false, &mut rng)?;
        Ok(tape.value(loss)[0] as f64)
    }

    /// Id pairs for whitespace-tokenized text pairs.
    pub fn encode_pairs(&self, pairs: &[(String, String)]) -> Vec<(Vec<usize>, Vec<usize>)> {
        pairs
            .iter()
            .map(|(s, t)| {
                let s: Vec<&str> = s.split_whitespace().collect();
                let t: Vec<&str> = t.split_whitespace().collect();
                (self.src_vocab.encode(&s), self.tgt_vocab.encode(&t))
            })
            .collect()
    }

    /// `(correct, counted)` teacher-forced argmax predictions over `pairs`.
    pub fn token_accuracy_counts(
        &self,
        pairs: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<(usize, usize)> {
        let v = self.tgt_vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut correct, mut total) = (0, 0);
        for chunk in pairs.chunks(32) {
            let batch = Batch::new(chunk, 0, 0);
            let (tape, logits, _) = self.loss_tape(&batch, false, &mut rng)?;
            for (row, target) in tape.value(logits).chunks(v).zip(&batch.tgt_out) {
                let Some(target) = target else { continue };
                let best = (0..v)
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .expect("non-empty vocabulary");
                correct += usize::from(best == *target);
                total += 1;
            }
        }
        Ok((correct, total))
    }

    /// Teacher-forced logits for one pair, one row per decoder position.
    pub fn teacher_forced_logits(&self, src: &[usize], tgt: &[usize]) -> Result<Vec<Vec<f32>>> {
        let batch = Batch::new(&[(src.to_vec(), tgt.to_vec())], 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (tape, logits, _) = self.loss_tape(&batch, false, &mut rng)?;
        Ok(tape
            .value(logits)
            .chunks(self.tgt_vocab.len())
            .map(<[f32]>::to_vec)
            .collect())
    }

    /// Run the encoder once. Sources longer than `max_len` are truncated.
    pub fn encode_source<S: AsRef<str>>(&self, tokens: &[S]) -> Result<EncodedSource> {
        let mut src = self.src_vocab.encode(tokens);
        src.truncate(self.config.max_len);
        if src.is_empty() {
            src.push(super::UNK);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd {
            tape: Tape::new(),
            train: false,
            rng: &mut rng,
        };
        let ts = src.len();
        let memory = self.encode_var(&mut f, &src, 1, ts)?;
        Ok(EncodedSource {
            memory: f.tape.value(memory).to_vec(),
            src,
        })
    }

    /// Log-probabilities of the token following `<bos> prefix`.
    pub fn next_logprobs(&self, enc: &EncodedSource, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd {
            tape: Tape::new(),
            train: false,
            rng: &mut rng,
        };
        let ts = enc.src.len();
        let memory = f
            .tape
            .constant(vec![1, ts, self.config.d_model], enc.memory.clone())?;
        let tgt_in: Vec<usize> = std::iter::once(BOS).chain(prefix.iter().copied()).collect();
        let tt = tgt_in.len();
        let logits = self.decode_var(&mut f, memory, &enc.src, ts, &tgt_in, 1, tt)?;
        let v = self.tgt_vocab.len();
        Ok(log_softmax_row(&f.tape.value(logits)[(tt - 1) * v..]))
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.config,
            "src_vocab": self.src_vocab.tokens(),
            "tgt_vocab": self.tgt_vocab.tokens(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(save_checkpoint(&self.params, Some(&self.meta()), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let bad = |m: &str| TranslatorError::InvalidConfig(format!("checkpoint: {m}"));
        let meta = ck.meta.ok_or_else(|| bad("missing model description"))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(bad("not a translator"));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| bad(&format!("missing {k}")))
        };
        let config: TranslatorConfig =
            serde_json::from_value(field("config")?).map_err(|e| bad(&e.to_string()))?;
        let vocab = |k: &str| -> Result<Vocab> {
            let tokens: Vec<String> =
                serde_json::from_value(field(k)?).map_err(|e| bad(&e.to_string()))?;
            Vocab::from_tokens(tokens)
        };
        let mut model = Self::new(config, vocab("src_vocab")?, vocab("tgt_vocab")?, 0)?;
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
