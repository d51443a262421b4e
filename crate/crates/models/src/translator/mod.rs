//! Transliteration → English encoder-decoder transformer.

mod corpus;
mod decode;
mod model;
mod train;
mod vocab;

pub use corpus::{load_parallel_corpus, parse_parallel_corpus, toy_corpus, TOY_CORPUS};
pub use decode::{
    beam_decode, beam_search, decode_scores, greedy_decode, greedy_search, DecodeScore, Hypothesis,
    NextTokenModel,
};
pub use model::{Batch, EncodedSource, Translator, TranslatorConfig};
pub use train::{train_translator, EpochStats, TrainOptions};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum TranslatorError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("no decoded tokens to score")]
    NoTokens,
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error(transparent)]
    Nn(#[from] hgt_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TranslatorError>;
