//! Learned components: the Gardiner-class glyph classifier (with a HOG +
//! k-NN baseline) and the transliteration → English translator.

pub mod glyphclass;
pub mod translator;
