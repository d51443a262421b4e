//! Non-learned building blocks of the hieroglyph translation pipeline:
//! raster I/O and preprocessing, plate layout analysis, the Gardiner sign
//! list, evaluation metrics and a synthetic plate renderer.

pub mod gardiner;
pub mod imaging;
pub mod layout;
pub mod metrics;
pub mod synth;
