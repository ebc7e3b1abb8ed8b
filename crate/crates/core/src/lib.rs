//! Core library of the automatic post-editing toolkit: corpus preparation,
//! n-gram data selection, the dual-source transformer, training, beam/
//! ensemble decoding, and the TER/BLEU metrics.

pub mod dataprep;
pub mod dataselect;
pub mod decoding;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod text;
pub mod training;

pub use error::{CoreError, Result};
