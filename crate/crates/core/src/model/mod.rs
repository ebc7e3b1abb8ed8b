//! The dual-source transformer: configuration, parameter storage with
//! aliasing (tied embeddings, shared encoders), forward passes, and the
//! binary model container.

mod config;
mod io;
mod params;
mod transformer;

pub use config::{ModelConfig, Source};
pub use io::{load_params, save_params};
pub use params::{expected_parameter_count, ParameterSet};
pub use transformer::{
    decode_forward, decode_step, encode, CrossMemory, DecoderCache, EncoderOutput,
};

use ape_tensor::Scalar;

use crate::error::Result;

/// Initialize a fresh model for a config.
pub fn build_model<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParameterSet<F>> {
    ParameterSet::build(config, seed)
}
