//! Small dense-tensor library with reverse-mode autodiff.
//!
//! Everything is CPU-side, row-major and deterministic: the same seed and
//! inputs produce bit-identical results regardless of worker count. Scalars
//! are generic over [`Scalar`] (`f32` or `f64`) so networks can train in
//! single precision while gradient checks run in double.

pub mod error;
pub mod gradcheck;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use rand::RngCore;
pub use rng::SplitRng;
pub use scalar::{fl, wide, Dtype, Scalar};
pub use tape::{Mode, Tape};
pub use tensor::{Tensor, TensorId};
