//! Silent-speech recognition from grayscale vocal-tract video.
//!
//! The recognition pipeline is a spatiotemporal convolution front end
//! feeding two bidirectional GRU layers, a linear projection and a softmax
//! over characters. It is trained with the CTC loss and decoded with a
//! prefix beam search fused with a character n-gram language model.
//!
//! The [`vtgeom`] module is independent of the recognizer: it measures how
//! vocal-tract boundary geometry under an emotion deviates from a neutral
//! production of the same word.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases at the crate root pin the two common widths.

pub mod colormap;
pub mod ctc;
pub mod dataio;
pub mod decoder;
pub mod error;
pub mod layers;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod saliency;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod util;
pub mod vocab;
pub mod vtgeom;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
pub type BoundaryFrame64 = vtgeom::BoundaryFrame<f64>;
pub type Production64 = vtgeom::Production<f64>;
