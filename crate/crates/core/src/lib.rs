pub mod autograd;
pub mod error;
pub mod datagen;
pub mod events;
pub mod gradcheck;
pub mod imageio;
pub mod input_stage;
pub mod layers;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use autograd::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
