//! One-positive-class convolutional network trained with a negatives-to-origin
//! objective, and a multi-scale sliding-window detector built on its output
//! norm.

pub mod checkpoint;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod orchestrator;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{BBox, Image};
pub use model::{build_discnn, output_module, DisCnn};
pub use tensor::{Scalar, Tensor};
