pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod data;
pub mod depth;
pub mod error;
pub mod harness;
pub mod joint;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod semantic;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;
