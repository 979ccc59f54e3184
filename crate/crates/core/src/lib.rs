pub mod audio;
pub mod augment;
pub mod dsp;
pub mod error;
pub mod estimate;
pub mod gcc;
pub mod harness;
pub mod losses;
pub mod mat;
pub mod nn;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use mat::Mat;
