//! Minimal convolutional network engine: tensors, im2col convolution,
//! a U-net with hand-written backward pass, and Adam.

mod adam;
mod conv;
mod tensor;
mod unet;

pub use adam::{Adam, AdamParams};
pub use conv::ConvLayer;
pub use tensor::Tensor;
pub use unet::{OutputActivation, Stem, Trace, UNet, UNetSpec};
