//! Video anomaly detection by flow-guided future frame prediction.
//!
//! A motion network predicts the optical flow expected under normal
//! behaviour from a single frame. A frame network consumes the frame and
//! that flow (as a color-wheel image) and predicts the next frame. Frames
//! that are predicted poorly, measured by PSNR normalized per video, are
//! scored as anomalous.

pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod flow;
pub mod frame_net;
pub mod media;
pub mod model;
pub mod motion;
pub mod nn;
pub mod scoring;
pub mod training;

pub use error::{Result, VadError};
pub use flow::{FlowField, FlowRgb};
pub use frame_net::FrameNetSpec;
pub use media::Frame;
pub use model::{Architecture, Pipeline, Weights};
pub use motion::MotionNetSpec;
