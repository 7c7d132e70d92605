//! Optical flow: representation, `.flo` IO, color-wheel encoding, a
//! block-matching estimator and backward warping.

mod block_match;
mod color;
mod flo;
mod warp;

use ndarray::Array3;

use crate::error::{Result, VadError};
use crate::media::{resize_bilinear, Frame};

pub use block_match::{block_match_flow, BlockMatchParams};
pub use color::{decode_hue_angle, flow_to_rgb, wheel_color, COLORWHEEL_LEN};
pub use flo::{read_flo, read_flo_file, write_flo, write_flo_file, FLO_MAGIC};
pub use warp::warp;

/// Per-pixel (u, v) displacement, u along x, v along y.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    uv: Array3<f32>,
}

impl FlowField {
    pub fn new(uv: Array3<f32>) -> Result<Self> {
        let (h, w, c) = uv.dim();
        if c != 2 || h == 0 || w == 0 {
            return Err(VadError::Input(format!(
                "flow must be H×W×2 with H,W ≥ 1, got {h}×{w}×{c}"
            )));
        }
        if uv.iter().any(|v| !v.is_finite()) {
            return Err(VadError::Input("flow contains non-finite values".into()));
        }
        Ok(Self { uv })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            uv: Array3::zeros((height, width, 2)),
        }
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        let mut uv = Array3::zeros((height, width, 2));
        uv.slice_mut(ndarray::s![.., .., 0]).fill(u);
        uv.slice_mut(ndarray::s![.., .., 1]).fill(v);
        Self { uv }
    }

    pub fn height(&self) -> usize {
        self.uv.dim().0
    }

    pub fn width(&self) -> usize {
        self.uv.dim().1
    }

    pub fn uv(&self) -> &Array3<f32> {
        &self.uv
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        (self.uv[[y, x, 0]], self.uv[[y, x, 1]])
    }

    pub fn max_magnitude(&self) -> f64 {
        self.uv
            .as_slice()
            .expect("standard layout")
            .chunks_exact(2)
            .map(|p| (p[0] as f64).hypot(p[1] as f64))
            .fold(0.0, f64::max)
    }
}

/// Color-wheel encoding of a flow field, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRgb {
    pixels: Array3<f64>,
    max_magnitude: f64,
}

impl FlowRgb {
    pub fn new(pixels: Array3<f64>, max_magnitude: f64) -> Result<Self> {
        if pixels.dim().2 != 3 {
            return Err(VadError::Input("flow RGB must have 3 channels".into()));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(VadError::Input("flow RGB values outside [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            max_magnitude,
        })
    }

    /// The all-zero substitute fed to the frame network when flow guidance
    /// is disabled. Not the encoding of zero flow (which is white).
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            pixels: Array3::zeros((height, width, 3)),
            max_magnitude: 0.0,
        }
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Bilinear resize of the encoded image (flow is encoded first, then resized).
    pub fn resized(&self, size: usize) -> FlowRgb {
        FlowRgb {
            pixels: resize_bilinear(&self.pixels, size, size).mapv(|v| v.clamp(0.0, 1.0)),
            max_magnitude: self.max_magnitude,
        }
    }

    pub fn as_frame(&self) -> Frame {
        Frame::new(self.pixels.clone()).expect("flow RGB is a valid frame")
    }
}
