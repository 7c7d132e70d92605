use ndarray::Array3;

use super::FlowField;
use crate::error::{Result, VadError};
use crate::media::Frame;

/// Backward warp: `out(p) = frame(p + flow(p))`, bilinear, with sample
/// coordinates clamped to the border.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    let (h, w) = (frame.height(), frame.width());
    if flow.height() != h || flow.width() != w {
        return Err(VadError::Input(format!(
            "flow {}×{} does not match frame {h}×{w}",
            flow.height(),
            flow.width()
        )));
    }
    let src = frame.pixels();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            let sx = (x as f64 + u as f64).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + v as f64).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..3 {
                out[[y, x, c]] = src[[y0, x0, c]] * (1.0 - fx) * (1.0 - fy)
                    + src[[y0, x1, c]] * fx * (1.0 - fy)
                    + src[[y1, x0, c]] * (1.0 - fx) * fy
                    + src[[y1, x1, c]] * fx * fy;
            }
        }
    }
    Frame::from_clamped(out)
}
