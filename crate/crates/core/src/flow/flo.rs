//! Middlebury `.flo` files: f32 magic 202021.25, i32 width, i32 height,
//! then row-major interleaved (u, v) f32 pairs, all little-endian.

use std::path::Path;

use ndarray::Array3;

use super::FlowField;
use crate::error::{Result, VadError};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(VadError::format(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(VadError::format(0, format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 {
        return Err(VadError::format(4, format!("nonpositive width {width}")));
    }
    if height <= 0 {
        return Err(VadError::format(8, format!("nonpositive height {height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| VadError::format(4, "dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(VadError::format(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(VadError::format(expected, "trailing bytes after payload"));
    }
    let mut uv = Array3::<f32>::zeros((h, w, 2));
    for (i, v) in uv.iter_mut().enumerate() {
        let off = HEADER_LEN + 4 * i;
        let x = f32::from_le_bytes(word(off));
        if !x.is_finite() {
            return Err(VadError::format(off, "non-finite flow value"));
        }
        *v = x;
    }
    FlowField::new(uv)
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w, _) = flow.uv.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for v in flow.uv.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_flo_file(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| VadError::io(path, e))?;
    read_flo(&bytes).map_err(|e| match e {
        VadError::Format { offset, message } => VadError::Format {
            offset,
            message: format!("{message} in {}", path.display()),
        },
        other => other,
    })
}

pub fn write_flo_file(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, write_flo(flow)).map_err(|e| VadError::io(path, e))
}
