//! Frames, preprocessing and image-quality math.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Result, VadError};

/// Side length frames are resized to before entering either network.
pub const DEFAULT_FRAME_SIZE: usize = 256;
/// PSNR reported for a perfect prediction (MSE = 0).
pub const PSNR_CAP_DB: f64 = 100.0;
/// Lower bound on the peak value used by `psnr`, for all-black ground truth.
pub const MAX_I_FLOOR: f64 = 1e-6;
pub const DEFAULT_PATCH: usize = 64;

/// An H×W×3 image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f64>,
}

impl Frame {
    /// Wraps an H×W×3 array. Values outside [0, 1] or a channel count other
    /// than three are rejected.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(VadError::Input(format!(
                "frame must be H×W×3 with H,W ≥ 1, got {h}×{w}×{c}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VadError::Input(format!(
                "frame value {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            pixels: Array3::from_elem((height, width, 3), value),
        }
    }

    /// Builds a frame by clamping arbitrary values into [0, 1].
    pub fn from_clamped(pixels: Array3<f64>) -> Result<Self> {
        Self::new(pixels.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.pixels.dim() == other.pixels.dim()
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w, _) = self.pixels.dim();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = |c| (self.pixels[[y as usize, x as usize, c]] * 255.0).round() as u8;
            image::Rgb([p(0), p(1), p(2)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| VadError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Raw 8-bit image before preprocessing: row-major, 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn from_dynamic(img: DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                RawImage {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                RawImage {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| VadError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }
}

/// Loads an image file and preprocesses it to `size`×`size`.
pub fn load_frame(path: &Path, size: usize) -> Result<Frame> {
    preprocess(&RawImage::load(path)?, size)
}

/// Loads an image file at its own resolution.
pub fn load_frame_native(path: &Path) -> Result<Frame> {
    Frame::from_clamped(raw_to_array(&RawImage::load(path)?)?)
}

/// Resizes to `size`×`size` with bilinear sampling, replicates grayscale to
/// three channels and scales 8-bit values into [0, 1].
pub fn preprocess(raw: &RawImage, size: usize) -> Result<Frame> {
    if size == 0 {
        return Err(VadError::Input("target size must be positive".into()));
    }
    Frame::from_clamped(resize_bilinear(&raw_to_array(raw)?, size, size))
}

fn raw_to_array(raw: &RawImage) -> Result<Array3<f64>> {
    if raw.width == 0 || raw.height == 0 {
        return Err(VadError::Input("empty image".into()));
    }
    if raw.channels != 1 && raw.channels != 3 {
        return Err(VadError::Input(format!(
            "unsupported channel count {}",
            raw.channels
        )));
    }
    if raw.data.len() != raw.width * raw.height * raw.channels {
        return Err(VadError::Input(format!(
            "image buffer holds {} bytes, expected {}",
            raw.data.len(),
            raw.width * raw.height * raw.channels
        )));
    }
    let mut src = Array3::<f64>::zeros((raw.height, raw.width, 3));
    for y in 0..raw.height {
        for x in 0..raw.width {
            for c in 0..3 {
                let ch = if raw.channels == 1 { 0 } else { c };
                src[[y, x, c]] = raw.data[(y * raw.width + x) * raw.channels + ch] as f64 / 255.0;
            }
        }
    }
    Ok(src)
}

/// Bilinear resampling of an H×W×C array with pixel-centre alignment and
/// border clamping. Separable: rows first, then columns.
pub fn resize_bilinear(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = src.dim();
    if h == out_h && w == out_w {
        return src.clone();
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let xt = taps(w, out_w);
    let yt = taps(h, out_h);

    let mut horiz = Array3::<f64>::zeros((h, out_w, c));
    for y in 0..h {
        for (ox, &(x0, x1, fx)) in xt.iter().enumerate() {
            for ch in 0..c {
                horiz[[y, ox, ch]] = src[[y, x0, ch]] * (1.0 - fx) + src[[y, x1, ch]] * fx;
            }
        }
    }
    let mut out = Array3::<f64>::zeros((out_h, out_w, c));
    for (oy, &(y0, y1, fy)) in yt.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                out[[oy, ox, ch]] = horiz[[y0, ox, ch]] * (1.0 - fy) + horiz[[y1, ox, ch]] * fy;
            }
        }
    }
    out
}

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_shape(b) {
        return Err(VadError::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            a.pixels.dim(),
            b.pixels.dim()
        )));
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.pixels.len() as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// PSNR given an MSE and the ground truth's peak value.
pub fn psnr_from_mse(mse: f64, max_i: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    let peak = max_i.max(MAX_I_FLOOR);
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// PSNR in dB with the peak taken from `truth`.
pub fn psnr(truth: &Frame, pred: &Frame) -> Result<f64> {
    let m = mse(truth, pred)?;
    Ok(psnr_from_mse(m, truth.max_value()))
}

/// Per-patch PSNR in dB. Trailing partial patches are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub values: Array2<f64>,
    pub patch_size: usize,
}

impl PatchMask {
    /// Grayscale rendering: `lo_db` maps to black, `hi_db` to white.
    pub fn to_gray(&self, lo_db: f64, hi_db: f64, scale: u32) -> GrayImage {
        let (rows, cols) = self.values.dim();
        let scale = scale.max(1);
        GrayImage::from_fn(cols as u32 * scale, rows as u32 * scale, |x, y| {
            let v = self.values[[(y / scale) as usize, (x / scale) as usize]];
            let t = ((v - lo_db) / (hi_db - lo_db)).clamp(0.0, 1.0);
            image::Luma([(t * 255.0).round() as u8])
        })
    }
}

pub fn patch_psnr_mask(truth: &Frame, pred: &Frame, patch: usize) -> Result<PatchMask> {
    check_shapes(truth, pred)?;
    let (h, w, _) = truth.pixels.dim();
    if patch == 0 || patch > h || patch > w {
        return Err(VadError::Input(format!(
            "patch size {patch} does not fit a {h}×{w} frame"
        )));
    }
    let max_i = truth.max_value();
    let (rows, cols) = (h / patch, w / patch);
    let mut values = Array2::<f64>::zeros((rows, cols));
    let n = (patch * patch * 3) as f64;
    for r in 0..rows {
        for c in 0..cols {
            let mut sum = 0.0;
            for y in r * patch..(r + 1) * patch {
                for x in c * patch..(c + 1) * patch {
                    for ch in 0..3 {
                        let d = truth.pixels[[y, x, ch]] - pred.pixels[[y, x, ch]];
                        sum += d * d;
                    }
                }
            }
            values[[r, c]] = psnr_from_mse(sum / n, max_i);
        }
    }
    Ok(PatchMask {
        values,
        patch_size: patch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_from(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Frame {
        Frame::new(Array3::from_shape_fn((h, w, 3), |(y, x, c)| f(y, x, c))).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = Frame::filled(4, 4, 1.0);
        let b = Frame::filled(4, 4, 0.0);
        let c = Frame::filled(4, 4, 0.9);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert!((mse(&a, &c).unwrap() - 0.01).abs() < 1e-12);
        assert!(mse(&a, &Frame::filled(4, 5, 1.0)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Frame::filled(4, 4, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!((psnr(&a, &Frame::filled(4, 4, 0.0)).unwrap()).abs() < 1e-12);
        assert!((psnr(&a, &Frame::filled(4, 4, 0.9)).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_uses_truth_peak_so_is_asymmetric() {
        let dark = Frame::filled(2, 2, 0.2);
        let bright = Frame::filled(2, 2, 0.6);
        assert_eq!(mse(&dark, &bright).unwrap(), mse(&bright, &dark).unwrap());
        let p1 = psnr(&dark, &bright).unwrap();
        let p2 = psnr(&bright, &dark).unwrap();
        assert!((p1 - p2).abs() > 1.0);
    }

    #[test]
    fn all_black_truth_is_finite() {
        let black = Frame::filled(2, 2, 0.0);
        let p = psnr(&black, &Frame::filled(2, 2, 0.5)).unwrap();
        assert!(p.is_finite());
    }

    #[test]
    fn preprocess_constant_and_identity() {
        let raw = RawImage {
            width: 512,
            height: 512,
            channels: 3,
            data: vec![128; 512 * 512 * 3],
        };
        let f = preprocess(&raw, 256).unwrap();
        assert_eq!((f.height(), f.width()), (256, 256));
        assert!(f.pixels().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-12));

        let data: Vec<u8> = (0..256 * 256 * 3).map(|i| (i * 7 % 251) as u8).collect();
        let raw = RawImage {
            width: 256,
            height: 256,
            channels: 3,
            data: data.clone(),
        };
        let f = preprocess(&raw, 256).unwrap();
        for (v, &d) in f.pixels().iter().zip(data.iter()) {
            assert_eq!(*v, d as f64 / 255.0);
        }
    }

    #[test]
    fn preprocess_rejects_bad_input() {
        let empty = RawImage {
            width: 0,
            height: 3,
            channels: 3,
            data: vec![],
        };
        assert!(preprocess(&empty, 256).is_err());
        let short = RawImage {
            width: 2,
            height: 2,
            channels: 3,
            data: vec![0; 5],
        };
        assert!(preprocess(&short, 256).is_err());
        let four = RawImage {
            width: 1,
            height: 1,
            channels: 4,
            data: vec![0; 4],
        };
        assert!(preprocess(&four, 256).is_err());
    }

    /// Direct 2D bilinear formula, evaluated per output pixel.
    fn reference_bilinear(src: &[u8], w: usize, h: usize, out: usize, x: usize, y: usize) -> f64 {
        let sx = ((x as f64 + 0.5) * w as f64 / out as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let sy = ((y as f64 + 0.5) * h as f64 / out as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let p = |xx: usize, yy: usize| src[yy * w + xx] as f64 / 255.0;
        p(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + p(x1, y0) * fx * (1.0 - fy)
            + p(x0, y1) * (1.0 - fx) * fy
            + p(x1, y1) * fx * fy
    }

    #[test]
    fn grayscale_resize_matches_reference() {
        let (w, h) = (360, 240);
        let data: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                ((x * 3 + y * 5 + (x * y) % 17) % 256) as u8
            })
            .collect();
        let raw = RawImage {
            width: w,
            height: h,
            channels: 1,
            data: data.clone(),
        };
        let f = preprocess(&raw, 256).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                let r = reference_bilinear(&data, w, h, 256, x, y);
                let px = f.pixels();
                assert!((px[[y, x, 0]] - r).abs() < 1e-12);
                assert_eq!(px[[y, x, 0]], px[[y, x, 1]]);
                assert_eq!(px[[y, x, 0]], px[[y, x, 2]]);
            }
        }
    }

    #[test]
    fn patch_mask_examples() {
        let a = frame_from(256, 256, |y, x, c| ((y * 3 + x * 5 + c) % 11) as f64 / 10.0);
        let m = patch_psnr_mask(&a, &a, 64).unwrap();
        assert_eq!(m.values.dim(), (4, 4));
        assert!(m.values.iter().all(|&v| v == PSNR_CAP_DB));

        let mut px = a.pixels().clone();
        for y in 0..64 {
            for x in 0..64 {
                px[[y, x, 0]] = 1.0 - px[[y, x, 0]];
            }
        }
        let b = Frame::new(px).unwrap();
        let m = patch_psnr_mask(&a, &b, 64).unwrap();
        let below: Vec<_> = m
            .values
            .indexed_iter()
            .filter(|(_, &v)| v < PSNR_CAP_DB)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(below, vec![(0, 0)]);

        assert!(patch_psnr_mask(&a, &a, 300).is_err());
    }

    #[test]
    fn patch_mask_matches_loop_oracle() {
        let a = frame_from(40, 56, |y, x, c| ((y * 7 + x * 3 + c * 5) % 13) as f64 / 12.0);
        let b = frame_from(40, 56, |y, x, c| ((y * 5 + x * 11 + c) % 9) as f64 / 8.0);
        let p = 16;
        let mask = patch_psnr_mask(&a, &b, p).unwrap();
        assert_eq!(mask.values.dim(), (2, 3));
        // oracle: crop each patch into its own frame and reuse the full-frame psnr
        // with the global peak
        let peak = a.max_value();
        for r in 0..2 {
            for c in 0..3 {
                let mut errs = Vec::new();
                for y in 0..p {
                    for x in 0..p {
                        for ch in 0..3 {
                            let d = a.pixels()[[r * p + y, c * p + x, ch]]
                                - b.pixels()[[r * p + y, c * p + x, ch]];
                            errs.push(d * d);
                        }
                    }
                }
                let m = errs.iter().sum::<f64>() / errs.len() as f64;
                let expected = 10.0 * (peak * peak / m).log10();
                assert!((mask.values[[r, c]] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_frame_patch_equals_psnr() {
        let a = frame_from(32, 32, |y, x, c| ((y + 2 * x + c) % 7) as f64 / 6.0);
        let b = frame_from(32, 32, |y, x, c| ((3 * y + x + c) % 5) as f64 / 4.0);
        let m = patch_psnr_mask(&a, &b, 32).unwrap();
        assert_eq!(m.values[[0, 0]], psnr(&a, &b).unwrap());
    }

    proptest! {
        #[test]
        fn psnr_decreases_with_mse(
            vals in proptest::collection::vec(0.0f64..1.0, 48),
            d1 in 0.001f64..0.3,
            extra in 0.001f64..0.3,
        ) {
            let truth = Frame::new(Array3::from_shape_vec((4, 4, 3), vals).unwrap()).unwrap();
            let peak = truth.max_value();
            prop_assume!(peak > 0.0);
            let m1 = d1 * d1;
            let m2 = (d1 + extra) * (d1 + extra);
            prop_assert!(psnr_from_mse(m1, peak) > psnr_from_mse(m2, peak) || psnr_from_mse(m1, peak) == PSNR_CAP_DB);
        }

        #[test]
        fn mse_is_symmetric(
            a in proptest::collection::vec(0.0f64..1.0, 27),
            b in proptest::collection::vec(0.0f64..1.0, 27),
        ) {
            let fa = Frame::new(Array3::from_shape_vec((3, 3, 3), a).unwrap()).unwrap();
            let fb = Frame::new(Array3::from_shape_vec((3, 3, 3), b).unwrap()).unwrap();
            prop_assert_eq!(mse(&fa, &fb).unwrap(), mse(&fb, &fa).unwrap());
        }

        #[test]
        fn preprocess_idempotent_on_target_size(data in proptest::collection::vec(any::<u8>(), 8 * 8 * 3)) {
            let raw = RawImage { width: 8, height: 8, channels: 3, data };
            let f = preprocess(&raw, 8).unwrap();
            let again = Frame::from_clamped(resize_bilinear(f.pixels(), 8, 8)).unwrap();
            for (x, y) in f.pixels().iter().zip(again.pixels().iter()) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
