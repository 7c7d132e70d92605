//! 2D convolution via im2col + GEMM, zero padding `k / 2`.

use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Offset of the weight block (cout × cin·k·k) in the flat parameter vector.
    pub weight_offset: usize,
    /// Offset of the bias (cout) in the flat parameter vector.
    pub bias_offset: usize,
}

impl ConvLayer {
    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = oh * ow;
        let mut cols = vec![0.0; self.fan_in() * n];
        for c in 0..x.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src_row = &x.data[(c * x.h + iy as usize) * x.w..][..x.w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < x.w as isize {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Tensor {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = oh * ow;
        let mut dx = Tensor::zeros(self.cin, h, w);
        for c in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dx.data[(c * h + iy as usize) * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "layer {} expects {} channels", self.name, self.cin);
        let (oh, ow) = self.out_size(x.h, x.w);
        let n = oh * ow;
        let kk = self.fan_in();
        let mut y = Tensor::zeros(self.cout, oh, ow);
        let bias = &params[self.bias_offset..self.bias_offset + self.cout];
        for (o, b) in bias.iter().enumerate() {
            y.data[o * n..(o + 1) * n].fill(*b);
        }
        let weights = &params[self.weight_offset..self.weight_offset + self.weight_len()];
        let owned;
        let cols: &[f64] = if self.is_pointwise() {
            &x.data
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        unsafe {
            matrixmultiply::dgemm(
                self.cout,
                kk,
                n,
                1.0,
                weights.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                1.0,
                y.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient. `x` is the forward input and `dy` the output gradient.
    pub fn backward(&self, params: &[f64], x: &Tensor, dy: &Tensor, grads: &mut [f64]) -> Tensor {
        let (oh, ow) = (dy.h, dy.w);
        let n = oh * ow;
        let kk = self.fan_in();
        let owned;
        let cols: &[f64] = if self.is_pointwise() {
            &x.data
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        for o in 0..self.cout {
            grads[self.bias_offset + o] += dy.data[o * n..(o + 1) * n].iter().sum::<f64>();
        }
        let weights = &params[self.weight_offset..self.weight_offset + self.weight_len()];
        let dw = &mut grads[self.weight_offset..self.weight_offset + self.weight_len()];
        let mut dcols = vec![0.0; kk * n];
        // SAFETY: all pointers cover the stated m×k / k×n / m×n extents with the given strides.
        unsafe {
            // dW += dY · colsᵀ
            matrixmultiply::dgemm(
                self.cout,
                n,
                kk,
                1.0,
                dy.data.as_ptr(),
                n as isize,
                1,
                cols.as_ptr(),
                1,
                n as isize,
                1.0,
                dw.as_mut_ptr(),
                kk as isize,
                1,
            );
            // dcols = Wᵀ · dY
            matrixmultiply::dgemm(
                kk,
                self.cout,
                n,
                1.0,
                weights.as_ptr(),
                1,
                kk as isize,
                dy.data.as_ptr(),
                n as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if self.is_pointwise() {
            Tensor::from_vec(self.cin, x.h, x.w, dcols)
        } else {
            self.col2im(&dcols, x.h, x.w, oh, ow)
        }
    }
}
