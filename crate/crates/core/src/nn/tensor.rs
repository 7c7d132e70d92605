use ndarray::Array3;

/// Channel-major (C×H×W) activation buffer for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// From an H×W×C array.
    pub fn from_hwc(arr: &Array3<f64>) -> Self {
        let (h, w, c) = arr.dim();
        let mut t = Tensor::zeros(c, h, w);
        for ((y, x, ch), v) in arr.indexed_iter() {
            t.data[ch * h * w + y * w + x] = *v;
        }
        t
    }

    pub fn to_hwc(&self) -> Array3<f64> {
        Array3::from_shape_fn((self.h, self.w, self.c), |(y, x, ch)| {
            self.data[ch * self.h * self.w + y * self.w + x]
        })
    }

    /// Stacks channels of several tensors with equal spatial size.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            assert_eq!((p.h, p.w), (h, w));
            data.extend_from_slice(&p.data);
        }
        let c = parts.iter().map(|p| p.c).sum();
        Tensor { c, h, w, data }
    }

    /// Splits channels into chunks of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Vec<Tensor> {
        let plane = self.plane();
        let mut at = 0;
        sizes
            .iter()
            .map(|&c| {
                let t = Tensor::from_vec(c, self.h, self.w, self.data[at..at + c * plane].to_vec());
                at += c * plane;
                t
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn upsample2(&self) -> Tensor {
        let (h2, w2) = (self.h * 2, self.w * 2);
        let mut out = Tensor::zeros(self.c, h2, w2);
        for ch in 0..self.c {
            for y in 0..h2 {
                for x in 0..w2 {
                    out.data[(ch * h2 + y) * w2 + x] = self.data[(ch * self.h + y / 2) * self.w + x / 2];
                }
            }
        }
        out
    }

    /// Adjoint of `upsample2`: sums each 2×2 block.
    pub fn upsample2_backward(&self) -> Tensor {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Tensor::zeros(self.c, h, w);
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.data[(ch * h + y / 2) * w + x / 2] += self.data[(ch * self.h + y) * self.w + x];
                }
            }
        }
        out
    }
}
