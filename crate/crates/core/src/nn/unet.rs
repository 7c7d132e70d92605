//! Encoder–decoder with skip concatenation, LeakyReLU hidden activations
//! and a sigmoid or linear output head.
//!
//! Level 0 runs at input resolution. Every deeper level halves the
//! resolution with a stride-2 3×3 convolution followed by a 3×3
//! convolution. Each decoder step upsamples (nearest, ×2), applies a 3×3
//! convolution, concatenates the matching encoder output and fuses with
//! another 3×3 convolution. A 1×1 convolution produces the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::ConvLayer;
use super::tensor::Tensor;
use crate::error::{Result, VadError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stem {
    /// Two stacked 3×3 convolutions.
    DoubleConv,
    /// Parallel convolutions with the given kernel sizes, concatenated.
    MultiScale(Vec<usize>),
}

/// Activation on the 1×1 head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Output in (0, 1).
    #[default]
    Sigmoid,
    /// `x + 1/2`, unbounded. Callers clamp to [0, 1] at prediction time;
    /// training sees the raw value so boundary targets never saturate it.
    Linear,
}

impl OutputActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            OutputActivation::Linear => x + 0.5,
        }
    }

    /// Derivative expressed through the output value.
    fn derivative(self, y: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => y * (1.0 - y),
            OutputActivation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub channels: Vec<usize>,
    pub stem: Stem,
    pub leaky_slope: f64,
    pub output: OutputActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    spec: UNetSpec,
    stem: Vec<ConvLayer>,
    /// (down, conv) for levels 1..L
    encoder: Vec<(ConvLayer, ConvLayer)>,
    /// (up, fuse) for levels 1..L, indexed by level - 1
    decoder: Vec<(ConvLayer, ConvLayer)>,
    head: ConvLayer,
    param_count: usize,
}

/// Saved activations from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Tensor,
    stem_mid: Option<Tensor>,
    enc_out: Vec<Tensor>,
    enc_mid: Vec<Tensor>,
    dec_upsampled: Vec<Tensor>,
    dec_up: Vec<Tensor>,
    dec_cat: Vec<Tensor>,
    dec_out: Vec<Tensor>,
    output: Tensor,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

struct LayerBuilder {
    offset: usize,
}

impl LayerBuilder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvLayer {
        let weight_offset = self.offset;
        let bias_offset = weight_offset + cout * cin * kernel * kernel;
        self.offset = bias_offset + cout;
        ConvLayer {
            name: name.to_string(),
            cin,
            cout,
            kernel,
            stride,
            weight_offset,
            bias_offset,
        }
    }
}

fn leaky(t: &mut Tensor, slope: f64) {
    for v in t.data.iter_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// Gradient through LeakyReLU given its output.
fn leaky_backward(g: &mut Tensor, out: &Tensor, slope: f64) {
    for (d, y) in g.data.iter_mut().zip(&out.data) {
        if *y <= 0.0 {
            *d *= slope;
        }
    }
}

impl UNet {
    pub fn new(spec: UNetSpec) -> Result<Self> {
        let levels = spec.channels.len();
        if levels == 0 {
            return Err(VadError::Spec("network needs at least one level".into()));
        }
        if spec.in_channels == 0 || spec.out_channels == 0 || spec.channels.contains(&0) {
            return Err(VadError::Spec("channel counts must be positive".into()));
        }
        if !(spec.leaky_slope.is_finite() && spec.leaky_slope > 0.0 && spec.leaky_slope < 1.0) {
            return Err(VadError::Spec(format!(
                "leaky slope {} must lie in (0, 1)",
                spec.leaky_slope
            )));
        }
        let c = &spec.channels;
        let mut b = LayerBuilder { offset: 0 };
        let stem = match &spec.stem {
            Stem::DoubleConv => vec![
                b.conv("enc0.conv1", spec.in_channels, c[0], 3, 1),
                b.conv("enc0.conv2", c[0], c[0], 3, 1),
            ],
            Stem::MultiScale(kernels) => {
                if kernels.is_empty() || !c[0].is_multiple_of(kernels.len()) {
                    return Err(VadError::Spec(format!(
                        "{} stem branches cannot split {} channels evenly",
                        kernels.len(),
                        c[0]
                    )));
                }
                if kernels.iter().any(|k| k % 2 == 0) {
                    return Err(VadError::Spec("stem kernels must be odd".into()));
                }
                let per = c[0] / kernels.len();
                kernels
                    .iter()
                    .map(|&k| b.conv(&format!("enc0.branch{k}"), spec.in_channels, per, k, 1))
                    .collect()
            }
        };
        let encoder = (1..levels)
            .map(|i| {
                (
                    b.conv(&format!("enc{i}.down"), c[i - 1], c[i], 3, 2),
                    b.conv(&format!("enc{i}.conv"), c[i], c[i], 3, 1),
                )
            })
            .collect();
        let decoder = (1..levels)
            .map(|i| {
                (
                    b.conv(&format!("dec{i}.up"), c[i], c[i - 1], 3, 1),
                    b.conv(&format!("dec{i}.fuse"), 2 * c[i - 1], c[i - 1], 3, 1),
                )
            })
            .collect();
        let head = b.conv("head", c[0], spec.out_channels, 1, 1);
        Ok(Self {
            spec,
            stem,
            encoder,
            decoder,
            head,
            param_count: b.offset,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn levels(&self) -> usize {
        self.spec.channels.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// All layers in parameter order.
    pub fn layers(&self) -> Vec<&ConvLayer> {
        let mut out: Vec<&ConvLayer> = self.stem.iter().collect();
        for (a, b) in &self.encoder {
            out.push(a);
            out.push(b);
        }
        for (a, b) in &self.decoder {
            out.push(a);
            out.push(b);
        }
        out.push(&self.head);
        out
    }

    /// Input height and width must be divisible by 2^(levels-1).
    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let div = 1usize << (self.levels() - 1);
        if c != self.spec.in_channels {
            return Err(VadError::Input(format!(
                "network expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h == 0 || w == 0 || !h.is_multiple_of(div) || !w.is_multiple_of(div) {
            return Err(VadError::Input(format!(
                "input {h}×{w} must be a nonzero multiple of {div} for {} levels",
                self.levels()
            )));
        }
        Ok(())
    }

    /// Seeded fan-in-scaled uniform initialization (He bound for the
    /// leaky slope), zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count];
        let gain = 2.0 / (1.0 + self.spec.leaky_slope * self.spec.leaky_slope);
        for layer in self.layers() {
            let bound = (3.0 * gain / layer.fan_in() as f64).sqrt();
            for p in &mut params[layer.weight_offset..layer.weight_offset + layer.weight_len()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Tensor {
        self.forward_traced(params, x, false).output
    }

    /// Forward pass keeping what `backward` needs. With `cut_upsampling`
    /// every decoder's upsampled branch is replaced by zeros, leaving only
    /// the skip path.
    pub fn forward_traced(&self, params: &[f64], x: &Tensor, cut_upsampling: bool) -> Trace {
        assert_eq!(params.len(), self.param_count);
        let slope = self.spec.leaky_slope;
        let act = |mut t: Tensor| {
            leaky(&mut t, slope);
            t
        };
        let levels = self.levels();

        let (stem_mid, e0) = match &self.spec.stem {
            Stem::DoubleConv => {
                let mid = act(self.stem[0].forward(params, x));
                let out = act(self.stem[1].forward(params, &mid));
                (Some(mid), out)
            }
            Stem::MultiScale(_) => {
                let branches: Vec<Tensor> = self.stem.iter().map(|l| l.forward(params, x)).collect();
                let refs: Vec<&Tensor> = branches.iter().collect();
                (None, act(Tensor::concat(&refs)))
            }
        };
        let mut enc_out = vec![e0];
        let mut enc_mid = Vec::with_capacity(levels - 1);
        for (down, conv) in &self.encoder {
            let mid = act(down.forward(params, enc_out.last().unwrap()));
            let out = act(conv.forward(params, &mid));
            enc_mid.push(mid);
            enc_out.push(out);
        }

        let n = levels - 1;
        let mut dec_upsampled = vec![Tensor::zeros(0, 0, 0); n];
        let mut dec_up = vec![Tensor::zeros(0, 0, 0); n];
        let mut dec_cat = vec![Tensor::zeros(0, 0, 0); n];
        let mut dec_out = vec![Tensor::zeros(0, 0, 0); n];
        for i in (1..levels).rev() {
            let (up, fuse) = &self.decoder[i - 1];
            let below = if i == levels - 1 {
                &enc_out[i]
            } else {
                &dec_out[i]
            };
            let upsampled = below.upsample2();
            let mut u = act(up.forward(params, &upsampled));
            if cut_upsampling {
                u.data.fill(0.0);
            }
            let cat = Tensor::concat(&[&u, &enc_out[i - 1]]);
            let out = act(fuse.forward(params, &cat));
            dec_upsampled[i - 1] = upsampled;
            dec_up[i - 1] = u;
            dec_cat[i - 1] = cat;
            dec_out[i - 1] = out;
        }
        let top = if levels > 1 { &dec_out[0] } else { &enc_out[0] };
        let mut output = self.head.forward(params, top);
        let activation = self.spec.output;
        for v in output.data.iter_mut() {
            *v = activation.apply(*v);
        }
        Trace {
            input: x.clone(),
            stem_mid,
            enc_out,
            enc_mid,
            dec_upsampled,
            dec_up,
            dec_cat,
            dec_out,
            output,
        }
    }

    /// Accumulates dLoss/dParams into `grads` given dLoss/dOutput.
    pub fn backward(&self, params: &[f64], trace: &Trace, grad_out: &Tensor, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.param_count);
        let slope = self.spec.leaky_slope;
        let levels = self.levels();

        let mut g = grad_out.clone();
        for (d, y) in g.data.iter_mut().zip(&trace.output.data) {
            *d *= self.spec.output.derivative(*y);
        }
        let top = if levels > 1 {
            &trace.dec_out[0]
        } else {
            &trace.enc_out[0]
        };
        let g_top = self.head.backward(params, top, &g, grads);

        let mut g_enc: Vec<Option<Tensor>> = vec![None; levels];
        let accumulate = |slot: &mut Option<Tensor>, t: Tensor| match slot {
            Some(acc) => acc.add_assign(&t),
            None => *slot = Some(t),
        };

        if levels == 1 {
            g_enc[0] = Some(g_top);
        } else {
            let mut g_dec = g_top;
            for i in 1..levels {
                let (up, fuse) = &self.decoder[i - 1];
                leaky_backward(&mut g_dec, &trace.dec_out[i - 1], slope);
                let g_cat = fuse.backward(params, &trace.dec_cat[i - 1], &g_dec, grads);
                let c = trace.dec_up[i - 1].c;
                let mut parts = g_cat.split(&[c, g_cat.c - c]);
                let g_skip = parts.pop().unwrap();
                let mut g_u = parts.pop().unwrap();
                accumulate(&mut g_enc[i - 1], g_skip);
                leaky_backward(&mut g_u, &trace.dec_up[i - 1], slope);
                let g_upsampled = up.backward(params, &trace.dec_upsampled[i - 1], &g_u, grads);
                let g_below = g_upsampled.upsample2_backward();
                if i == levels - 1 {
                    accumulate(&mut g_enc[i], g_below);
                } else {
                    g_dec = g_below;
                }
            }
        }

        for i in (1..levels).rev() {
            let (down, conv) = &self.encoder[i - 1];
            let mut g = g_enc[i].take().expect("gradient reaches every level");
            leaky_backward(&mut g, &trace.enc_out[i], slope);
            let mut g_mid = conv.backward(params, &trace.enc_mid[i - 1], &g, grads);
            leaky_backward(&mut g_mid, &trace.enc_mid[i - 1], slope);
            let g_prev = down.backward(params, &trace.enc_out[i - 1], &g_mid, grads);
            accumulate(&mut g_enc[i - 1], g_prev);
        }

        let mut g0 = g_enc[0].take().expect("gradient reaches level 0");
        leaky_backward(&mut g0, &trace.enc_out[0], slope);
        match &self.spec.stem {
            Stem::DoubleConv => {
                let mid = trace.stem_mid.as_ref().expect("double-conv stem saves its middle");
                let mut g_mid = self.stem[1].backward(params, mid, &g0, grads);
                leaky_backward(&mut g_mid, mid, slope);
                self.stem[0].backward(params, &trace.input, &g_mid, grads);
            }
            Stem::MultiScale(_) => {
                let sizes: Vec<usize> = self.stem.iter().map(|l| l.cout).collect();
                for (layer, g_branch) in self.stem.iter().zip(g0.split(&sizes)) {
                    layer.backward(params, &trace.input, &g_branch, grads);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(stem: Stem) -> UNet {
        tiny_with(stem, OutputActivation::Sigmoid)
    }

    fn tiny_with(stem: Stem, output: OutputActivation) -> UNet {
        UNet::new(UNetSpec {
            in_channels: 3,
            out_channels: 2,
            channels: vec![4, 6],
            stem,
            leaky_slope: 0.2,
            output,
        })
        .unwrap()
    }

    fn input(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| ((i * 29 % 31) as f64) / 31.0).collect())
    }

    fn check_gradients(net: &UNet) {
        let params = net.init_params(3);
        let x = input(3, 8, 8);
        let target: Vec<f64> = (0..2 * 64).map(|i| ((i * 5 % 7) as f64) / 7.0).collect();
        let loss = |p: &[f64]| -> f64 {
            let y = net.forward(p, &x);
            y.data.iter().zip(&target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
        };
        let trace = net.forward_traced(&params, &x, false);
        let g_out = Tensor::from_vec(
            2,
            8,
            8,
            trace.output().data.iter().zip(&target).map(|(a, b)| a - b).collect(),
        );
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&params, &trace, &g_out, &mut grads);
        let eps = 1e-6;
        for i in (0..params.len()).step_by(7) {
            let mut pp = params.clone();
            pp[i] += eps;
            let mut pm = params.clone();
            pm[i] -= eps;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
            let denom = fd.abs().max(grads[i].abs()).max(1e-8);
            assert!(
                (fd - grads[i]).abs() / denom < 1e-4 || (fd - grads[i]).abs() < 1e-9,
                "param {i}: fd {fd} analytic {}",
                grads[i]
            );
        }
    }

    #[test]
    fn gradients_double_conv() {
        check_gradients(&tiny(Stem::DoubleConv));
    }

    #[test]
    fn gradients_multiscale() {
        check_gradients(&tiny(Stem::MultiScale(vec![1, 3])));
    }

    #[test]
    fn gradients_linear_head() {
        check_gradients(&tiny_with(Stem::MultiScale(vec![1, 3]), OutputActivation::Linear));
    }

    #[test]
    fn single_level_network_works() {
        let net = UNet::new(UNetSpec {
            in_channels: 3,
            out_channels: 3,
            channels: vec![4],
            stem: Stem::DoubleConv,
            leaky_slope: 0.2,
            output: OutputActivation::Sigmoid,
        })
        .unwrap();
        let p = net.init_params(0);
        let y = net.forward(&p, &input(3, 5, 5));
        assert_eq!((y.c, y.h, y.w), (3, 5, 5));
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = UNetSpec {
            in_channels: 3,
            out_channels: 3,
            channels: vec![6],
            stem: Stem::MultiScale(vec![1, 3, 5, 7]),
            leaky_slope: 0.2,
            output: OutputActivation::Sigmoid,
        };
        assert!(UNet::new(bad).is_err());
    }
}
