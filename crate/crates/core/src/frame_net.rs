//! Frame network: the current frame concatenated with a flow image in,
//! the next frame out. Also holds the dense and margin losses.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::flow::FlowRgb;
use crate::media::Frame;
use crate::model::{Architecture, Weights};
use crate::motion::channel_schedule;
use crate::nn::{OutputActivation, Stem, Tensor, UNetSpec};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_LAMBDA: f64 = 0.004;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameNetSpec {
    pub levels: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Frame RGB followed by flow RGB.
    pub input_channels: usize,
}

impl Default for FrameNetSpec {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 64,
            leaky_slope: 0.2,
            input_channels: 6,
        }
    }
}

impl FrameNetSpec {
    pub fn unet_spec(&self) -> Result<UNetSpec> {
        if self.input_channels != 6 {
            return Err(VadError::Spec(format!(
                "frame network takes 6 input channels (frame + flow), got {}",
                self.input_channels
            )));
        }
        if self.levels == 0 || self.base_channels == 0 {
            return Err(VadError::Spec("levels and base channels must be positive".into()));
        }
        Ok(UNetSpec {
            in_channels: 6,
            out_channels: 3,
            channels: channel_schedule(self.levels, self.base_channels),
            stem: Stem::DoubleConv,
            leaky_slope: self.leaky_slope,
            output: OutputActivation::Sigmoid,
        })
    }
}

pub fn build_frame_net(spec: &FrameNetSpec, seed: u64) -> Result<Weights> {
    Weights::init(Architecture::Frame(spec.clone()), seed)
}

/// Network input: frame channels then flow channels.
pub fn frame_input(frame: &Frame, flow: &FlowRgb) -> Result<Tensor> {
    if frame.height() != flow.height() || frame.width() != flow.width() {
        return Err(VadError::Input(format!(
            "frame {}×{} and flow {}×{} differ in size",
            frame.height(),
            frame.width(),
            flow.height(),
            flow.width()
        )));
    }
    let a = Tensor::from_hwc(frame.pixels());
    let b = Tensor::from_hwc(flow.pixels());
    Ok(Tensor::concat(&[&a, &b]))
}

pub fn predict_frame(w: &Weights, frame: &Frame, flow: &FlowRgb) -> Result<Frame> {
    if w.frame_spec().is_none() {
        return Err(VadError::Checkpoint(format!(
            "expected frame network weights, got {}",
            w.architecture().name()
        )));
    }
    let y = w.forward(&frame_input(frame, flow)?)?;
    Frame::from_clamped(y.to_hwc())
}

/// How `‖·‖₂` in the dense and margin losses is reduced over elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Reduction {
    /// sqrt(mean d²)
    #[default]
    Rms,
    /// sqrt(Σ d²)
    Frobenius,
    /// mean d²
    MeanSquare,
}

impl L2Reduction {
    /// Distance between `a` and `b` and its gradient w.r.t. `a`.
    fn distance_with_grad(self, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
        let n = a.len() as f64;
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let ss: f64 = diff.iter().map(|d| d * d).sum();
        match self {
            L2Reduction::Rms => {
                let r = (ss / n).sqrt();
                let scale = if r > 0.0 { 1.0 / (n * r) } else { 0.0 };
                (r, diff.iter().map(|d| d * scale).collect())
            }
            L2Reduction::Frobenius => {
                let r = ss.sqrt();
                let scale = if r > 0.0 { 1.0 / r } else { 0.0 };
                (r, diff.iter().map(|d| d * scale).collect())
            }
            L2Reduction::MeanSquare => (ss / n, diff.iter().map(|d| 2.0 * d / n).collect()),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        self.distance_with_grad(a, b).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLossConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub use_margin: bool,
    pub reduction: L2Reduction,
}

impl Default for FrameLossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            use_margin: true,
            reduction: L2Reduction::Rms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameLoss {
    pub dense: f64,
    pub margin: f64,
    pub total: f64,
}

fn flat(f: &Frame) -> &[f64] {
    f.pixels().as_slice().expect("frames use standard layout")
}

fn check3(a: &Frame, b: &Frame, c: &Frame) -> Result<()> {
    if !a.same_shape(b) || !a.same_shape(c) {
        return Err(VadError::Input("frames differ in shape".into()));
    }
    Ok(())
}

pub fn loss_dense(truth: &Frame, pred: &Frame) -> Result<f64> {
    if !truth.same_shape(pred) {
        return Err(VadError::Input("frames differ in shape".into()));
    }
    Ok(L2Reduction::Rms.distance(flat(pred), flat(truth)))
}

/// `max(0, ‖next − pred‖ − ‖current − pred‖ + α)`.
pub fn loss_margin(truth_next: &Frame, pred: &Frame, current: &Frame, alpha: f64) -> Result<f64> {
    let cfg = FrameLossConfig {
        alpha,
        ..Default::default()
    };
    Ok(frame_loss(truth_next, pred, current, &cfg)?.margin)
}

/// `dense + λ·margin`.
pub fn loss_frame(truth_next: &Frame, pred: &Frame, current: &Frame, alpha: f64, lambda: f64) -> Result<f64> {
    let cfg = FrameLossConfig {
        alpha,
        lambda,
        ..Default::default()
    };
    Ok(frame_loss(truth_next, pred, current, &cfg)?.total)
}

pub fn frame_loss(truth_next: &Frame, pred: &Frame, current: &Frame, cfg: &FrameLossConfig) -> Result<FrameLoss> {
    check3(truth_next, pred, current)?;
    Ok(frame_loss_with_grad(flat(truth_next), flat(pred), flat(current), cfg)?.0)
}

/// Loss parts and the gradient of the total w.r.t. the prediction. The
/// hinge's subgradient at exactly zero margin is taken as zero.
pub fn frame_loss_with_grad(
    truth_next: &[f64],
    pred: &[f64],
    current: &[f64],
    cfg: &FrameLossConfig,
) -> Result<(FrameLoss, Vec<f64>)> {
    if truth_next.len() != pred.len() || current.len() != pred.len() {
        return Err(VadError::Input("frames differ in shape".into()));
    }
    if !(cfg.alpha >= 0.0) {
        return Err(VadError::Input(format!("alpha {} must be nonnegative", cfg.alpha)));
    }
    let (dense, g_dense) = cfg.reduction.distance_with_grad(pred, truth_next);
    let (to_current, g_current) = cfg.reduction.distance_with_grad(pred, current);
    let hinge = dense - to_current + cfg.alpha;
    let margin = hinge.max(0.0);
    let mut grad = g_dense.clone();
    let mut total = dense;
    if cfg.use_margin {
        total += cfg.lambda * margin;
        if hinge > 0.0 {
            for ((g, a), b) in grad.iter_mut().zip(&g_dense).zip(&g_current) {
                *g += cfg.lambda * (a - b);
            }
        }
    }
    Ok((FrameLoss { dense, margin, total }, grad))
}

/// Per-sample frame loss and parameter gradient.
pub fn frame_loss_and_grad(
    w: &Weights,
    current: &Frame,
    flow: &FlowRgb,
    truth_next: &Frame,
    cfg: &FrameLossConfig,
) -> Result<(FrameLoss, Vec<f64>)> {
    let x = frame_input(current, flow)?;
    w.net().check_input(x.c, x.h, x.w)?;
    let trace = w.net().forward_traced(w.params(), &x, false);
    let out = trace.output();
    let truth = Tensor::from_hwc(truth_next.pixels());
    let cur = Tensor::from_hwc(current.pixels());
    let (loss, g) = frame_loss_with_grad(&truth.data, &out.data, &cur.data, cfg)?;
    let g = Tensor::from_vec(out.c, out.h, out.w, g);
    let mut grads = vec![0.0; w.param_count()];
    w.net().backward(w.params(), &trace, &g, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn px(v: f64) -> Frame {
        Frame::filled(1, 1, v)
    }

    fn pattern(h: usize, w: usize, k: usize) -> Frame {
        Frame::new(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            ((y * (3 + k) + x * (5 + 2 * k) + c * 7 + k) % 17) as f64 / 16.0
        }))
        .unwrap()
    }

    #[test]
    fn dense_examples() {
        let a = Frame::filled(4, 4, 0.5);
        assert_eq!(loss_dense(&a, &a).unwrap(), 0.0);
        assert!((loss_dense(&a, &Frame::filled(4, 4, 0.6)).unwrap() - 0.1).abs() < 1e-12);
        assert!(loss_dense(&a, &Frame::filled(3, 4, 0.6)).is_err());
    }

    #[test]
    fn dense_matches_loop() {
        let a = pattern(6, 5, 1);
        let b = pattern(6, 5, 2);
        let mut s = 0.0;
        for y in 0..6 {
            for x in 0..5 {
                for c in 0..3 {
                    let d = a.pixels()[[y, x, c]] - b.pixels()[[y, x, c]];
                    s += d * d;
                }
            }
        }
        assert!((loss_dense(&a, &b).unwrap() - (s / 90.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn margin_single_pixel_arithmetic() {
        let m = loss_margin(&px(0.8), &px(0.7), &px(0.5), 0.2).unwrap();
        assert!((m - 0.1).abs() < 1e-12);
    }

    #[test]
    fn margin_inactive_for_exact_prediction() {
        let m = loss_margin(&px(0.8), &px(0.8), &px(0.3), 0.2).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn copying_input_costs_distance_plus_alpha() {
        let next = pattern(4, 4, 1);
        let cur = pattern(4, 4, 3);
        let d = loss_dense(&next, &cur).unwrap();
        let m = loss_margin(&next, &cur, &cur, 0.2).unwrap();
        assert_eq!(m, d + 0.2);
    }

    #[test]
    fn frame_loss_composition() {
        let a = Frame::filled(2, 2, 0.5);
        assert_eq!(loss_frame(&a, &a, &Frame::filled(2, 2, 0.0), 0.2, 0.004).unwrap(), 0.0);
        let next = px(0.8);
        let pred = px(0.7);
        let cur = px(0.5);
        // dense 0.1, margin 0.1
        let l = loss_frame(&next, &pred, &cur, 0.2, 0.004).unwrap();
        assert!((l - 0.1004).abs() < 1e-12);
        let (n, p, c) = (pattern(5, 5, 1), pattern(5, 5, 2), pattern(5, 5, 4));
        let expected = loss_dense(&n, &p).unwrap() + 0.004 * loss_margin(&n, &p, &c, 0.2).unwrap();
        assert!((loss_frame(&n, &p, &c, 0.2, 0.004).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn margin_off_is_dense_only() {
        let (n, p, c) = (pattern(5, 5, 1), pattern(5, 5, 2), pattern(5, 5, 4));
        let cfg = FrameLossConfig {
            use_margin: false,
            ..Default::default()
        };
        let l = frame_loss(&n, &p, &c, &cfg).unwrap();
        assert_eq!(l.total, loss_dense(&n, &p).unwrap());
    }

    #[test]
    fn kink_subgradient_is_zero() {
        // dense 0.25, distance to current 0.5, alpha 0.25: hinge exactly 0
        let next = [0.5];
        let pred = [0.75];
        let cur = [0.25];
        let cfg = FrameLossConfig {
            alpha: 0.25,
            lambda: 1.0,
            ..Default::default()
        };
        let (l, g) = frame_loss_with_grad(&next, &pred, &cur, &cfg).unwrap();
        assert_eq!(l.margin, 0.0);
        // gradient equals the dense part alone
        let (_, gd) = frame_loss_with_grad(
            &next,
            &pred,
            &cur,
            &FrameLossConfig {
                use_margin: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(g, gd);
    }

    #[test]
    fn reductions() {
        let a = [0.0, 0.0, 0.0, 0.0];
        let b = [0.5, 0.5, 0.5, 0.5];
        assert!((L2Reduction::Rms.distance(&a, &b) - 0.5).abs() < 1e-12);
        assert!((L2Reduction::Frobenius.distance(&a, &b) - 1.0).abs() < 1e-12);
        assert!((L2Reduction::MeanSquare.distance(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let next: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let cur: Vec<f64> = (0..12).map(|i| (i as f64 * 0.91).cos() * 0.5 + 0.5).collect();
        let pred: Vec<f64> = (0..12).map(|i| (i as f64 * 0.53).sin() * 0.4 + 0.5).collect();
        for reduction in [L2Reduction::Rms, L2Reduction::Frobenius, L2Reduction::MeanSquare] {
            let cfg = FrameLossConfig {
                alpha: 4.0,
                lambda: 0.7,
                use_margin: true,
                reduction,
            };
            let (l, g) = frame_loss_with_grad(&next, &pred, &cur, &cfg).unwrap();
            assert!(l.margin > 0.0);
            for i in 0..12 {
                let eps = 1e-6;
                let mut p = pred.clone();
                p[i] += eps;
                let up = frame_loss_with_grad(&next, &p, &cur, &cfg).unwrap().0.total;
                p[i] -= 2.0 * eps;
                let dn = frame_loss_with_grad(&next, &p, &cur, &cfg).unwrap().0.total;
                assert!(((up - dn) / (2.0 * eps) - g[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn frame_net_contract() {
        let spec = FrameNetSpec {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        };
        let w = build_frame_net(&spec, 0).unwrap();
        let f = pattern(8, 8, 1);
        let flow = FlowRgb::blank(8, 8);
        let out = predict_frame(&w, &f, &flow).unwrap();
        assert_eq!(out.pixels().dim(), (8, 8, 3));
        assert_eq!(out, predict_frame(&w, &f, &flow).unwrap());
        assert!(predict_frame(&w, &f, &FlowRgb::blank(4, 8)).is_err());
        let bad = FrameNetSpec {
            input_channels: 3,
            ..spec
        };
        assert!(build_frame_net(&bad, 0).is_err());
    }

    proptest! {
        #[test]
        fn anchor_asymmetry(
            a in proptest::collection::vec(0.0f64..1.0, 12),
            b in proptest::collection::vec(0.0f64..1.0, 12),
            c in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let cfg = FrameLossConfig { alpha: 0.0, ..Default::default() };
            let fwd = frame_loss_with_grad(&a, &b, &c, &cfg).unwrap().0.margin;
            let swapped = frame_loss_with_grad(&c, &b, &a, &cfg).unwrap().0.margin;
            let da = L2Reduction::Rms.distance(&b, &a);
            let dc = L2Reduction::Rms.distance(&b, &c);
            prop_assume!((da - dc).abs() > 1e-9);
            // exactly one ordering activates the hinge when alpha is zero
            prop_assert!(fwd != swapped);
        }

        #[test]
        fn copying_always_penalized(
            a in proptest::collection::vec(0.0f64..1.0, 12),
            c in proptest::collection::vec(0.0f64..1.0, 12),
            alpha in 0.0f64..1.0,
        ) {
            let cfg = FrameLossConfig { alpha, ..Default::default() };
            let m = frame_loss_with_grad(&a, &c, &c, &cfg).unwrap().0.margin;
            prop_assert_eq!(m, L2Reduction::Rms.distance(&c, &a) + alpha);
        }
    }
}
