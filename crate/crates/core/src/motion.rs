//! Motion network: a single frame in, the flow expected under normal
//! behaviour out, as a color-wheel image.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::flow::FlowRgb;
use crate::media::Frame;
use crate::model::{Architecture, Weights};
use crate::nn::{OutputActivation, Stem, Tensor, UNetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionNetSpec {
    pub levels: usize,
    pub base_channels: usize,
    /// Kernel sizes of the parallel convolutions in the first block.
    pub feature_extraction_kernels: Vec<usize>,
    pub leaky_slope: f64,
    pub skip_connections: bool,
    /// Predictions are clamped to [0, 1] whatever the head.
    pub output_activation: OutputActivation,
}

impl Default for MotionNetSpec {
    fn default() -> Self {
        Self {
            levels: 5,
            base_channels: 64,
            feature_extraction_kernels: vec![1, 3, 5, 7],
            leaky_slope: 0.2,
            skip_connections: true,
            output_activation: OutputActivation::Linear,
        }
    }
}

/// `base·2^i`, capped at `8·base`.
pub(crate) fn channel_schedule(levels: usize, base: usize) -> Vec<usize> {
    (0..levels).map(|i| base << i.min(3)).collect()
}

impl MotionNetSpec {
    pub fn validate(&self) -> Result<()> {
        let k = &self.feature_extraction_kernels;
        if k.len() != 4 {
            return Err(VadError::Spec(format!(
                "feature extraction block needs exactly 4 kernels, got {}",
                k.len()
            )));
        }
        let mut sorted = k.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k.len() {
            return Err(VadError::Spec(format!("feature extraction kernels {k:?} are not distinct")));
        }
        if k.iter().any(|&s| s % 2 == 0) {
            return Err(VadError::Spec(format!("feature extraction kernels {k:?} must be odd")));
        }
        if !self.skip_connections {
            return Err(VadError::Spec("skip connections cannot be disabled".into()));
        }
        if self.levels == 0 {
            return Err(VadError::Spec("levels must be at least 1".into()));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(4) {
            return Err(VadError::Spec(format!(
                "base channels {} must be a positive multiple of 4",
                self.base_channels
            )));
        }
        Ok(())
    }

    pub fn unet_spec(&self) -> Result<UNetSpec> {
        self.validate()?;
        Ok(UNetSpec {
            in_channels: 3,
            out_channels: 3,
            channels: channel_schedule(self.levels, self.base_channels),
            stem: Stem::MultiScale(self.feature_extraction_kernels.clone()),
            leaky_slope: self.leaky_slope,
            output: self.output_activation,
        })
    }
}

pub fn build_motion_net(spec: &MotionNetSpec, seed: u64) -> Result<Weights> {
    Weights::init(Architecture::Motion(spec.clone()), seed)
}

fn require_motion(w: &Weights) -> Result<()> {
    if w.motion_spec().is_none() {
        return Err(VadError::Checkpoint(format!(
            "expected motion network weights, got {}",
            w.architecture().name()
        )));
    }
    Ok(())
}

/// The network output clamped to [0, 1].
pub fn predict_flow(w: &Weights, frame: &Frame) -> Result<FlowRgb> {
    require_motion(w)?;
    let y = w.forward(&Tensor::from_hwc(frame.pixels()))?;
    FlowRgb::new(y.to_hwc().mapv(|v| v.clamp(0.0, 1.0)), 0.0)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(VadError::Input(format!("shape mismatch: {a} vs {b} elements")));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn loss_opt(pred: &FlowRgb, truth: &FlowRgb) -> Result<f64> {
    if pred.pixels().dim() != truth.pixels().dim() {
        return Err(VadError::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            pred.pixels().dim(),
            truth.pixels().dim()
        )));
    }
    l1_with_grad(
        pred.pixels().as_slice().expect("standard layout"),
        truth.pixels().as_slice().expect("standard layout"),
    )
    .map(|(l, _)| l)
}

/// Mean L1 loss and its subgradient w.r.t. `pred` (zero where equal).
pub fn l1_with_grad(pred: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), truth.len())?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Per-sample motion loss and parameter gradient. The L1 is taken on the
/// unclamped head output, which bounds `loss_opt` of the clamped prediction
/// from above and equals it whenever the output is in range.
pub fn motion_loss_and_grad(w: &Weights, frame: &Frame, target: &FlowRgb) -> Result<(f64, Vec<f64>)> {
    require_motion(w)?;
    let x = Tensor::from_hwc(frame.pixels());
    w.net().check_input(x.c, x.h, x.w)?;
    let trace = w.net().forward_traced(w.params(), &x, false);
    let target = Tensor::from_hwc(target.pixels());
    let (loss, g) = l1_with_grad(&trace.output().data, &target.data)?;
    let out = trace.output();
    let g = Tensor::from_vec(out.c, out.h, out.w, g);
    let mut grads = vec![0.0; w.param_count()];
    w.net().backward(w.params(), &trace, &g, &mut grads);
    Ok((loss, grads))
}
