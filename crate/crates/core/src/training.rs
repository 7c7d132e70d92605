//! Two-stage training: the motion network against ground-truth flow, then
//! the frame network with the motion network frozen.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_flow_pairs, load_frame_pairs, DatasetManifest, FlowSample, FrameSample};
use crate::error::{Result, VadError};
use crate::exec;
use crate::flow::FlowRgb;
use crate::frame_net::{frame_loss_and_grad, FrameLoss, FrameLossConfig, L2Reduction};
use crate::model::Weights;
use crate::motion::{motion_loss_and_grad, predict_flow};
use crate::nn::{Adam, AdamParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Motion,
    Frame,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Motion => "motion",
            Stage::Frame => "frame",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub use_flow_guidance: bool,
    pub use_margin_loss: bool,
    pub reduction: L2Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Frame,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 16,
            epochs: 10,
            alpha: 0.2,
            lambda: 0.004,
            seed: 0,
            use_flow_guidance: true,
            use_margin_loss: true,
            reduction: L2Reduction::Rms,
        }
    }
}

impl TrainConfig {
    /// One of the four ablation cells, 1-based as in the ablation table:
    /// Exp1 neither ingredient, Exp2 margin only, Exp3 flow only, Exp4 both.
    pub fn ablation(cell: usize) -> Result<Self> {
        let (flow, margin) = match cell {
            1 => (false, false),
            2 => (false, true),
            3 => (true, false),
            4 => (true, true),
            _ => return Err(VadError::Config(format!("ablation cell {cell} not in 1..=4"))),
        };
        Ok(Self {
            use_flow_guidance: flow,
            use_margin_loss: margin,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(VadError::Config(m));
        if !(self.learning_rate > 0.0) {
            return err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} {b} must lie in [0, 1)"));
            }
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return err("alpha and lambda must be nonnegative".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..Default::default()
        }
    }

    pub fn frame_loss(&self) -> FrameLossConfig {
        FrameLossConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            use_margin: self.use_margin_loss,
            reduction: self.reduction,
        }
    }
}

/// Mean training losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dense: f64,
    pub margin: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights (frame stage) or the selected epoch's (motion stage).
    pub weights: Weights,
    pub curve: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub checkpoints: Vec<PathBuf>,
    /// Motion-network forward passes spent on guidance.
    pub flow_evaluations: usize,
}

struct MetricsLog {
    file: Option<std::fs::File>,
    path: PathBuf,
    start: Instant,
    stage: Stage,
}

impl MetricsLog {
    fn open(dir: Option<&Path>, stage: Stage) -> Result<Self> {
        let path = dir
            .map(|d| d.join(format!("{}-metrics.log", stage.as_str())))
            .unwrap_or_default();
        let file = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| VadError::io(d, e))?;
                Some(std::fs::File::create(&path).map_err(|e| VadError::io(&path, e))?)
            }
            None => None,
        };
        Ok(Self {
            file,
            path,
            start: Instant::now(),
            stage,
        })
    }

    fn line(&mut self, epoch: usize, step: usize, l: &FrameLoss) -> Result<()> {
        let line = format!(
            "stage={} epoch={epoch} step={step} loss={:.8} dense={:.8} margin={:.8} wall={:.3}",
            self.stage.as_str(),
            l.total,
            l.dense,
            l.margin,
            self.start.elapsed().as_secs_f64()
        );
        log::debug!("{line}");
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}").map_err(|e| VadError::io(&self.path, e))?;
        }
        Ok(())
    }
}

/// Averages per-sample gradients in sample order, so the result does not
/// depend on how the samples were scheduled.
fn mean_gradient(parts: Vec<Result<(FrameLoss, Vec<f64>)>>, n_params: usize) -> Result<(FrameLoss, Vec<f64>)> {
    let n = parts.len() as f64;
    let mut grad = vec![0.0; n_params];
    let mut loss = FrameLoss::default();
    for p in parts {
        let (l, g) = p?;
        loss.total += l.total;
        loss.dense += l.dense;
        loss.margin += l.margin;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for a in &mut grad {
        *a /= n;
    }
    loss.total /= n;
    loss.dense /= n;
    loss.margin /= n;
    Ok((loss, grad))
}

struct Epochs {
    curve: Vec<EpochRecord>,
    last: Weights,
    /// Weights after the epoch with the lowest mean loss.
    best: Weights,
    best_epoch: usize,
    checkpoints: Vec<PathBuf>,
}

/// Generic minibatch loop shared by both stages. `sample_grad` returns the
/// loss and parameter gradient of one sample under the given weights.
fn run_epochs<G>(
    config: &TrainConfig,
    mut weights: Weights,
    n_samples: usize,
    checkpoint_dir: Option<&Path>,
    sample_grad: G,
) -> Result<Epochs>
where
    G: Fn(&Weights, usize) -> Result<(FrameLoss, Vec<f64>)> + Sync + Send,
{
    config.validate()?;
    if n_samples == 0 {
        return Err(VadError::Data("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam(), weights.param_count());
    let mut log = MetricsLog::open(checkpoint_dir, config.stage)?;
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut curve: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(Weights, usize)> = None;
    let mut checkpoints = Vec::new();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = FrameLoss::default();
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let parts = exec::map(batch, |&i| sample_grad(&weights, i));
            let (loss, grad) = mean_gradient(parts, weights.param_count())?;
            adam.step(weights.params_mut(), &grad);
            step += 1;
            steps += 1;
            log.line(epoch, step, &loss)?;
            sum.total += loss.total;
            sum.dense += loss.dense;
            sum.margin += loss.margin;
        }
        let k = steps as f64;
        let record = EpochRecord {
            epoch,
            loss: sum.total / k,
            dense: sum.dense / k,
            margin: sum.margin / k,
            steps,
        };
        log::info!(
            "stage={} epoch={epoch} mean_loss={:.6} dense={:.6} margin={:.6} wall={:.1}s",
            config.stage.as_str(),
            record.loss,
            record.dense,
            record.margin,
            log.start.elapsed().as_secs_f64()
        );
        weights.meta.stage = Some(config.stage.as_str().to_string());
        weights.meta.epoch = epoch;
        weights.meta.seed = config.seed;
        weights.meta.loss = Some(record.loss);
        if let Some(dir) = checkpoint_dir {
            let p = dir.join(format!("{}-epoch{epoch}.ckpt", config.stage.as_str()));
            weights.save(&p)?;
            checkpoints.push(p);
        }
        if curve.iter().all(|r| record.loss < r.loss) {
            best = Some((weights.clone(), epoch));
        }
        curve.push(record);
    }
    let (best, best_epoch) = best.expect("at least one epoch");
    Ok(Epochs {
        curve,
        last: weights,
        best,
        best_epoch,
        checkpoints,
    })
}

/// Trains the motion network on (frame, encoded flow) pairs and keeps the
/// epoch with the lowest mean training L1.
pub fn train_motion(
    config: &TrainConfig,
    init: Weights,
    samples: &[FlowSample],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if init.motion_spec().is_none() {
        return Err(VadError::Checkpoint("motion stage needs motion network weights".into()));
    }
    let config = TrainConfig {
        stage: Stage::Motion,
        ..config.clone()
    };
    let run = run_epochs(&config, init, samples.len(), checkpoint_dir, |w, i| {
        let (l, g) = motion_loss_and_grad(w, &samples[i].frame, &samples[i].flow)?;
        Ok((
            FrameLoss {
                dense: l,
                margin: 0.0,
                total: l,
            },
            g,
        ))
    })?;
    Ok(TrainOutcome {
        weights: run.best,
        curve: run.curve,
        selected_epoch: run.best_epoch,
        checkpoints: run.checkpoints,
        flow_evaluations: 0,
    })
}

/// Guidance for each sample: the frozen motion network's prediction, or a
/// blank encoding when flow guidance is off. Returns the number of motion
/// forward passes spent.
pub fn guidance_for(
    config: &TrainConfig,
    motion: Option<&Weights>,
    samples: &[FrameSample],
) -> Result<(Vec<FlowRgb>, usize)> {
    if !config.use_flow_guidance {
        let blank = samples
            .iter()
            .map(|s| FlowRgb::blank(s.current.height(), s.current.width()))
            .collect();
        return Ok((blank, 0));
    }
    let m = motion.ok_or_else(|| VadError::Config("flow guidance needs motion weights".into()))?;
    if m.motion_spec().is_none() {
        return Err(VadError::Checkpoint("motion slot holds a frame network".into()));
    }
    if let Some(s) = samples.first() {
        m.net()
            .check_input(3, s.current.height(), s.current.width())
            .map_err(|e| VadError::Checkpoint(format!("motion weights do not fit the training frames: {e}")))?;
    }
    let flows = exec::map(samples, |s| predict_flow(m, &s.current))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((flows, samples.len()))
}

/// Trains the frame network on (frame, next frame) pairs. The motion
/// weights are only read; guidance is computed once per sample up front.
pub fn train_frame(
    config: &TrainConfig,
    motion: Option<&Weights>,
    init: Weights,
    samples: &[FrameSample],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let spec = init
        .frame_spec()
        .ok_or_else(|| VadError::Checkpoint("frame stage needs frame network weights".into()))?;
    if spec.input_channels != 6 {
        return Err(VadError::Checkpoint(format!(
            "frame network takes {} channels, expected 6",
            spec.input_channels
        )));
    }
    let config = TrainConfig {
        stage: Stage::Frame,
        ..config.clone()
    };
    config.validate()?;
    let (flows, flow_evaluations) = guidance_for(&config, motion, samples)?;
    let loss_cfg = config.frame_loss();
    let run = run_epochs(&config, init, samples.len(), checkpoint_dir, |w, i| {
        frame_loss_and_grad(w, &samples[i].current, &flows[i], &samples[i].next, &loss_cfg)
    })?;
    Ok(TrainOutcome {
        selected_epoch: run.curve.len(),
        weights: run.last,
        curve: run.curve,
        checkpoints: run.checkpoints,
        flow_evaluations,
    })
}

/// Motion stage over a manifest with a flow tree.
pub fn train_motion_stage(
    config: &TrainConfig,
    init: Weights,
    manifest: &DatasetManifest,
    size: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = load_flow_pairs(manifest, size)?;
    train_motion(config, init, &samples, checkpoint_dir)
}

/// Frame stage over a manifest.
pub fn train_frame_stage(
    config: &TrainConfig,
    motion: Option<&Weights>,
    init: Weights,
    manifest: &DatasetManifest,
    size: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = load_frame_pairs(manifest, size)?;
    train_frame(config, motion, init, &samples, checkpoint_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_net::{build_frame_net, frame_loss, predict_frame, FrameNetSpec};
    use crate::media::Frame;
    use crate::motion::{build_motion_net, MotionNetSpec};
    use ndarray::Array3;

    fn motion_spec() -> MotionNetSpec {
        MotionNetSpec {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        }
    }

    fn frame_spec() -> FrameNetSpec {
        FrameNetSpec {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        }
    }

    fn frame(k: usize) -> Frame {
        Frame::new(Array3::from_shape_fn((8, 8, 3), |(y, x, c)| {
            ((x + k + c) % 8) as f64 / 8.0 * 0.5 + (y % 3) as f64 * 0.1
        }))
        .unwrap()
    }

    fn frame_samples(n: usize) -> Vec<FrameSample> {
        (0..n)
            .map(|k| FrameSample {
                video_id: "v".into(),
                index: k,
                current: frame(k),
                next: frame(k + 1),
            })
            .collect()
    }

    fn flow_samples(n: usize) -> Vec<FlowSample> {
        (0..n)
            .map(|k| FlowSample {
                video_id: "v".into(),
                index: k,
                frame: frame(k),
                flow: FlowRgb::new(Array3::from_elem((8, 8, 3), 0.25 + 0.05 * k as f64), 1.0).unwrap(),
            })
            .collect()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 3,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(zero.validate(), Err(VadError::Config(_))));
        assert!(TrainConfig::ablation(5).is_err());
        let cells: Vec<(bool, bool)> = (1..=4)
            .map(|c| {
                let t = TrainConfig::ablation(c).unwrap();
                (t.use_flow_guidance, t.use_margin_loss)
            })
            .collect();
        assert_eq!(cells, vec![(false, false), (false, true), (true, false), (true, true)]);
    }

    #[test]
    fn motion_training_is_deterministic_and_selects_best_epoch() {
        let init = build_motion_net(&motion_spec(), 1).unwrap();
        let s = flow_samples(5);
        let a = train_motion(&quick(4), init.clone(), &s, None).unwrap();
        let b = train_motion(&quick(4), init, &s, None).unwrap();
        assert_eq!(a.weights.params(), b.weights.params());
        let best = a.curve.iter().min_by(|x, y| x.loss.total_cmp(&y.loss)).unwrap();
        assert_eq!(a.selected_epoch, best.epoch);
        assert_eq!(a.weights.meta.epoch, best.epoch);
        assert!(a.curve.last().unwrap().loss < a.curve[0].loss);
    }

    #[test]
    fn checkpoints_are_written_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let init = build_motion_net(&motion_spec(), 1).unwrap();
        let out = train_motion(&quick(2), init, &flow_samples(3), Some(dir.path())).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert!(dir.path().join("motion-epoch2.ckpt").exists());
        let log = std::fs::read_to_string(dir.path().join("motion-metrics.log")).unwrap();
        assert!(log.lines().next().unwrap().starts_with("stage=motion epoch=1 step=1 loss="));
    }

    #[test]
    fn frame_stage_freezes_motion_and_counts_guidance() {
        let motion = build_motion_net(&motion_spec(), 2).unwrap();
        let before = motion.clone();
        let init = build_frame_net(&frame_spec(), 3).unwrap();
        let s = frame_samples(4);
        let out = train_frame(&quick(2), Some(&motion), init.clone(), &s, None).unwrap();
        assert_eq!(motion.params(), before.params());
        assert_eq!(out.flow_evaluations, 4);

        let exp1 = TrainConfig {
            use_flow_guidance: false,
            use_margin_loss: false,
            ..quick(2)
        };
        let out = train_frame(&exp1, Some(&motion), init, &s, None).unwrap();
        assert_eq!(out.flow_evaluations, 0);
    }

    #[test]
    fn mismatched_motion_weights_are_rejected() {
        let deep = build_motion_net(
            &MotionNetSpec {
                levels: 5,
                base_channels: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let init = build_frame_net(&frame_spec(), 3).unwrap();
        let err = train_frame(&quick(1), Some(&deep), init.clone(), &frame_samples(2), None).unwrap_err();
        assert!(matches!(err, VadError::Checkpoint(_)), "{err}");
        let err = train_frame(&quick(1), Some(&init), init.clone(), &frame_samples(2), None).unwrap_err();
        assert!(matches!(err, VadError::Checkpoint(_)));
    }

    #[test]
    fn identical_batch_matches_single_sample_step() {
        let init = build_frame_net(&frame_spec(), 4).unwrap();
        let one = frame_samples(1);
        let four: Vec<FrameSample> = (0..4).map(|_| one[0].clone()).collect();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            use_flow_guidance: false,
            ..Default::default()
        };
        let a = train_frame(&cfg, None, init.clone(), &one, None).unwrap();
        let b = train_frame(&cfg, None, init, &four, None).unwrap();
        for (x, y) in a.weights.params().iter().zip(b.weights.params()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn margin_off_records_dense_loss() {
        let init = build_frame_net(&frame_spec(), 5).unwrap();
        let s = frame_samples(1);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            use_flow_guidance: false,
            use_margin_loss: false,
            ..Default::default()
        };
        let out = train_frame(&cfg, None, init.clone(), &s, None).unwrap();
        let blank = FlowRgb::blank(8, 8);
        let pred = predict_frame(&init, &s[0].current, &blank).unwrap();
        let l = frame_loss(&s[0].next, &pred, &s[0].current, &cfg.frame_loss()).unwrap();
        assert!((out.curve[0].loss - l.dense).abs() < 1e-9);
        assert!((out.curve[0].loss - out.curve[0].dense).abs() < 1e-12);
    }

    #[test]
    fn frame_training_is_identical_across_exec_modes() {
        let init = build_frame_net(&frame_spec(), 6).unwrap();
        let s = frame_samples(5);
        let cfg = TrainConfig {
            use_flow_guidance: false,
            ..quick(2)
        };
        exec::set_mode(exec::ExecMode::Sequential);
        let a = train_frame(&cfg, None, init.clone(), &s, None).unwrap();
        exec::set_mode(exec::ExecMode::Parallel);
        let b = train_frame(&cfg, None, init, &s, None).unwrap();
        assert_eq!(a.weights.params(), b.weights.params());
    }

    #[test]
    fn guidance_without_motion_weights_is_a_config_error() {
        let init = build_frame_net(&frame_spec(), 6).unwrap();
        let err = train_frame(&quick(1), None, init, &frame_samples(2), None).unwrap_err();
        assert!(matches!(err, VadError::Config(_)));
    }
}
