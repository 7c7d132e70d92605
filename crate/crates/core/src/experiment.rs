//! The synthetic benchmark end to end: generate data, train both stages,
//! evaluate, and run the four-cell ablation grid.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    build_manifest, gen_synthetic, load_flow_pairs, load_frame_pairs, DatasetManifest, FlowSample, FrameSample,
    Layout, Split, SyntheticSceneConfig,
};
use crate::error::Result;
use crate::frame_net::{build_frame_net, FrameNetSpec};
use crate::model::{Pipeline, Weights};
use crate::motion::{build_motion_net, MotionNetSpec};
use crate::scoring::{evaluate_dataset, EvalReport};
use crate::training::{train_frame, train_motion, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub synthetic: SyntheticSceneConfig,
    /// Side length frames are resized to before entering the networks.
    pub frame_size: usize,
    pub motion_net: MotionNetSpec,
    pub frame_net: FrameNetSpec,
    /// Shared optimizer and loss settings; the ablation flags are set per cell.
    pub train: TrainConfig,
    pub motion_epochs: usize,
    pub frame_epochs: usize,
}

impl Default for BenchmarkConfig {
    /// Desk scale: 32×32 frames, narrow networks, the reference optimizer and
    /// loss settings. Roughly five minutes per seed for the motion network
    /// plus one Exp4 cell on a single CPU core.
    fn default() -> Self {
        Self {
            synthetic: SyntheticSceneConfig {
                canvas: 32,
                sprite_size: 10,
                normal_velocities: vec![[3, 0], [0, 3]],
                clip_length: 40,
                sprites_per_clip: 3,
                train_clips: 8,
                test_clips: 6,
                ..Default::default()
            },
            frame_size: 32,
            motion_net: MotionNetSpec {
                levels: 3,
                base_channels: 8,
                ..Default::default()
            },
            frame_net: FrameNetSpec {
                levels: 3,
                base_channels: 8,
                ..Default::default()
            },
            train: TrainConfig::default(),
            motion_epochs: 40,
            frame_epochs: 100,
        }
    }
}

/// Training and test data of the benchmark, loaded once.
pub struct BenchmarkData {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub flow_samples: Vec<FlowSample>,
    pub frame_samples: Vec<FrameSample>,
}

impl BenchmarkData {
    /// Generates the synthetic dataset under `root` and loads it.
    pub fn generate(cfg: &BenchmarkConfig, root: &Path) -> Result<Self> {
        gen_synthetic(&cfg.synthetic, root)?;
        Self::load(cfg, root)
    }

    pub fn load(cfg: &BenchmarkConfig, root: &Path) -> Result<Self> {
        let train = build_manifest(root, Split::Train, Layout::FramesPlusFlow)?;
        let test = build_manifest(root, Split::Test, Layout::FramesOnly)?;
        let flow_samples = load_flow_pairs(&train, cfg.frame_size)?;
        let frame_samples = load_frame_pairs(&train, cfg.frame_size)?;
        Ok(Self {
            train,
            test,
            flow_samples,
            frame_samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    pub seed: u64,
    pub use_flow_guidance: bool,
    pub use_margin_loss: bool,
    pub auc: f64,
    pub score_gap: f64,
    pub final_loss: f64,
    pub flow_evaluations: usize,
    pub seconds: f64,
}

/// Stage one: the motion network, trained from `seed`.
pub fn train_motion_net(cfg: &BenchmarkConfig, data: &BenchmarkData, seed: u64) -> Result<Weights> {
    let init = build_motion_net(&cfg.motion_net, seed)?;
    let tc = TrainConfig {
        epochs: cfg.motion_epochs,
        seed,
        ..cfg.train.clone()
    };
    Ok(train_motion(&tc, init, &data.flow_samples, None)?.weights)
}

/// Stage two for one ablation cell, then evaluation on the test split.
/// `motion` is required for the cells that use flow guidance.
pub fn run_cell(
    cfg: &BenchmarkConfig,
    data: &BenchmarkData,
    cell: usize,
    seed: u64,
    motion: Option<&Weights>,
) -> Result<(CellReport, Pipeline, EvalReport)> {
    let start = Instant::now();
    let flags = TrainConfig::ablation(cell)?;
    let tc = TrainConfig {
        epochs: cfg.frame_epochs,
        seed,
        use_flow_guidance: flags.use_flow_guidance,
        use_margin_loss: flags.use_margin_loss,
        ..cfg.train.clone()
    };
    let init = build_frame_net(&cfg.frame_net, seed)?;
    let motion = if tc.use_flow_guidance { motion } else { None };
    let out = train_frame(&tc, motion, init, &data.frame_samples, None)?;
    let pipeline = Pipeline::new(motion.cloned(), out.weights)?;
    let eval = evaluate_dataset(&pipeline, &data.test, cfg.frame_size)?;
    let report = CellReport {
        cell,
        seed,
        use_flow_guidance: tc.use_flow_guidance,
        use_margin_loss: tc.use_margin_loss,
        auc: eval.auc,
        score_gap: eval.score_gap(),
        final_loss: out.curve.last().map_or(f64::NAN, |r| r.loss),
        flow_evaluations: out.flow_evaluations,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "cell=Exp{cell} seed={seed} auc={:.4} gap={:.4} loss={:.5} {:.0}s",
        report.auc,
        report.score_gap,
        report.final_loss,
        report.seconds
    );
    Ok((report, pipeline, eval))
}

/// All four cells for every seed. Each cell trains its own frame network
/// from scratch; the frozen motion network of a seed is trained once and
/// read by the two flow-guided cells.
pub fn run_ablation(cfg: &BenchmarkConfig, data: &BenchmarkData, seeds: &[u64]) -> Result<Vec<CellReport>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let motion = train_motion_net(cfg, data, seed)?;
        for cell in 1..=4 {
            out.push(run_cell(cfg, data, cell, seed, Some(&motion))?.0);
        }
    }
    Ok(out)
}

/// Median AUC of one cell over seeds.
pub fn median_auc(reports: &[CellReport], cell: usize) -> Option<f64> {
    let mut v: Vec<f64> = reports.iter().filter(|r| r.cell == cell).map(|r| r.auc).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Plain-text table, one row per cell with the median over seeds.
pub fn ablation_table(reports: &[CellReport]) -> String {
    let mut s = String::from("cell  flow  margin  median_auc  runs\n");
    for cell in 1..=4 {
        let runs: Vec<&CellReport> = reports.iter().filter(|r| r.cell == cell).collect();
        if let Some(first) = runs.first() {
            let aucs: Vec<String> = runs.iter().map(|r| format!("{:.4}", r.auc)).collect();
            s.push_str(&format!(
                "Exp{cell}  {:<4}  {:<6}  {:.4}      {}\n",
                if first.use_flow_guidance { "on" } else { "off" },
                if first.use_margin_loss { "on" } else { "off" },
                median_auc(reports, cell).unwrap_or(f64::NAN),
                aucs.join(" ")
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(cell: usize, auc: f64) -> CellReport {
        CellReport {
            cell,
            seed: 0,
            use_flow_guidance: cell >= 3,
            use_margin_loss: cell.is_multiple_of(2),
            auc,
            score_gap: 0.0,
            final_loss: 0.0,
            flow_evaluations: 0,
            seconds: 0.0,
        }
    }

    #[test]
    fn medians_and_table() {
        let r = vec![report(1, 0.5), report(1, 0.7), report(1, 0.6), report(3, 0.9)];
        assert_eq!(median_auc(&r, 1), Some(0.6));
        assert_eq!(median_auc(&r, 2), None);
        let t = ablation_table(&r);
        assert!(t.contains("Exp1  off   off     0.6000"));
        assert!(t.contains("Exp3  on    off"));
    }
}
