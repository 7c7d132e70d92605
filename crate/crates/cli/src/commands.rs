use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use vad_core::data::{
    build_manifest, gen_synthetic as generate, load_clip_frames, precompute_flow as fill_flow, DatasetManifest,
    FlowSource, Layout, Split,
};
use vad_core::experiment::{ablation_table, run_ablation, BenchmarkConfig, BenchmarkData};
use vad_core::flow::BlockMatchParams;
use vad_core::frame_net::build_frame_net;
use vad_core::media::psnr;
use vad_core::motion::build_motion_net;
use vad_core::scoring::{evaluate_dataset, normalize_scores, patch_masks};
use vad_core::training::{train_frame_stage, train_motion_stage, Stage};
use vad_core::{Pipeline, Weights};

use crate::config::{self, apply_train_flags, create_out, looks_like_ped2, require_dir, require_exists, PED2_FRAME_LR};
use crate::{Common, ModelArg, SplitArg, TrainFlags};

pub fn gen_synthetic(
    common: &Common,
    out: &Path,
    train_clips: Option<usize>,
    test_clips: Option<usize>,
    clip_length: Option<usize>,
) -> anyhow::Result<()> {
    let mut cfg = config::load(common)?;
    let s = &mut cfg.synthetic;
    if let Some(v) = train_clips {
        s.train_clips = v;
    }
    if let Some(v) = test_clips {
        s.test_clips = v;
    }
    if let Some(v) = clip_length {
        s.clip_length = v;
    }
    let summary = generate(s, out)?;
    log::info!(
        "wrote {} train and {} test clips, {} anomaly windows, to {}",
        summary.train_ids.len(),
        summary.test_ids.len(),
        summary.windows.len(),
        out.display()
    );
    Ok(())
}

pub fn precompute_flow(
    common: &Common,
    dataset: &Path,
    out: Option<PathBuf>,
    import: Option<PathBuf>,
    block: usize,
    radius: usize,
    split: SplitArg,
) -> anyhow::Result<()> {
    config::load(common)?;
    require_dir(dataset, "dataset")?;
    if let Some(dir) = &import {
        require_dir(dir, "flow import directory")?;
    }
    let flow_root = out.unwrap_or_else(|| dataset.join("flow"));
    create_out(&flow_root)?;
    let source = match import {
        Some(dir) => FlowSource::Import(dir),
        None => FlowSource::BlockMatch(BlockMatchParams { block, radius }),
    };
    let splits: &[Split] = match split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &[Split::Train, Split::Test],
    };
    for &s in splits {
        let manifest = build_manifest(dataset, s, Layout::FramesOnly)?;
        let n = fill_flow(&manifest, &source, &flow_root)?;
        log::info!("{}: {n} flow files", s.as_str());
    }
    Ok(())
}

/// Train-split manifest whose flow directories point into `flow_root`.
fn train_manifest_with_flow(dataset: &Path, flow_root: &Path) -> anyhow::Result<DatasetManifest> {
    let mut manifest = build_manifest(dataset, Split::Train, Layout::FramesOnly)?;
    for clip in &mut manifest.clips {
        let dir = flow_root.join(&clip.video_id);
        if !dir.is_dir() {
            bail!("missing flow directory {} (run precompute-flow)", dir.display());
        }
        clip.flow_dir = Some(dir);
    }
    Ok(manifest)
}

pub fn train_motion(
    common: &Common,
    dataset: &Path,
    out: &Path,
    flow_root: Option<PathBuf>,
    flags: &TrainFlags,
) -> anyhow::Result<()> {
    let mut cfg = config::load(common)?;
    cfg.train.epochs = cfg.motion_epochs;
    apply_train_flags(&mut cfg, flags);
    cfg.train.stage = Stage::Motion;
    cfg.train.validate()?;
    require_dir(dataset, "dataset")?;
    let flow_root = flow_root.unwrap_or_else(|| dataset.join("flow"));
    let manifest = train_manifest_with_flow(dataset, &flow_root)?;
    create_out(out)?;
    let init = build_motion_net(&cfg.motion_net, cfg.train.seed)?;
    let outcome = train_motion_stage(&cfg.train, init, &manifest, cfg.frame_size, Some(out))?;
    let path = out.join("motion.ckpt");
    outcome.weights.save(&path)?;
    log::info!(
        "saved epoch {} of {} to {}",
        outcome.selected_epoch,
        outcome.curve.len(),
        path.display()
    );
    Ok(())
}

pub fn train_frame(
    common: &Common,
    dataset: &Path,
    out: &Path,
    motion: Option<PathBuf>,
    no_flow: bool,
    no_margin: bool,
    flags: &TrainFlags,
) -> anyhow::Result<()> {
    let mut cfg = config::load(common)?;
    cfg.train.epochs = cfg.frame_epochs;
    if flags.lr.is_none() && looks_like_ped2(dataset) {
        log::info!("UCSD Ped2 dataset: frame-stage learning rate {PED2_FRAME_LR}");
        cfg.train.learning_rate = PED2_FRAME_LR;
    }
    apply_train_flags(&mut cfg, flags);
    cfg.train.stage = Stage::Frame;
    cfg.train.use_flow_guidance = !no_flow;
    cfg.train.use_margin_loss = !no_margin;
    cfg.train.validate()?;
    require_dir(dataset, "dataset")?;
    let motion = match motion.filter(|_| !no_flow) {
        Some(path) => {
            require_exists(&path, "motion checkpoint")?;
            Some(Weights::load(&path)?)
        }
        None => None,
    };
    let manifest = build_manifest(dataset, Split::Train, Layout::FramesOnly)?;
    create_out(out)?;
    let init = build_frame_net(&cfg.frame_net, cfg.train.seed)?;
    let outcome = train_frame_stage(&cfg.train, motion.as_ref(), init, &manifest, cfg.frame_size, Some(out))?;
    log::info!("{} motion-network evaluations during training", outcome.flow_evaluations);
    let path = Pipeline::new(motion, outcome.weights)?.save(out)?;
    log::info!("saved pipeline {}", path.display());
    Ok(())
}

fn load_model(model: &ModelArg, cfg: &BenchmarkConfig) -> anyhow::Result<Pipeline> {
    match &model.model {
        Some(path) => {
            require_exists(path, "model")?;
            Ok(Pipeline::load(path)?)
        }
        None => {
            let seed = cfg.train.seed;
            Ok(Pipeline::new(
                Some(build_motion_net(&cfg.motion_net, seed)?),
                build_frame_net(&cfg.frame_net, seed)?,
            )?)
        }
    }
}

struct Scoring {
    cfg: BenchmarkConfig,
    pipeline: Pipeline,
    test: DatasetManifest,
}

fn prepare_scoring(
    common: &Common,
    dataset: &Path,
    out: &Path,
    model: &ModelArg,
    frame_size: Option<usize>,
) -> anyhow::Result<Scoring> {
    let mut cfg = config::load(common)?;
    if let Some(s) = frame_size {
        cfg.frame_size = s;
    }
    require_dir(dataset, "dataset")?;
    let pipeline = load_model(model, &cfg)?;
    let test = build_manifest(dataset, Split::Test, Layout::FramesOnly)?;
    create_out(out)?;
    Ok(Scoring { cfg, pipeline, test })
}

/// `score` writes the CSV; `evaluate` adds the summary and, when `patch`
/// is nonzero, patch masks.
pub fn score(
    common: &Common,
    dataset: &Path,
    out: &Path,
    model: &ModelArg,
    frame_size: Option<usize>,
    summary: bool,
    patch: usize,
) -> anyhow::Result<()> {
    let s = prepare_scoring(common, dataset, out, model, frame_size)?;
    let report = evaluate_dataset(&s.pipeline, &s.test, s.cfg.frame_size)?;
    if summary {
        report.write(out)?;
        print!("{}", report.summary());
    } else {
        let path = out.join("scores.csv");
        std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("global AUC {:.4}", report.auc);
    if patch > 0 {
        write_masks(&s, &out.join("masks"), None, patch, (10.0, 40.0))?;
    }
    Ok(())
}

fn write_masks(
    s: &Scoring,
    out: &Path,
    video: Option<&str>,
    patch: usize,
    (lo_db, hi_db): (f64, f64),
) -> anyhow::Result<()> {
    let clips: Vec<_> = s
        .test
        .clips
        .iter()
        .filter(|c| video.is_none_or(|v| v == c.video_id))
        .collect();
    if clips.is_empty() {
        bail!("no test video named {}", video.unwrap_or_default());
    }
    for clip in clips {
        let frames = load_clip_frames(clip, s.cfg.frame_size)?;
        let dir = out.join(&clip.video_id);
        create_out(&dir)?;
        for (t, m) in patch_masks(&s.pipeline, &frames, patch)?.iter().enumerate() {
            let path = dir.join(format!("{:04}.png", t + 1));
            m.to_gray(lo_db, hi_db, patch as u32)
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn mask(
    common: &Common,
    dataset: &Path,
    out: &Path,
    model: &ModelArg,
    frame_size: Option<usize>,
    video: Option<String>,
    patch: usize,
    range: (f64, f64),
) -> anyhow::Result<()> {
    if !(range.1 > range.0) {
        bail!("--hi-db must exceed --lo-db");
    }
    let s = prepare_scoring(common, dataset, out, model, frame_size)?;
    write_masks(&s, out, video.as_deref(), patch, range)
}

pub fn ablate(
    common: &Common,
    dataset: &Path,
    out: &Path,
    mut seeds: Vec<u64>,
    motion_epochs: Option<usize>,
    frame_epochs: Option<usize>,
) -> anyhow::Result<()> {
    let mut cfg = config::load(common)?;
    if let Some(v) = motion_epochs {
        cfg.motion_epochs = v;
    }
    if let Some(v) = frame_epochs {
        cfg.frame_epochs = v;
    }
    if seeds.is_empty() {
        seeds.push(cfg.train.seed);
    }
    require_dir(dataset, "dataset")?;
    let data = BenchmarkData::load(&cfg, dataset)?;
    create_out(out)?;
    let reports = run_ablation(&cfg, &data, &seeds)?;
    let table = ablation_table(&reports);
    print!("{table}");
    std::fs::write(out.join("ablation.txt"), &table).context("writing ablation.txt")?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&reports)?)
        .context("writing ablation.json")?;
    Ok(())
}

pub fn bench(
    common: &Common,
    dataset: &Path,
    out: &Path,
    model: &ModelArg,
    frame_size: Option<usize>,
    max_frames: usize,
) -> anyhow::Result<()> {
    let s = prepare_scoring(common, dataset, out, model, frame_size)?;
    let mut clips = Vec::new();
    let mut total = 0;
    for clip in &s.test.clips {
        if total >= max_frames {
            break;
        }
        let mut frames = load_clip_frames(clip, s.cfg.frame_size)?;
        frames.truncate((max_frames - total).max(2));
        total += frames.len() - 1;
        clips.push(frames);
    }

    let start = Instant::now();
    for frames in &clips {
        for f in &frames[..frames.len() - 1] {
            std::hint::black_box(s.pipeline.predict_next(f)?);
        }
    }
    let predict_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    for frames in &clips {
        let mut series = Vec::with_capacity(frames.len());
        for t in 1..frames.len() {
            series.push(psnr(&frames[t], &s.pipeline.predict_next(&frames[t - 1])?)?);
        }
        std::hint::black_box(normalize_scores(&series)?);
    }
    let detect_secs = start.elapsed().as_secs_f64();

    let text = format!(
        "frames: {total}\nbatch_size: 1\nflow_guidance: {}\nprediction_fps: {:.2}\ndetection_fps: {:.2}\n",
        s.pipeline.uses_flow(),
        total as f64 / predict_secs,
        total as f64 / detect_secs
    );
    print!("{text}");
    std::fs::write(out.join("bench.txt"), text).context("writing bench.txt")?;
    Ok(())
}
