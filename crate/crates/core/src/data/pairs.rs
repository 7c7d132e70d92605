use crate::data::manifest::{load_clip_frames, DatasetManifest};
use crate::error::{Result, VadError};
use crate::exec;
use crate::flow::{flow_to_rgb, read_flo_file, FlowRgb};
use crate::media::{load_frame, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    FlowPairs,
    FramePairs,
}

/// A frame and the encoded flow from it to its successor.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub video_id: String,
    pub index: usize,
    pub frame: Frame,
    pub flow: FlowRgb,
}

/// A frame and its successor.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub video_id: String,
    pub index: usize,
    pub current: Frame,
    pub next: Frame,
}

/// (I_t, flow_t) pairs for t in 0..T-1 of every clip, preprocessed to
/// `size`. Flow is color-encoded at its native resolution, then resized.
pub fn load_flow_pairs(manifest: &DatasetManifest, size: usize) -> Result<Vec<FlowSample>> {
    let mut jobs = Vec::new();
    for clip in &manifest.clips {
        if clip.flow_dir.is_none() {
            return Err(VadError::Data(format!(
                "clip {} has no flow directory; run `precompute-flow` first",
                clip.video_id
            )));
        }
        for t in 0..clip.frame_count.saturating_sub(1) {
            let flow = clip.flow_path(t).unwrap();
            if !flow.is_file() {
                return Err(VadError::Data(format!(
                    "missing flow for pair ({}, {}→{}): {}",
                    clip.video_id,
                    t,
                    t + 1,
                    flow.display()
                )));
            }
            jobs.push((clip, t, flow));
        }
    }
    exec::map(&jobs, |(clip, t, flow_path)| {
        let frame = load_frame(&clip.frame_path(*t), size)?;
        let flow = read_flo_file(flow_path)?;
        Ok(FlowSample {
            video_id: clip.video_id.clone(),
            index: *t,
            frame,
            flow: flow_to_rgb(&flow).resized(size),
        })
    })
    .into_iter()
    .collect()
}

/// (I_t, I_{t+1}) pairs, never crossing clip boundaries.
pub fn load_frame_pairs(manifest: &DatasetManifest, size: usize) -> Result<Vec<FrameSample>> {
    let clips = exec::map(&manifest.clips, |clip| load_clip_frames(clip, size));
    let mut out = Vec::new();
    for (clip, frames) in manifest.clips.iter().zip(clips) {
        let frames = frames?;
        for t in 0..frames.len().saturating_sub(1) {
            out.push(FrameSample {
                video_id: clip.video_id.clone(),
                index: t,
                current: frames[t].clone(),
                next: frames[t + 1].clone(),
            });
        }
    }
    Ok(out)
}
