//! Anomaly scores from prediction quality, frame labels and ROC-AUC.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{load_clip_frames, load_labels, DatasetManifest};
use crate::error::{Result, VadError};
use crate::exec;
use crate::media::{patch_psnr_mask, psnr, Frame, PatchMask};
use crate::model::Pipeline;

/// Per-frame scoring of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub psnr: Vec<f64>,
    pub ns: Vec<f64>,
    pub score: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreSeries {
    /// Normalizes a PSNR series (first-frame rule already applied) and
    /// attaches labels.
    pub fn from_psnr(video_id: impl Into<String>, psnr: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != psnr.len() {
            return Err(VadError::Input(format!(
                "{} labels for {} frames",
                labels.len(),
                psnr.len()
            )));
        }
        let ns = normalize_scores(&psnr)?;
        let score = anomaly_scores(&ns)?;
        let s = Self {
            video_id: video_id.into(),
            psnr,
            ns,
            score,
            labels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.psnr.len();
        let bad = |m: String| Err(VadError::Invariant(format!("{}: {m}", self.video_id)));
        if self.ns.len() != n || self.score.len() != n || self.labels.len() != n {
            return bad("field lengths differ".into());
        }
        for t in 0..n {
            if self.score[t] != 1.0 - self.ns[t] {
                return bad(format!("score != 1 - ns at frame {t}"));
            }
            if !(0.0..=1.0).contains(&self.ns[t]) {
                return bad(format!("ns out of range at frame {t}"));
            }
            if self.labels[t] > 1 {
                return bad(format!("label {} at frame {t}", self.labels[t]));
            }
        }
        if n >= 2 && self.score[0] != self.score[1] {
            return bad("first frame score differs from the second".into());
        }
        Ok(())
    }
}

/// PSNR of every frame against the prediction from its predecessor.
/// Frame 0 has no predecessor and copies frame 1's value.
pub fn psnr_series<F>(clip: &[Frame], mut predict: F) -> Result<Vec<f64>>
where
    F: FnMut(&Frame) -> Result<Frame>,
{
    if clip.len() < 2 {
        return Err(VadError::Input(format!(
            "scoring needs at least 2 frames, got {}",
            clip.len()
        )));
    }
    let mut out = vec![0.0; clip.len()];
    for t in 1..clip.len() {
        let pred = predict(&clip[t - 1])?;
        out[t] = psnr(&clip[t], &pred)?;
    }
    out[0] = out[1];
    Ok(out)
}

/// PSNR series of a clip under the full predictor.
pub fn score_video(pipeline: &Pipeline, clip: &[Frame]) -> Result<Vec<f64>> {
    psnr_series(clip, |f| pipeline.predict_next(f))
}

/// Min-max normalization within one video. A constant series maps to 1.
pub fn normalize_scores(psnr: &[f64]) -> Result<Vec<f64>> {
    if psnr.is_empty() {
        return Err(VadError::Input("cannot normalize an empty series".into()));
    }
    if psnr.iter().any(|p| !p.is_finite()) {
        return Err(VadError::Input("non-finite PSNR value".into()));
    }
    let lo = psnr.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = psnr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![1.0; psnr.len()]);
    }
    Ok(psnr.iter().map(|p| ((p - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

pub fn anomaly_scores(ns: &[f64]) -> Result<Vec<f64>> {
    ns.iter()
        .enumerate()
        .map(|(t, &v)| {
            if (0.0..=1.0).contains(&v) {
                Ok(1.0 - v)
            } else {
                Err(VadError::Invariant(format!("normalized score {v} at frame {t} outside [0, 1]")))
            }
        })
        .collect()
}

/// A frame is abnormal when any pixel of its mask is nonzero.
pub fn frame_labels_from_pixel(masks: &[Array2<u8>], frame_count: usize) -> Result<Vec<u8>> {
    if masks.len() != frame_count {
        return Err(VadError::Input(format!(
            "{} masks for {frame_count} frames",
            masks.len()
        )));
    }
    Ok(masks.iter().map(|m| u8::from(m.iter().any(|&p| p != 0))).collect())
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted
/// half, via midranks of the sorted scores.
pub fn compute_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(VadError::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(VadError::Eval("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(VadError::Eval(format!(
            "AUC needs both classes; got {n_pos} positive and {n_neg} negative frames"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the group i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        pos_rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Concatenates per-video scores and labels in series order and computes
/// the global AUC.
pub fn global_auc(series: &[ScoreSeries]) -> Result<f64> {
    let scores: Vec<f64> = series.iter().flat_map(|s| s.score.iter().copied()).collect();
    let labels: Vec<u8> = series.iter().flat_map(|s| s.labels.iter().copied()).collect();
    compute_auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub series: Vec<ScoreSeries>,
    pub auc: f64,
    /// AUC of each video that contains both classes.
    pub per_video_auc: Vec<(String, Option<f64>)>,
}

impl EvalReport {
    pub fn from_series(series: Vec<ScoreSeries>) -> Result<Self> {
        let auc = global_auc(&series)?;
        let per_video_auc = series
            .iter()
            .map(|s| (s.video_id.clone(), compute_auc(&s.score, &s.labels).ok()))
            .collect();
        Ok(Self {
            series,
            auc,
            per_video_auc,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,frame_index,psnr_db,ns,score,label\n");
        for s in &self.series {
            for t in 0..s.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.video_id, t, s.psnr[t], s.ns[t], s.score[t], s.labels[t]
                );
            }
        }
        out
    }

    /// Mean score over abnormal frames minus mean over normal frames.
    pub fn score_gap(&self) -> f64 {
        let (mut pos, mut np, mut neg, mut nn) = (0.0, 0usize, 0.0, 0usize);
        for s in &self.series {
            for (sc, &l) in s.score.iter().zip(&s.labels) {
                if l != 0 {
                    pos += sc;
                    np += 1;
                } else {
                    neg += sc;
                    nn += 1;
                }
            }
        }
        pos / np.max(1) as f64 - neg / nn.max(1) as f64
    }

    pub fn summary(&self) -> String {
        let frames: usize = self.series.iter().map(ScoreSeries::len).sum();
        let mut out = format!(
            "videos: {}\nframes: {frames}\nglobal_auc: {:.6}\nscore_gap: {:.6}\n",
            self.series.len(),
            self.auc,
            self.score_gap()
        );
        for (id, auc) in &self.per_video_auc {
            match auc {
                Some(a) => {
                    let _ = writeln!(out, "auc[{id}]: {a:.6}");
                }
                None => {
                    let _ = writeln!(out, "auc[{id}]: n/a (single class)");
                }
            }
        }
        out
    }

    /// Writes `scores.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| VadError::io(dir, e))?;
        for (name, body) in [("scores.csv", self.to_csv()), ("summary.txt", self.summary())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| VadError::io(&p, e))?;
        }
        Ok(())
    }
}

/// Scores every test clip of `manifest` with `predict`. Videos run in
/// parallel and are merged in manifest order.
pub fn evaluate_with<F>(manifest: &DatasetManifest, size: usize, predict: F) -> Result<EvalReport>
where
    F: Fn(&Frame) -> Result<Frame> + Sync,
{
    let series = exec::map(&manifest.clips, |clip| -> Result<ScoreSeries> {
        let labels = load_labels(clip)?;
        let frames = load_clip_frames(clip, size)?;
        let psnr = psnr_series(&frames, &predict)?;
        ScoreSeries::from_psnr(clip.video_id.clone(), psnr, labels)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    EvalReport::from_series(series)
}

pub fn evaluate_dataset(pipeline: &Pipeline, manifest: &DatasetManifest, size: usize) -> Result<EvalReport> {
    evaluate_with(manifest, size, |f| pipeline.predict_next(f))
}

/// Patch-PSNR masks of every predicted frame of a clip (frames 1..T).
pub fn patch_masks(pipeline: &Pipeline, clip: &[Frame], patch: usize) -> Result<Vec<PatchMask>> {
    (1..clip.len())
        .map(|t| {
            let pred = pipeline.predict_next(&clip[t - 1])?;
            patch_psnr_mask(&clip[t], &pred, patch)
        })
        .collect()
}
