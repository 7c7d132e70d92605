//! Directory layout:
//!
//! ```text
//! <root>/<split>/<video_id>/<zero-padded index>.<png|jpg|tif|bmp>
//! <root>/flow/<video_id>/<index of frame t>.flo     flow from t to t+1
//! <root>/labels/<video_id>.txt                      one 0/1 per line
//! <root>/<split>/<video_id>_gt/<index>.<ext>        or pixel masks
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::media::{load_frame, Frame};
use crate::scoring::frame_labels_from_pixel;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn matches_dir(self, name: &str) -> bool {
        let n = name.to_ascii_lowercase();
        match self {
            Split::Train => n == "train" || n == "training",
            Split::Test => n == "test" || n == "testing",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    FramesOnly,
    FramesPlusFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "snake_case")]
pub enum LabelSource {
    Text(PathBuf),
    PixelMasks(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub video_id: String,
    pub frame_dir: PathBuf,
    /// File names inside `frame_dir`, in frame order.
    pub frames: Vec<String>,
    pub flow_dir: Option<PathBuf>,
    pub labels: Option<LabelSource>,
    pub frame_count: usize,
}

impl ClipEntry {
    pub fn frame_path(&self, t: usize) -> PathBuf {
        self.frame_dir.join(&self.frames[t])
    }

    /// Flow from frame t to t+1, named after frame t.
    pub fn flow_path(&self, t: usize) -> Option<PathBuf> {
        let stem = Path::new(&self.frames[t]).file_stem()?.to_string_lossy().into_owned();
        self.flow_dir.as_ref().map(|d| d.join(format!("{stem}.flo")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub split: Split,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.frame_count).sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| VadError::Data(format!("manifest encoding: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| VadError::Data(format!("manifest decoding: {e}")))
    }

    pub fn has_flow(&self) -> bool {
        self.clips.iter().all(|c| c.flow_dir.is_some())
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| VadError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| VadError::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Numbered image files of a directory, checked for contiguous indices.
fn list_indexed_images(dir: &Path) -> Result<Vec<String>> {
    let mut indexed = Vec::new();
    for path in read_dir_sorted(dir)? {
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !path.is_file() || !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let index: u64 = stem.parse().map_err(|_| {
            VadError::Data(format!("frame file {} has a non-numeric name", path.display()))
        })?;
        indexed.push((index, stem, path.file_name().unwrap().to_string_lossy().into_owned()));
    }
    indexed.sort();
    let Some(first) = indexed.first() else {
        return Err(VadError::Data(format!("no frames in {}", dir.display())));
    };
    let width = first.1.len();
    let start = first.0;
    for (k, (idx, _, _)) in indexed.iter().enumerate() {
        let expected = start + k as u64;
        if *idx != expected {
            return Err(VadError::Data(format!(
                "missing frame {:0width$} in {}",
                expected,
                dir.display()
            )));
        }
    }
    Ok(indexed.into_iter().map(|(_, _, name)| name).collect())
}

fn find_split_dir(root: &Path, split: Split) -> Result<PathBuf> {
    for path in read_dir_sorted(root)? {
        if path.is_dir() && split.matches_dir(&path.file_name().unwrap().to_string_lossy()) {
            return Ok(path);
        }
    }
    Err(VadError::Data(format!(
        "no {} directory under {}",
        split.as_str(),
        root.display()
    )))
}

/// Scans `<root>/<split>/` into a manifest, verifying frame indices are
/// contiguous, every image header is readable, flow files exist when the
/// layout asks for them and every test clip has labels.
pub fn build_manifest(root: &Path, split: Split, layout: Layout) -> Result<DatasetManifest> {
    let split_dir = find_split_dir(root, split)?;
    let mut clips = Vec::new();
    for dir in read_dir_sorted(&split_dir)? {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        if !dir.is_dir() || name.ends_with("_gt") {
            continue;
        }
        let frames = list_indexed_images(&dir)?;
        for f in &frames {
            let p = dir.join(f);
            image::image_dimensions(&p).map_err(|e| {
                VadError::Data(format!("unreadable image {}: {e}", p.display()))
            })?;
        }
        let flow_dir = root.join("flow").join(&name);
        let flow_dir = match layout {
            Layout::FramesOnly => flow_dir.is_dir().then_some(flow_dir),
            Layout::FramesPlusFlow => {
                if !flow_dir.is_dir() {
                    return Err(VadError::Data(format!(
                        "missing flow directory {} (run precompute-flow)",
                        flow_dir.display()
                    )));
                }
                Some(flow_dir)
            }
        };
        let labels = match split {
            Split::Train => None,
            Split::Test => {
                let text = root.join("labels").join(format!("{name}.txt"));
                let masks = split_dir.join(format!("{name}_gt"));
                if text.is_file() {
                    Some(LabelSource::Text(text))
                } else if masks.is_dir() {
                    Some(LabelSource::PixelMasks(masks))
                } else {
                    return Err(VadError::Data(format!(
                        "test clip {name} has no labels ({} or {})",
                        text.display(),
                        masks.display()
                    )));
                }
            }
        };
        let clip = ClipEntry {
            video_id: name,
            frame_dir: dir,
            frame_count: frames.len(),
            frames,
            flow_dir,
            labels,
        };
        if layout == Layout::FramesPlusFlow {
            for t in 0..clip.frame_count.saturating_sub(1) {
                let p = clip.flow_path(t).unwrap();
                if !p.is_file() {
                    return Err(VadError::Data(format!("missing flow file {}", p.display())));
                }
            }
        }
        clips.push(clip);
    }
    if clips.is_empty() {
        return Err(VadError::Data(format!("no clips under {}", split_dir.display())));
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let manifest = DatasetManifest {
        name,
        root: root.to_path_buf(),
        split,
        clips,
    };
    if split == Split::Test {
        for clip in &manifest.clips {
            load_labels(clip)?;
        }
    }
    Ok(manifest)
}

/// Per-frame 0/1 labels for a test clip.
pub fn load_labels(clip: &ClipEntry) -> Result<Vec<u8>> {
    let labels = match &clip.labels {
        None => {
            return Err(VadError::Data(format!("clip {} has no labels", clip.video_id)));
        }
        Some(LabelSource::Text(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| VadError::io(path, e))?;
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, tok)| match tok {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(VadError::Data(format!(
                        "{} line {}: expected 0 or 1, got {other:?}",
                        path.display(),
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
        }
        Some(LabelSource::PixelMasks(dir)) => {
            let files = list_indexed_images(dir)?;
            let masks = files
                .iter()
                .map(|f| {
                    let p = dir.join(f);
                    image::open(&p)
                        .map(|img| {
                            let g = img.to_luma8();
                            let (w, h) = g.dimensions();
                            ndarray::Array2::from_shape_vec((h as usize, w as usize), g.into_raw())
                                .expect("luma buffer matches dimensions")
                        })
                        .map_err(|e| VadError::Data(format!("unreadable mask {}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            frame_labels_from_pixel(&masks, clip.frame_count)?
        }
    };
    if labels.len() != clip.frame_count {
        return Err(VadError::Data(format!(
            "clip {} has {} labels for {} frames",
            clip.video_id,
            labels.len(),
            clip.frame_count
        )));
    }
    Ok(labels)
}

pub fn load_clip_frames(clip: &ClipEntry, size: usize) -> Result<Vec<Frame>> {
    (0..clip.frame_count)
        .map(|t| load_frame(&clip.frame_path(t), size))
        .collect()
}
