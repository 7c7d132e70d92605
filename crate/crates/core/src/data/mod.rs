//! Dataset ingestion and the synthetic moving-sprites benchmark.

mod manifest;
mod pairs;
mod precompute;
mod synth;

pub use manifest::{
    build_manifest, load_clip_frames, load_labels, ClipEntry, DatasetManifest, LabelSource, Layout, Split,
};
pub use pairs::{load_flow_pairs, load_frame_pairs, FlowSample, FrameSample, PairMode};
pub use precompute::{precompute_flow, FlowSource};
pub use synth::{
    gen_synthetic, render_clip, AnomalyMode, AnomalyWindow, RenderedClip, Shape, SpriteColoring, SyntheticSceneConfig,
    SyntheticSummary, WindowSpec,
};
