use std::path::{Path, PathBuf};

use crate::data::manifest::{ClipEntry, DatasetManifest};
use crate::error::{Result, VadError};
use crate::exec;
use crate::flow::{block_match_flow, read_flo_file, write_flo_file, BlockMatchParams};
use crate::media::load_frame_native;

/// Where flow for the `<root>/flow/` tree comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSource {
    /// Block matching between consecutive frames at native resolution.
    BlockMatch(BlockMatchParams),
    /// Existing `.flo` files laid out as `<dir>/<video_id>/<frame stem>.flo`.
    Import(PathBuf),
}

/// Fills `<flow_root>/<video_id>/` with one `.flo` per consecutive frame
/// pair of every clip and returns the number of files written. The layout
/// the manifest scanner expects is `flow_root = <dataset root>/flow`.
pub fn precompute_flow(manifest: &DatasetManifest, source: &FlowSource, flow_root: &Path) -> Result<usize> {
    let mut jobs: Vec<(&ClipEntry, usize, PathBuf)> = Vec::new();
    for clip in &manifest.clips {
        let dir = flow_root.join(&clip.video_id);
        std::fs::create_dir_all(&dir).map_err(|e| VadError::io(&dir, e))?;
        for t in 0..clip.frame_count.saturating_sub(1) {
            jobs.push((clip, t, dir.join(flo_name(clip, t))));
        }
    }
    let results = exec::map(&jobs, |(clip, t, dest)| match source {
        FlowSource::BlockMatch(params) => {
            let a = load_frame_native(&clip.frame_path(*t))?;
            let b = load_frame_native(&clip.frame_path(*t + 1))?;
            write_flo_file(dest, &block_match_flow(&a, &b, *params)?)
        }
        FlowSource::Import(dir) => import_one(&dir.join(&clip.video_id).join(flo_name(clip, *t)), dest),
    });
    for r in results {
        r?;
    }
    log::info!("wrote {} flow files under {}", jobs.len(), flow_root.display());
    Ok(jobs.len())
}

fn flo_name(clip: &ClipEntry, t: usize) -> String {
    let stem = Path::new(&clip.frames[t]).file_stem().unwrap_or_default().to_string_lossy();
    format!("{stem}.flo")
}

fn import_one(src: &Path, dest: &Path) -> Result<()> {
    if !src.is_file() {
        return Err(VadError::Data(format!("missing external flow file {}", src.display())));
    }
    read_flo_file(src)?;
    std::fs::copy(src, dest).map_err(|e| VadError::io(dest, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_manifest, Layout, Split};
    use crate::flow::{write_flo_file, FlowField};
    use image::RgbImage;

    fn textured_clip(root: &Path, id: &str, n: usize, shift: u32) {
        let dir = root.join("train").join(id);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n as u32 {
            RgbImage::from_fn(24, 24, |x, y| {
                let xs = x + 40 - i * shift;
                let v = ((xs * 37 + y * 91) % 97 * 255 / 96) as u8;
                image::Rgb([v, v / 2, 255 - v])
            })
            .save(dir.join(format!("{i:03}.png")))
            .unwrap();
        }
    }

    #[test]
    fn block_match_fills_flow_tree() {
        let d = tempfile::tempdir().unwrap();
        textured_clip(d.path(), "a", 4, 2);
        let m = build_manifest(d.path(), Split::Train, Layout::FramesOnly).unwrap();
        let n = precompute_flow(&m, &FlowSource::BlockMatch(BlockMatchParams::default()), &d.path().join("flow")).unwrap();
        assert_eq!(n, 3);
        let m = build_manifest(d.path(), Split::Train, Layout::FramesPlusFlow).unwrap();
        let f = read_flo_file(&m.clips[0].flow_path(1).unwrap()).unwrap();
        assert_eq!((f.width(), f.height()), (24, 24));
        assert_eq!(f.at(8, 8), (2.0, 0.0));
    }

    #[test]
    fn import_copies_and_reports_missing_files() {
        let d = tempfile::tempdir().unwrap();
        textured_clip(d.path(), "a", 3, 1);
        let ext = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(ext.path().join("a")).unwrap();
        let flow = FlowField::constant(24, 24, 1.5, -0.25);
        write_flo_file(&ext.path().join("a").join("000.flo"), &flow).unwrap();
        let m = build_manifest(d.path(), Split::Train, Layout::FramesOnly).unwrap();
        let err = precompute_flow(&m, &FlowSource::Import(ext.path().to_path_buf()), &d.path().join("flow")).unwrap_err();
        assert!(err.to_string().contains("001.flo"));
        write_flo_file(&ext.path().join("a").join("001.flo"), &flow).unwrap();
        assert_eq!(precompute_flow(&m, &FlowSource::Import(ext.path().to_path_buf()), &d.path().join("flow")).unwrap(), 2);
        let copied = read_flo_file(&d.path().join("flow/a/001.flo")).unwrap();
        assert_eq!(copied, flow);
    }
}
