//! Learned weights for both networks, the checkpoint container and the
//! two-network pipeline.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! b"VADCKPT\0"  magic, 8 bytes
//! u32           container version
//! u64           header length in bytes
//! [u8]          UTF-8 JSON header: architecture, metadata, tensor table
//! [f64]         parameters, tensors back to back in table order
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::flow::FlowRgb;
use crate::frame_net::{self, FrameNetSpec};
use crate::media::Frame;
use crate::motion::{self, MotionNetSpec};
use crate::nn::{Tensor, UNet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VADCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "network", rename_all = "snake_case")]
pub enum Architecture {
    Motion(MotionNetSpec),
    Frame(FrameNetSpec),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Motion(_) => "motion",
            Architecture::Frame(_) => "frame",
        }
    }

    pub fn build(&self) -> Result<UNet> {
        match self {
            Architecture::Motion(spec) => UNet::new(spec.unet_spec()?),
            Architecture::Frame(spec) => UNet::new(spec.unet_spec()?),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: Option<String>,
    pub epoch: usize,
    pub seed: u64,
    pub loss: Option<f64>,
    /// Channel groups of the network input, in concatenation order.
    pub input_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

/// Parameters of one network together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    arch: Architecture,
    net: UNet,
    params: Vec<f64>,
    pub meta: TrainingMeta,
}

impl Weights {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let net = arch.build()?;
        let params = net.init_params(seed);
        let input_order = match &arch {
            Architecture::Motion(_) => vec!["frame_rgb".to_string()],
            Architecture::Frame(_) => vec!["frame_rgb".to_string(), "flow_rgb".to_string()],
        };
        Ok(Self {
            arch,
            net,
            params,
            meta: TrainingMeta {
                seed,
                input_order,
                ..Default::default()
            },
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        let net = arch.build()?;
        if params.len() != net.param_count() {
            return Err(VadError::Checkpoint(format!(
                "{} network needs {} parameters, got {}",
                arch.name(),
                net.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            net,
            params,
            meta,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn motion_spec(&self) -> Option<&MotionNetSpec> {
        match &self.arch {
            Architecture::Motion(s) => Some(s),
            _ => None,
        }
    }

    pub fn frame_spec(&self) -> Option<&FrameNetSpec> {
        match &self.arch {
            Architecture::Frame(s) => Some(s),
            _ => None,
        }
    }

    /// Inference forward pass with input validation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.net.check_input(x.c, x.h, x.w)?;
        Ok(self.net.forward(&self.params, x))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for layer in self.net.layers() {
            tensors.push(TensorEntry {
                name: format!("{}.weight", layer.name),
                shape: vec![layer.cout, layer.cin, layer.kernel, layer.kernel],
                offset: layer.weight_offset,
            });
            tensors.push(TensorEntry {
                name: format!("{}.bias", layer.name),
                shape: vec![layer.cout],
                offset: layer.bias_offset,
            });
        }
        let header = Header {
            architecture: self.arch.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| VadError::Checkpoint(format!("header encoding: {e}")))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            for v in &self.params[t.offset..t.offset + n] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(VadError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(VadError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(header_len))
            .ok_or_else(|| VadError::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)
            .map_err(|e| VadError::Checkpoint(format!("header decoding: {e}")))?;
        let net = header.architecture.build()?;
        let mut params = vec![0.0; net.param_count()];
        let mut filled = vec![false; net.param_count()];
        let mut at = 20 + header_len;
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset + n > params.len() {
                return Err(VadError::Checkpoint(format!(
                    "tensor {} does not fit the architecture",
                    t.name
                )));
            }
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| VadError::Checkpoint(format!("truncated tensor {}", t.name)))?;
            for (i, chunk) in raw.chunks_exact(8).enumerate() {
                params[t.offset + i] = f64::from_le_bytes(chunk.try_into().unwrap());
                filled[t.offset + i] = true;
            }
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(VadError::Checkpoint("trailing bytes after tensors".into()));
        }
        if filled.iter().any(|f| !f) {
            return Err(VadError::Checkpoint("checkpoint is missing parameters".into()));
        }
        Weights::from_params(header.architecture, params, header.meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| VadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VadError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            VadError::Checkpoint(m) => VadError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// The full predictor `frame ↦ next frame`: motion network (when flow
/// guidance is on) feeding the frame network.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub motion: Option<Weights>,
    pub frame: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PipelineManifest {
    version: u32,
    frame: PathBuf,
    motion: Option<PathBuf>,
}

pub const PIPELINE_MANIFEST: &str = "pipeline.toml";

impl Pipeline {
    pub fn new(motion: Option<Weights>, frame: Weights) -> Result<Self> {
        if frame.frame_spec().is_none() {
            return Err(VadError::Checkpoint("frame slot holds a motion network".into()));
        }
        if let Some(m) = &motion {
            if m.motion_spec().is_none() {
                return Err(VadError::Checkpoint("motion slot holds a frame network".into()));
            }
        }
        Ok(Self { motion, frame })
    }

    pub fn uses_flow(&self) -> bool {
        self.motion.is_some()
    }

    /// Flow guidance for `frame`: the motion network's prediction, or the
    /// blank substitute when flow guidance is off.
    pub fn guidance(&self, frame: &Frame) -> Result<FlowRgb> {
        match &self.motion {
            Some(m) => motion::predict_flow(m, frame),
            None => Ok(FlowRgb::blank(frame.height(), frame.width())),
        }
    }

    pub fn predict_next(&self, frame: &Frame) -> Result<Frame> {
        let flow = self.guidance(frame)?;
        frame_net::predict_frame(&self.frame, frame, &flow)
    }

    /// Writes both checkpoints and a manifest linking them into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| VadError::io(dir, e))?;
        self.frame.save(&dir.join("frame.ckpt"))?;
        let motion = match &self.motion {
            Some(m) => {
                m.save(&dir.join("motion.ckpt"))?;
                Some(PathBuf::from("motion.ckpt"))
            }
            None => None,
        };
        let manifest = PipelineManifest {
            version: CHECKPOINT_VERSION,
            frame: PathBuf::from("frame.ckpt"),
            motion,
        };
        let path = dir.join(PIPELINE_MANIFEST);
        let text = toml::to_string(&manifest)
            .map_err(|e| VadError::Checkpoint(format!("manifest encoding: {e}")))?;
        std::fs::write(&path, text).map_err(|e| VadError::io(&path, e))?;
        Ok(path)
    }

    /// Loads from a manifest file or a directory containing one.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() {
            path.join(PIPELINE_MANIFEST)
        } else {
            path.to_path_buf()
        };
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| VadError::io(&manifest_path, e))?;
        let manifest: PipelineManifest = toml::from_str(&text)
            .map_err(|e| VadError::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let frame = Weights::load(&base.join(&manifest.frame))?;
        let motion = manifest
            .motion
            .map(|p| Weights::load(&base.join(p)))
            .transpose()?;
        Pipeline::new(motion, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_motion() -> Architecture {
        Architecture::Motion(MotionNetSpec {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        })
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut w = Weights::init(tiny_motion(), 5).unwrap();
        w.meta.epoch = 3;
        w.meta.loss = Some(0.25);
        let bytes = w.to_bytes().unwrap();
        let back = Weights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let w = Weights::init(tiny_motion(), 5).unwrap();
        let bytes = w.to_bytes().unwrap();
        assert!(Weights::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Weights::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Weights::from_bytes(&extra).is_err());
    }

    #[test]
    fn pipeline_roundtrip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Weights::init(
            Architecture::Frame(FrameNetSpec {
                levels: 2,
                base_channels: 4,
                ..Default::default()
            }),
            1,
        )
        .unwrap();
        let p = Pipeline::new(Some(Weights::init(tiny_motion(), 2).unwrap()), frame.clone()).unwrap();
        let manifest = p.save(dir.path()).unwrap();
        assert_eq!(Pipeline::load(&manifest).unwrap(), p);
        assert!(Pipeline::new(None, Weights::init(tiny_motion(), 0).unwrap()).is_err());

        let no_flow = Pipeline::new(None, frame).unwrap();
        let d2 = tempfile::tempdir().unwrap();
        no_flow.save(d2.path()).unwrap();
        assert!(!Pipeline::load(d2.path()).unwrap().uses_flow());
    }
}
