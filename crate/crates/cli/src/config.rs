use std::path::Path;

use anyhow::{bail, Context};
use vad_core::experiment::BenchmarkConfig;
use vad_core::training::TrainConfig;

use crate::{Common, TrainFlags};

/// Frame-stage learning rate used when the dataset looks like UCSD Ped2
/// and no `--lr` is given.
pub const PED2_FRAME_LR: f64 = 2e-5;

/// Config file contents, or defaults when no file is given.
pub fn load(common: &Common) -> anyhow::Result<BenchmarkConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => BenchmarkConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.synthetic.seed = seed;
    }
    Ok(cfg)
}

pub fn apply_train_flags(cfg: &mut BenchmarkConfig, flags: &TrainFlags) {
    let t: &mut TrainConfig = &mut cfg.train;
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.lr {
        t.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = flags.alpha {
        t.alpha = v;
    }
    if let Some(v) = flags.lambda {
        t.lambda = v;
    }
    if let Some(v) = flags.frame_size {
        cfg.frame_size = v;
    }
}

pub fn looks_like_ped2(dataset: &Path) -> bool {
    dataset
        .components()
        .any(|c| c.as_os_str().to_string_lossy().to_ascii_lowercase().contains("ped2"))
}

pub fn require_dir(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

pub fn require_exists(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn create_out(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn flags_override_file() {
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("run.toml");
        std::fs::write(&path, "frame_size = 24\n[train]\nlearning_rate = 0.001\nbatch_size = 8\n").unwrap();
        let common = Common {
            seed: Some(5),
            config: Some(path),
        };
        let mut cfg = load(&common).unwrap();
        assert_eq!(cfg.frame_size, 24);
        assert_eq!(cfg.train.batch_size, 8);
        apply_train_flags(
            &mut cfg,
            &TrainFlags {
                lr: Some(0.5),
                ..Default::default()
            },
        );
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!((cfg.train.seed, cfg.synthetic.seed), (5, 5));
    }

    #[test]
    fn ped2_detection() {
        assert!(looks_like_ped2(&PathBuf::from("/data/UCSDped2")));
        assert!(!looks_like_ped2(&PathBuf::from("/data/avenue")));
    }
}
