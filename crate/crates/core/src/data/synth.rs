//! Synthetic moving-sprites benchmark.
//!
//! Each clip is a static textured background with a few textured sprites
//! moving at constant integer velocities on a wrap-around canvas. Every
//! normal shape has its own velocity, so appearance determines motion.
//! Test clips carry one anomaly window in which a sprite either turns into
//! a shape never seen in training, reverses its velocity, or speeds up.
//! Ground-truth flow is written analytically.

use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::flow::{write_flo_file, FlowField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disk,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Disk, Shape::Triangle];

    fn color(self) -> [f64; 3] {
        match self {
            Shape::Square => [0.9, 0.3, 0.2],
            Shape::Disk => [0.2, 0.4, 0.9],
            Shape::Triangle => [0.3, 0.85, 0.3],
        }
    }

    fn contains(self, x: usize, y: usize, size: usize) -> bool {
        let c = (size as f64 - 1.0) / 2.0;
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        match self {
            Shape::Square => true,
            Shape::Disk => dx * dx + dy * dy <= (size as f64 / 2.0).powi(2),
            Shape::Triangle => dx.abs() <= (y as f64 + 1.0) / 2.0,
        }
    }
}

/// How sprites get their base color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteColoring {
    /// One fixed color per shape; color alone reveals the motion class.
    #[default]
    ByShape,
    /// Each sprite draws a color from a palette, so only the outline
    /// reveals the motion class.
    Random,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.3, 0.2],
    [0.2, 0.4, 0.9],
    [0.3, 0.85, 0.3],
    [0.95, 0.85, 0.2],
    [0.8, 0.3, 0.85],
    [0.2, 0.85, 0.85],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyMode {
    NovelShape,
    ReversedVelocity,
    Speed,
}

/// Inclusive frame range `[start, end]` of an anomaly: the frames whose
/// prediction from the previous frame crosses an abnormal event. Velocity
/// anomalies govern the displacements into frames `start..=end`. A novel
/// shape is drawn on frames `start..end` and morphs back on frame `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub mode: AnomalyMode,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub video_id: String,
    pub mode: AnomalyMode,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub canvas: usize,
    pub sprite_size: usize,
    /// Shapes seen in training; `normal_velocities[i]` belongs to `normal_shapes[i]`.
    pub normal_shapes: Vec<Shape>,
    pub normal_velocities: Vec<[i32; 2]>,
    pub anomaly_modes: Vec<AnomalyMode>,
    pub speed_factor: i32,
    pub clip_length: usize,
    pub sprites_per_clip: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    /// Explicit windows for test clips (clip i uses entry i mod len);
    /// random windows when empty.
    pub test_windows: Vec<WindowSpec>,
    pub sprite_coloring: SpriteColoring,
    pub background_contrast: f64,
    pub sprite_contrast: f64,
    /// Standard deviation of per-frame pixel noise, in [0, 1] units.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            canvas: 256,
            sprite_size: 48,
            normal_shapes: vec![Shape::Square, Shape::Disk],
            normal_velocities: vec![[6, 0], [0, 6]],
            anomaly_modes: vec![
                AnomalyMode::NovelShape,
                AnomalyMode::ReversedVelocity,
                AnomalyMode::Speed,
            ],
            speed_factor: 2,
            clip_length: 90,
            sprites_per_clip: 2,
            train_clips: 8,
            test_clips: 6,
            test_windows: Vec::new(),
            sprite_coloring: SpriteColoring::ByShape,
            background_contrast: 0.3,
            sprite_contrast: 0.3,
            noise_level: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    fn novel_shape(&self) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| !self.normal_shapes.contains(s))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(VadError::Config(m));
        if self.canvas < 8 {
            return err(format!("canvas {} is too small", self.canvas));
        }
        if self.sprite_size < 3 || 2 * self.sprite_size > self.canvas {
            return err(format!(
                "sprite size {} must lie in [3, canvas/2]",
                self.sprite_size
            ));
        }
        if self.normal_shapes.is_empty() || self.normal_shapes.len() != self.normal_velocities.len() {
            return err("each normal shape needs exactly one velocity".into());
        }
        for (i, s) in self.normal_shapes.iter().enumerate() {
            if self.normal_shapes[..i].contains(s) {
                return err(format!("normal shape {s:?} listed twice"));
            }
        }
        if self.speed_factor < 2 {
            return err(format!("speed factor {} must be at least 2", self.speed_factor));
        }
        let factor = if self.anomaly_modes.contains(&AnomalyMode::Speed) {
            self.speed_factor
        } else {
            1
        };
        let limit = (self.canvas / 2) as i32;
        for v in &self.normal_velocities {
            let step = v[0].abs().max(v[1].abs()) * factor;
            if step >= limit {
                return err(format!(
                    "velocity {v:?} (×{factor}) crosses half the canvas per frame; motion would alias on the wrap-around canvas"
                ));
            }
        }
        if self.clip_length < 2 {
            return err("clips need at least 2 frames".into());
        }
        if self.sprites_per_clip == 0 {
            return err("clips need at least one sprite".into());
        }
        if self.test_clips > 0 {
            if self.anomaly_modes.is_empty() && self.test_windows.is_empty() {
                return err("test clips need at least one anomaly mode".into());
            }
            if self.clip_length < 4 {
                return err("test clips need at least 4 frames".into());
            }
        }
        let modes = self
            .anomaly_modes
            .iter()
            .chain(self.test_windows.iter().map(|w| &w.mode));
        for m in modes {
            if *m == AnomalyMode::NovelShape && self.novel_shape().is_none() {
                return err("novel-shape anomalies need a shape outside the normal set".into());
            }
        }
        for w in &self.test_windows {
            if w.start == 0 || w.start > w.end || w.end >= self.clip_length {
                return err(format!(
                    "window [{}, {}] must satisfy 1 ≤ start ≤ end < clip length",
                    w.start, w.end
                ));
            }
            if w.mode == AnomalyMode::NovelShape && w.start == w.end {
                return err(format!("novel-shape window [{}, {}] needs at least 2 frames", w.start, w.end));
            }
        }
        if !(0.0..=1.0).contains(&self.background_contrast) || !(0.0..=1.0).contains(&self.sprite_contrast) {
            return err("contrasts must lie in [0, 1]".into());
        }
        if !(self.noise_level >= 0.0) {
            return err("noise level must be nonnegative".into());
        }
        Ok(())
    }
}

/// Smooth random field in [0, 1]: random lattice values every `cell`
/// pixels, smoothstep-interpolated.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid = Array2::from_shape_fn((gh, gw), |_| rng.random::<f64>());
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (fy, fx) = (y as f64 / cell as f64, x as f64 / cell as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (smooth(fy - y0 as f64), smooth(fx - x0 as f64));
        let top = grid[[y0, x0]] * (1.0 - tx) + grid[[y0, x0 + 1]] * tx;
        let bot = grid[[y0 + 1, x0]] * (1.0 - tx) + grid[[y0 + 1, x0 + 1]] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

struct Sprite {
    class: usize,
    x: i64,
    y: i64,
    /// Base color under `SpriteColoring::Random`.
    color: Option<[f64; 3]>,
    /// Per-pixel brightness multiplier, size×size.
    texture: Array2<f64>,
}

/// Frames, analytic flows (one per consecutive pair) and labels of one clip.
#[derive(Debug, Clone)]
pub struct RenderedClip {
    pub frames: Vec<RgbImage>,
    pub flows: Vec<FlowField>,
    pub labels: Vec<u8>,
}

fn texture(size: usize, contrast: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let smooth = value_noise(size, size, 3, rng);
    Array2::from_shape_fn((size, size), |(y, x)| {
        let n = 0.5 * smooth[[y, x]] + 0.5 * rng.random::<f64>();
        1.0 - contrast * n
    })
}

fn background(cfg: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let c = cfg.canvas;
    let tint: [f64; 3] = [rng.random_range(0.4..0.6), rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)];
    let fields: Vec<Array2<f64>> = (0..3).map(|_| value_noise(c, c, 4, rng)).collect();
    Array3::from_shape_fn((c, c, 3), |(y, x, ch)| {
        (tint[ch] + cfg.background_contrast * (fields[ch][[y, x]] - 0.5)).clamp(0.0, 1.0)
    })
}

/// Renders one clip from its own seed. `window` marks the anomaly, if any.
pub fn render_clip(cfg: &SyntheticSceneConfig, clip_seed: u64, window: Option<WindowSpec>) -> Result<RenderedClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    let c = cfg.canvas as i64;
    let size = cfg.sprite_size;
    let bg = background(cfg, &mut rng);
    let n_classes = cfg.normal_shapes.len();
    let class_offset = rng.random_range(0..n_classes);
    let mut sprites: Vec<Sprite> = (0..cfg.sprites_per_clip)
        .map(|j| Sprite {
            class: (j + class_offset) % n_classes,
            x: rng.random_range(0..c),
            y: rng.random_range(0..c),
            color: match cfg.sprite_coloring {
                SpriteColoring::ByShape => None,
                SpriteColoring::Random => Some(PALETTE[rng.random_range(0..PALETTE.len())]),
            },
            texture: texture(size, cfg.sprite_contrast, &mut rng),
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_level.max(1e-12))
        .map_err(|e| VadError::Config(format!("noise level: {e}")))?;
    let novel = cfg.novel_shape();

    let t_len = cfg.clip_length;
    let mut frames = Vec::with_capacity(t_len);
    let mut flows = Vec::with_capacity(t_len - 1);
    let mut labels = vec![0u8; t_len];
    if let Some(w) = window {
        for l in &mut labels[w.start..=w.end] {
            *l = 1;
        }
    }

    let shape_at = |j: usize, class: usize, t: usize| -> Shape {
        match window {
            Some(w) if j == 0 && w.mode == AnomalyMode::NovelShape && (w.start..w.end).contains(&t) => {
                novel.expect("validated")
            }
            _ => cfg.normal_shapes[class],
        }
    };
    // displacement from frame t to t+1
    let velocity_at = |j: usize, class: usize, t: usize| -> [i64; 2] {
        let v = cfg.normal_velocities[class];
        let v = [v[0] as i64, v[1] as i64];
        match window {
            Some(w) if j == 0 && t + 1 >= w.start && t < w.end => match w.mode {
                AnomalyMode::ReversedVelocity => [-v[0], -v[1]],
                AnomalyMode::Speed => [v[0] * cfg.speed_factor as i64, v[1] * cfg.speed_factor as i64],
                AnomalyMode::NovelShape => v,
            },
            _ => v,
        }
    };

    for t in 0..t_len {
        let mut img = bg.clone();
        let mut uv = Array3::<f32>::zeros((cfg.canvas, cfg.canvas, 2));
        for (j, s) in sprites.iter().enumerate() {
            let shape = shape_at(j, s.class, t);
            let color = s.color.unwrap_or(shape.color());
            let vel = velocity_at(j, s.class, t);
            for sy in 0..size {
                for sx in 0..size {
                    if !shape.contains(sx, sy, size) {
                        continue;
                    }
                    let py = (s.y + sy as i64).rem_euclid(c) as usize;
                    let px = (s.x + sx as i64).rem_euclid(c) as usize;
                    for ch in 0..3 {
                        img[[py, px, ch]] = color[ch] * s.texture[[sy, sx]];
                    }
                    uv[[py, px, 0]] = vel[0] as f32;
                    uv[[py, px, 1]] = vel[1] as f32;
                }
            }
        }
        let frame = RgbImage::from_fn(cfg.canvas as u32, cfg.canvas as u32, |x, y| {
            let mut px = [0u8; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                let mut v = img[[y as usize, x as usize, ch]];
                if cfg.noise_level > 0.0 {
                    v += noise.sample(&mut rng);
                }
                *p = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image::Rgb(px)
        });
        frames.push(frame);
        if t + 1 < t_len {
            flows.push(FlowField::new(uv)?);
            for (j, s) in sprites.iter_mut().enumerate() {
                let v = velocity_at(j, s.class, t);
                s.x = (s.x + v[0]).rem_euclid(c);
                s.y = (s.y + v[1]).rem_euclid(c);
            }
        }
    }
    Ok(RenderedClip { frames, flows, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub root: PathBuf,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub windows: Vec<AnomalyWindow>,
}

#[derive(Serialize)]
struct WindowsFile<'a> {
    windows: &'a [AnomalyWindow],
}

fn write_clip(root: &Path, split: &str, id: &str, clip: &RenderedClip, with_labels: bool) -> Result<()> {
    let frame_dir = root.join(split).join(id);
    let flow_dir = root.join("flow").join(id);
    for d in [&frame_dir, &flow_dir] {
        std::fs::create_dir_all(d).map_err(|e| VadError::io(d, e))?;
    }
    for (t, f) in clip.frames.iter().enumerate() {
        let p = frame_dir.join(format!("{t:04}.png"));
        f.save(&p).map_err(|source| VadError::Image { path: p, source })?;
    }
    for (t, f) in clip.flows.iter().enumerate() {
        write_flo_file(&flow_dir.join(format!("{t:04}.flo")), f)?;
    }
    if with_labels {
        let dir = root.join("labels");
        std::fs::create_dir_all(&dir).map_err(|e| VadError::io(&dir, e))?;
        let text: String = clip.labels.iter().map(|l| format!("{l}\n")).collect();
        let p = dir.join(format!("{id}.txt"));
        std::fs::write(&p, text).map_err(|e| VadError::io(&p, e))?;
    }
    Ok(())
}

/// Writes the benchmark under `out`: frames, analytic `.flo` files for
/// every clip, labels and anomaly windows for test clips, and the config.
pub fn gen_synthetic(cfg: &SyntheticSceneConfig, out: &Path) -> Result<SyntheticSummary> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_seeds: Vec<u64> = (0..cfg.train_clips).map(|_| master.random()).collect();
    let test_seeds: Vec<(u64, u64)> = (0..cfg.test_clips).map(|_| (master.random(), master.random())).collect();

    let mut summary = SyntheticSummary {
        root: out.to_path_buf(),
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        windows: Vec::new(),
    };
    for (i, seed) in train_seeds.iter().enumerate() {
        let id = format!("train_{i:03}");
        let clip = render_clip(cfg, *seed, None)?;
        write_clip(out, "train", &id, &clip, false)?;
        summary.train_ids.push(id);
    }
    let t_len = cfg.clip_length;
    for (i, (seed, window_seed)) in test_seeds.iter().enumerate() {
        let id = format!("test_{i:03}");
        let window = if cfg.test_windows.is_empty() {
            let mut r = ChaCha8Rng::seed_from_u64(*window_seed);
            let mode = cfg.anomaly_modes[i % cfg.anomaly_modes.len()];
            let start = r.random_range((t_len / 4).max(1)..=(t_len / 2).max(1));
            let end = (start + (t_len / 3).max(1)).min(t_len - 1);
            WindowSpec { mode, start, end }
        } else {
            cfg.test_windows[i % cfg.test_windows.len()]
        };
        let clip = render_clip(cfg, *seed, Some(window))?;
        write_clip(out, "test", &id, &clip, true)?;
        summary.windows.push(AnomalyWindow {
            video_id: id.clone(),
            mode: window.mode,
            start: window.start,
            end: window.end,
        });
        summary.test_ids.push(id);
    }
    let windows = toml::to_string(&WindowsFile {
        windows: &summary.windows,
    })
    .map_err(|e| VadError::Data(format!("windows encoding: {e}")))?;
    let p = out.join("windows.toml");
    std::fs::write(&p, windows).map_err(|e| VadError::io(&p, e))?;
    let config = toml::to_string(cfg).map_err(|e| VadError::Data(format!("config encoding: {e}")))?;
    let p = out.join("synthetic.toml");
    std::fs::write(&p, config).map_err(|e| VadError::io(&p, e))?;
    Ok(summary)
}
