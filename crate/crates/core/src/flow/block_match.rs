use ndarray::Array3;

use super::FlowField;
use crate::error::{Result, VadError};
use crate::exec;
use crate::media::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatchParams {
    pub block: usize,
    pub radius: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            block: 8,
            radius: 4,
        }
    }
}

/// Exhaustive block matching from `frame_a` to `frame_b`.
///
/// Each `block`×`block` tile of `frame_a` (edge tiles may be smaller) is
/// compared against `frame_b` at every displacement in
/// `[-radius, radius]²`. The cost is the SSD averaged over the part of the
/// displaced tile that lands inside `frame_b`; displacements leaving less
/// than a quarter of the tile inside are skipped, which still admits every
/// displacement of a full tile when `radius <= block / 2`. Ties go to the smallest
/// magnitude, then the lexicographically smallest (u, v). The result is
/// constant over each tile.
pub fn block_match_flow(a: &Frame, b: &Frame, params: BlockMatchParams) -> Result<FlowField> {
    let BlockMatchParams { block, radius } = params;
    if !a.same_shape(b) {
        return Err(VadError::Input("block matching needs equal-size frames".into()));
    }
    let (h, w) = (a.height(), a.width());
    if block == 0 || block > h || block > w {
        return Err(VadError::Input(format!(
            "block size {block} does not fit a {h}×{w} frame"
        )));
    }
    let rows = h.div_ceil(block);
    let cols = w.div_ceil(block);
    let r = radius as i64;
    let pa = a.pixels();
    let pb = b.pixels();

    let best: Vec<(i64, i64)> = exec::map_range(rows * cols, |idx| {
        let (by, bx) = (idx / cols * block, idx % cols * block);
        let (ey, ex) = ((by + block).min(h), (bx + block).min(w));
        let area = ((ey - by) * (ex - bx)) as i64;
        // (cost, magnitude², u, v)
        let mut best: Option<(f64, i64, i64, i64)> = None;
        for v in -r..=r {
            for u in -r..=r {
                let mut sum = 0.0;
                let mut count = 0i64;
                for y in by..ey {
                    let ty = y as i64 + v;
                    if ty < 0 || ty >= h as i64 {
                        continue;
                    }
                    for x in bx..ex {
                        let tx = x as i64 + u;
                        if tx < 0 || tx >= w as i64 {
                            continue;
                        }
                        for c in 0..3 {
                            let d = pa[[y, x, c]] - pb[[ty as usize, tx as usize, c]];
                            sum += d * d;
                        }
                        count += 1;
                    }
                }
                if 4 * count < area {
                    continue;
                }
                let key = (sum / count as f64, u * u + v * v, u, v);
                let better = match best {
                    None => true,
                    Some(cur) => {
                        key.0 < cur.0
                            || (key.0 == cur.0 && (key.1, key.2, key.3) < (cur.1, cur.2, cur.3))
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (_, _, u, v) = best.expect("zero displacement always qualifies");
        (u, v)
    });

    let mut uv = Array3::<f32>::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            let (u, v) = best[(y / block) * cols + x / block];
            uv[[y, x, 0]] = u as f32;
            uv[[y, x, 1]] = v as f32;
        }
    }
    FlowField::new(uv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn textured(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Frame::new(Array3::from_shape_fn((h, w, 3), |_| rng.random::<f64>())).unwrap()
    }

    /// frame_b(x) = frame_a(x - d), content wraps around.
    fn circular_shift(f: &Frame, du: i64, dv: i64) -> Frame {
        let (h, w) = (f.height() as i64, f.width() as i64);
        let p = f.pixels();
        Frame::new(Array3::from_shape_fn(p.dim(), |(y, x, c)| {
            let sy = (y as i64 - dv).rem_euclid(h) as usize;
            let sx = (x as i64 - du).rem_euclid(w) as usize;
            p[[sy, sx, c]]
        }))
        .unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = textured(32, 32, 1);
        let f = block_match_flow(&a, &a, BlockMatchParams::default()).unwrap();
        assert!(f.uv().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn circular_shift_is_recovered() {
        let a = textured(64, 64, 2);
        let b = circular_shift(&a, 2, 0);
        let f = block_match_flow(&a, &b, BlockMatchParams::default()).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(f.at(y, x), (2.0, 0.0));
            }
        }
    }

    #[test]
    fn flat_frames_tie_to_zero() {
        let a = Frame::filled(24, 24, 0.4);
        let f = block_match_flow(&a, &a, BlockMatchParams::default()).unwrap();
        assert!(f.uv().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_larger_than_frame_is_an_error() {
        let a = Frame::filled(4, 4, 0.0);
        assert!(block_match_flow(&a, &a, BlockMatchParams { block: 8, radius: 1 }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn global_translation_recovered(du in -4i64..=4, dv in -4i64..=4, seed in any::<u64>()) {
            let a = textured(32, 40, seed);
            let b = circular_shift(&a, du, dv);
            let f = block_match_flow(&a, &b, BlockMatchParams::default()).unwrap();
            prop_assert!(f.uv().outer_iter().all(|row| row.outer_iter().all(|p| p[0] == du as f32 && p[1] == dv as f32)));
        }
    }
}
