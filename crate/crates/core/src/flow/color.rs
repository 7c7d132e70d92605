//! Middlebury color-wheel encoding.

use ndarray::Array3;

use super::{FlowField, FlowRgb};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const COLORWHEEL_LEN: usize = RY + YG + GC + CB + BM + MR;

fn colorwheel() -> [[f64; 3]; COLORWHEEL_LEN] {
    let mut wheel = [[0.0; 3]; COLORWHEEL_LEN];
    let mut k = 0;
    let mut segment = |n: usize, f: &dyn Fn(f64) -> [f64; 3]| {
        for i in 0..n {
            let t = (255.0 * i as f64 / n as f64).floor();
            wheel[k] = f(t);
            k += 1;
        }
    };
    segment(RY, &|t| [255.0, t, 0.0]);
    segment(YG, &|t| [255.0 - t, 255.0, 0.0]);
    segment(GC, &|t| [0.0, 255.0, t]);
    segment(CB, &|t| [0.0, 255.0 - t, 255.0]);
    segment(BM, &|t| [t, 0.0, 255.0]);
    segment(MR, &|t| [255.0, 0.0, 255.0 - t]);
    for c in wheel.iter_mut() {
        for v in c.iter_mut() {
            *v /= 255.0;
        }
    }
    wheel
}

/// Fully saturated wheel color for a flow direction.
pub fn wheel_color(u: f64, v: f64) -> [f64; 3] {
    let wheel = colorwheel();
    interpolate(&wheel, u, v)
}

fn interpolate(wheel: &[[f64; 3]; COLORWHEEL_LEN], u: f64, v: f64) -> [f64; 3] {
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (COLORWHEEL_LEN - 1) as f64;
    let k0 = (fk.floor() as usize).min(COLORWHEEL_LEN - 1);
    let k1 = (k0 + 1) % COLORWHEEL_LEN;
    let f = fk - k0 as f64;
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
    }
    out
}

/// Encodes flow with hue from direction and saturation from
/// magnitude / max magnitude, the max being the field's own maximum
/// floored at 1.0. Zero flow maps to white.
pub fn flow_to_rgb(flow: &FlowField) -> FlowRgb {
    let wheel = colorwheel();
    let max_mag = flow.max_magnitude().max(1.0);
    let (h, w) = (flow.height(), flow.width());
    let mut pixels = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            let (u, v) = (u as f64, v as f64);
            let rad = (u.hypot(v) / max_mag).min(1.0);
            let col = interpolate(&wheel, u, v);
            for c in 0..3 {
                pixels[[y, x, c]] = (1.0 - rad * (1.0 - col[c])).clamp(0.0, 1.0);
            }
        }
    }
    FlowRgb {
        pixels,
        max_magnitude: max_mag,
    }
}

/// Recovers the flow direction (radians, atan2(v, u) convention) encoded by
/// an RGB value, or `None` for white. Works for any saturation since
/// `1 - rgb` is proportional to `1 - wheel color`.
pub fn decode_hue_angle(rgb: [f64; 3]) -> Option<f64> {
    let d = [1.0 - rgb[0], 1.0 - rgb[1], 1.0 - rgb[2]];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if norm < 1e-9 {
        return None;
    }
    let wheel = colorwheel();
    let steps = 3600;
    let mut best = (f64::MIN, 0.0);
    for i in 0..steps {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
        let c = interpolate(&wheel, theta.cos(), theta.sin());
        let e = [1.0 - c[0], 1.0 - c[1], 1.0 - c[2]];
        let en = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        let cos = (d[0] * e[0] + d[1] * e[1] + d[2] * e[2]) / (norm * en);
        if cos > best.0 {
            best = (cos, theta);
        }
    }
    Some(best.1)
}
