use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Procedural test content: a textured background panning under moving sharp-edged shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub shapes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 64,
            height: 64,
            frames: 8,
            shapes: 4,
            seed: 0,
        }
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

struct Shape {
    disc: bool,
    cx: f64,
    cy: f64,
    r: f64,
    vx: f64,
    vy: f64,
    level: f64,
}

/// `frames` planes `[H, W]` of 8-bit codes scaled to [0, 1].
pub fn synthetic_sequence<T: Real>(spec: &SynthSpec) -> Result<Vec<Tensor<T>>> {
    let SynthSpec { width: w, height: h, .. } = *spec;
    if w == 0 || h == 0 || spec.frames == 0 {
        return Err(Error::Usage(format!("empty synthetic sequence {w}x{h}x{}", spec.frames)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tau = std::f64::consts::TAU;
    let waves: Vec<Wave> = (0..3)
        .map(|k| Wave {
            fx: rng.random_range(0.01..0.12) * (k + 1) as f64,
            fy: rng.random_range(0.01..0.12) * (k + 1) as f64,
            phase: rng.random_range(0.0..tau),
            amp: 0.12 / (k + 1) as f64,
        })
        .collect();
    let (pan_x, pan_y) = (rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
    let (gx, gy) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let side = w.min(h) as f64;
    let shapes: Vec<Shape> = (0..spec.shapes)
        .map(|_| Shape {
            disc: rng.random_bool(0.5),
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            r: rng.random_range(0.08..0.25) * side,
            vx: rng.random_range(-2.0..2.0),
            vy: rng.random_range(-2.0..2.0),
            level: rng.random_range(0.05..0.95),
        })
        .collect();

    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let t = t as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 + pan_x * t, y as f64 + pan_y * t);
                let mut val = 0.5 + gx * (u / w as f64 - 0.5) + gy * (v / h as f64 - 0.5);
                for wv in &waves {
                    val += wv.amp * (tau * (wv.fx * u + wv.fy * v) + wv.phase).sin();
                }
                for s in &shapes {
                    let (dx, dy) = (x as f64 - (s.cx + s.vx * t), y as f64 - (s.cy + s.vy * t));
                    let inside = if s.disc {
                        dx * dx + dy * dy <= s.r * s.r
                    } else {
                        dx.abs() <= s.r && dy.abs() <= 0.6 * s.r
                    };
                    if inside {
                        val = s.level + 0.04 * (tau * 0.25 * (dx + dy)).sin();
                    }
                }
                data.push(T::lit((val.clamp(0.0, 1.0) * 255.0).round() / 255.0));
            }
        }
        out.push(Tensor::new(&[h, w], data)?);
    }
    Ok(out)
}

/// Fixed `[n, n]` pattern: diagonal ramp, vertical step edge, checker patch, and a
/// hash-noise texture so every block carries broadband content.
///
/// `n` must be nonzero.
pub fn test_pattern<T: Real>(n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let mut v = 0.2 + 0.4 * (x + y) as f64 / (2 * n) as f64;
            if 2 * x >= n {
                v += 0.2;
            }
            if y < n / 4 && x < n / 4 && (x + y) % 2 == 0 {
                v = 0.9;
            }
            let h = (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
            let h = (h ^ (h >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            v += 0.08 * ((h >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
            data.push(T::lit(v));
        }
    }
    Tensor::new(&[n, n], data).expect("n*n elements")
}
