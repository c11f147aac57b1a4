use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// QP-like settings used by the reference experiments.
pub const PRESET_QPS: [u32; 5] = [22, 27, 32, 37, 42];

/// Largest accepted quantization index.
pub const MAX_Q: u32 = 51;

/// Block-DCT quantizer standing in for a real codec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeProfile {
    /// QP-like index; 0 is lossless, each +6 doubles the step.
    pub q: u32,
    pub block: usize,
    /// Rounding offset in `floor(|c|/step + deadzone)`; 0.5 is plain rounding.
    pub deadzone: f64,
}

impl Default for DegradeProfile {
    fn default() -> Self {
        DegradeProfile::preset(37)
    }
}

impl DegradeProfile {
    pub fn preset(q: u32) -> Self {
        DegradeProfile {
            q,
            block: 8,
            deadzone: 1.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q > MAX_Q {
            return Err(Error::Config(format!("degrade.q = {} exceeds {MAX_Q}", self.q)));
        }
        if self.block < 2 {
            return Err(Error::Config(format!("degrade.block = {} must be at least 2", self.block)));
        }
        if !(0.0..=0.5).contains(&self.deadzone) {
            return Err(Error::Config(format!("degrade.deadzone = {} outside [0, 0.5]", self.deadzone)));
        }
        Ok(())
    }

    /// Base step on the [0, 1] pixel scale, `2^((q-4)/6) / 255`; 0 when lossless.
    pub fn base_step(&self) -> f64 {
        if self.q == 0 {
            0.0
        } else {
            2f64.powf((self.q as f64 - 4.0) / 6.0) / 255.0
        }
    }

    /// Step for coefficient `(u, v)`; grows linearly to 3x at the highest frequency.
    pub fn step(&self, u: usize, v: usize) -> f64 {
        let weight = 1.0 + (u + v) as f64 / (self.block - 1) as f64;
        self.base_step() * weight
    }
}

/// Coefficient statistics of one degraded plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DegradeStats {
    pub blocks: usize,
    pub coefficients: usize,
    pub nonzero: usize,
    /// Entropy-coding proxy: signed exp-Golomb length per nonzero level plus one flag bit per block.
    pub bits: u64,
}

impl DegradeStats {
    pub fn merge(&mut self, other: &DegradeStats) {
        self.blocks += other.blocks;
        self.coefficients += other.coefficients;
        self.nonzero += other.nonzero;
        self.bits += other.bits;
    }
}

/// Rate proxy in kbps for `frames` frames at `fps`.
pub fn rate_proxy_kbps(stats: &DegradeStats, frames: usize, fps: f64) -> f64 {
    if frames == 0 {
        return 0.0;
    }
    stats.bits as f64 / frames as f64 * fps / 1000.0
}

/// Orthonormal DCT-II matrix, `c[k][n]`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            c[k * n + i] = a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    c
}

/// `ue(|level| - 1)` plus a sign bit.
fn exp_golomb_bits(level: i64) -> u64 {
    2 * (64 - level.unsigned_abs().leading_zeros() as u64)
}

/// Symmetric (mirror, edge-repeating) index for far-edge padding.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

pub fn synth_degrade<T: Real>(plane: &Tensor<T>, profile: &DegradeProfile) -> Result<Tensor<T>> {
    Ok(synth_degrade_with_stats(plane, profile)?.0)
}

/// Per-block 2D DCT, deadzone quantization, dequantization and inverse DCT of an `[H, W]` plane.
///
/// Extents that are not block multiples are mirror-padded at the far edges and cropped back.
pub fn synth_degrade_with_stats<T: Real>(plane: &Tensor<T>, profile: &DegradeProfile) -> Result<(Tensor<T>, DegradeStats)> {
    profile.validate()?;
    let s = plane.shape();
    if s.len() != 2 {
        return Err(Error::dim("synth_degrade", format!("expected [H, W], got {s:?}")));
    }
    let (h, w, b) = (s[0], s[1], profile.block);
    let (ph, pw) = (h.div_ceil(b) * b, w.div_ceil(b) * b);
    let src = plane.data();
    let mut buf = vec![0.0f64; ph * pw];
    for y in 0..ph {
        for x in 0..pw {
            buf[y * pw + x] = src[mirror(y, h) * w + mirror(x, w)].to_f64().unwrap_or(f64::NAN);
        }
    }

    let c = dct_matrix(b);
    let steps: Vec<f64> = (0..b * b).map(|i| profile.step(i / b, i % b)).collect();
    let mut stats = DegradeStats::default();
    let mut blk = vec![0.0; b * b];
    let mut tmp = vec![0.0; b * b];
    for by in (0..ph).step_by(b) {
        for bx in (0..pw).step_by(b) {
            for i in 0..b {
                for j in 0..b {
                    blk[i * b + j] = buf[(by + i) * pw + bx + j];
                }
            }
            // coef = C X C^T
            for k in 0..b {
                for j in 0..b {
                    tmp[k * b + j] = (0..b).map(|i| c[k * b + i] * blk[i * b + j]).sum();
                }
            }
            for k in 0..b {
                for l in 0..b {
                    blk[k * b + l] = (0..b).map(|j| tmp[k * b + j] * c[l * b + j]).sum();
                }
            }
            stats.blocks += 1;
            stats.coefficients += b * b;
            stats.bits += 1;
            if profile.q > 0 {
                for (v, &st) in blk.iter_mut().zip(&steps) {
                    let level = ((v.abs() / st + profile.deadzone).floor() as i64) * v.signum() as i64;
                    if level != 0 {
                        stats.nonzero += 1;
                        stats.bits += exp_golomb_bits(level);
                    }
                    *v = level as f64 * st;
                }
            } else {
                stats.nonzero += blk.iter().filter(|v| v.abs() > 1e-12).count();
            }
            // X = C^T coef C
            for i in 0..b {
                for l in 0..b {
                    tmp[i * b + l] = (0..b).map(|k| c[k * b + i] * blk[k * b + l]).sum();
                }
            }
            for i in 0..b {
                for j in 0..b {
                    buf[(by + i) * pw + bx + j] = (0..b).map(|l| tmp[i * b + l] * c[l * b + j]).sum();
                }
            }
        }
    }

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend(buf[y * pw..y * pw + w].iter().map(|&v| T::lit(v)));
    }
    Ok((Tensor::new(&[h, w], out)?, stats))
}

/// Degrades every plane and re-quantizes to 8-bit codes, as a decoder would output.
pub fn degrade_sequence<T: Real>(planes: &[Tensor<T>], profile: &DegradeProfile) -> Result<(Vec<Tensor<T>>, DegradeStats)> {
    let mut total = DegradeStats::default();
    let mut out = Vec::with_capacity(planes.len());
    for p in planes {
        let (d, st) = synth_degrade_with_stats(p, profile)?;
        let data = d.data().iter().map(|&v| T::lit(super::yuv::quantize_8bit(v) as f64 / 255.0)).collect();
        out.push(Tensor::new(d.shape(), data)?);
        total.merge(&st);
    }
    Ok((out, total))
}
