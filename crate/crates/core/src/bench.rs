//! Wall-clock scaling of the two attention flavours.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{mdta_attention, mdta_param_shapes};
use crate::params::ModelParams;
use crate::swin::{block_param_shapes, window_attention, BlockSpec};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub channels: usize,
    pub heads: usize,
    pub window_size: usize,
    /// Best-of-`repeats` timing per size.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            channels: 16,
            heads: 1,
            window_size: 8,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub pixels: usize,
    pub mdta_seconds: f64,
    pub wmsa_seconds: f64,
}

/// Fitted log-log slopes against pixel (= token) count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchSlopes {
    pub mdta: f64,
    pub wmsa: f64,
}

/// `base` followed by `doublings` sizes, doubling width and height alternately.
pub fn doubling_sizes(base: (usize, usize), doublings: usize) -> Vec<(usize, usize)> {
    let mut v = vec![base];
    let (mut h, mut w) = base;
    for i in 0..doublings {
        if i % 2 == 0 {
            w *= 2;
        } else {
            h *= 2;
        }
        v.push((h, w));
    }
    v
}

fn random_params(shapes: Vec<(String, Vec<usize>)>, seed: u64) -> Result<ModelParams<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new();
    for (path, shape) in shapes {
        let n = shape.iter().product();
        p.insert(path, Tensor::new(&shape, (0..n).map(|_| rng.random_range(-0.1..0.1)).collect())?);
    }
    Ok(p)
}

fn best_of(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Forward-only timings of MDTA (`[1, c, h, w]`) and unshifted window attention (`[1, h, w, c]`).
pub fn bench_sizes(sizes: &[(usize, usize)], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    let c = opts.channels;
    let mdta_p = random_params(mdta_param_shapes("m", c), opts.seed)?;
    let wmsa_p = random_params(block_param_shapes("s", c, opts.heads, opts.window_size, 1.0), opts.seed + 1)?;
    let spec = BlockSpec {
        heads: opts.heads,
        window_size: opts.window_size,
        shift: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 2);
    let mut rows = Vec::with_capacity(sizes.len());
    for &(h, w) in sizes {
        if h % opts.window_size != 0 || w % opts.window_size != 0 {
            return Err(Error::Usage(format!("size {w}x{h} not a multiple of window {}", opts.window_size)));
        }
        let x: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let xm = Tensor::new(&[1, c, h, w], x.clone())?;
        let xs = Tensor::new(&[1, h, w, c], x)?;
        let mdta_seconds = best_of(opts.repeats, || {
            let mut tape = Tape::new();
            let p = mdta_p.bind(&mut tape, false);
            let v = tape.leaf(xm.clone());
            mdta_attention(&mut tape, &p, "m", v, opts.heads).map(|_| ())
        })?;
        let wmsa_seconds = best_of(opts.repeats, || {
            let mut tape = Tape::new();
            let p = wmsa_p.bind(&mut tape, false);
            let v = tape.leaf(xs.clone());
            window_attention(&mut tape, &p, "s.attn", v, spec).map(|_| ())
        })?;
        rows.push(BenchRow {
            height: h,
            width: w,
            pixels: h * w,
            mdta_seconds,
            wmsa_seconds,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || x.len() != y.len() || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Metric("log-log fit needs at least 2 positive pairs".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Metric("log-log fit needs distinct sizes".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

pub fn slopes(rows: &[BenchRow]) -> Result<BenchSlopes> {
    let px: Vec<f64> = rows.iter().map(|r| r.pixels as f64).collect();
    Ok(BenchSlopes {
        mdta: loglog_slope(&px, &rows.iter().map(|r| r.mdta_seconds).collect::<Vec<_>>())?,
        wmsa: loglog_slope(&px, &rows.iter().map(|r| r.wmsa_seconds).collect::<Vec<_>>())?,
    })
}
