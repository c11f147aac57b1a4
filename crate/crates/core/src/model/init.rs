use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::caqe::mdta_param_shapes;
use super::ModelConfig;
use crate::error::Result;
use crate::params::ModelParams;
use crate::swin::{block_param_shapes, expanding_param_shapes, merging_param_shapes, partition_param_shapes};
use crate::tensor::{Real, Tensor};

pub const INIT_STD: f64 = 0.02;

pub(crate) fn enc_block(stage: usize, i: usize) -> String {
    format!("sstf.enc.stage{}.block{i}", stage + 1)
}

pub(crate) fn dec_block(stage: usize, i: usize) -> String {
    format!("sstf.dec.stage{}.block{i}", stage + 1)
}

pub(crate) fn restormer(i: usize) -> String {
    format!("caqe.res{i}")
}

fn conv(prefix: &str, out: usize, inp: usize, k: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.weight"), vec![out, inp, k, k]),
        (format!("{prefix}.bias"), vec![out]),
    ]
}

fn norm(prefix: &str, c: usize) -> Vec<(String, Vec<usize>)> {
    vec![(format!("{prefix}.weight"), vec![c]), (format!("{prefix}.bias"), vec![c])]
}

/// Every parameter path and shape implied by `cfg`.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let ws = cfg.window_size;
    let mut out = partition_param_shapes("sstf.patch_embed", cfg.frames(), d, cfg.patch);
    for k in 0..3 {
        let c = cfg.stage_dim(k);
        if k > 0 {
            out.extend(merging_param_shapes(&format!("sstf.enc.stage{}.merge", k + 1), c / 2));
        }
        for i in 0..cfg.depths[k] {
            out.extend(block_param_shapes(&enc_block(k, i), c, cfg.heads[k], ws, cfg.mlp_ratio));
        }
    }
    // decoder stage j mirrors encoder stage 2 - j
    for j in 0..3 {
        let k = 2 - j;
        let c = cfg.stage_dim(k);
        if j > 0 {
            out.extend(expanding_param_shapes(&format!("sstf.dec.stage{}.up", j + 1), 2 * c));
        }
        for i in 0..cfg.depths[k] {
            out.extend(block_param_shapes(&dec_block(j, i), c, cfg.heads[k], ws, cfg.mlp_ratio));
        }
    }
    out.extend(conv("sstf.head", d * cfg.patch * cfg.patch, d, 1));

    let e = d * cfg.gdfn_expansion;
    for i in 0..cfg.num_restormers {
        let p = restormer(i);
        out.extend(norm(&format!("{p}.norm1"), d));
        out.extend(mdta_param_shapes(&format!("{p}.attn"), d));
        out.extend(norm(&format!("{p}.norm2"), d));
        out.extend(conv(&format!("{p}.ffn.project_in"), 2 * e, d, 1));
        out.extend(conv(&format!("{p}.ffn.dwconv"), 2 * e, 1, 3));
        out.extend(conv(&format!("{p}.ffn.project_out"), d, e, 1));
    }
    out.extend(conv("caqe.rec", 1, d, 3));
    out
}

enum Init {
    Zeros,
    Ones,
    TruncNormal,
}

fn rule(path: &str, shape: &[usize]) -> Init {
    let leaf = path.rsplit('.').next().unwrap_or(path);
    let is_norm = path
        .rsplit('.')
        .nth(1)
        .is_some_and(|m| m.starts_with("norm"));
    match leaf {
        "weight" if is_norm => Init::Ones,
        "bias" | "q_bias" | "v_bias" | "relative_position_bias_table" => Init::Zeros,
        _ if shape.len() >= 2 => Init::TruncNormal,
        _ => Init::Zeros,
    }
}

/// Deterministic initialization: weights truncated normal (std 0.02, cut at ±2σ),
/// biases and relative-position tables zero, LayerNorm scale one.
pub fn param_init<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut shapes = param_shapes(cfg);
    shapes.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut params = ModelParams::new();
    for (path, shape) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match rule(&path, &shape) {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::TruncNormal => (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break T::lit(v);
                    }
                })
                .collect(),
        };
        params.insert(path, Tensor::new(&shape, data)?);
    }
    Ok(params)
}
