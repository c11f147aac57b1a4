//! Shifted-window transformer primitives.
//!
//! Token maps are `[n, h, w, c]` (or flattened `[n, h·w, c]`); windows are
//! square, `ws × ws` tokens, and odd blocks in a stage roll the map by `ws/2`
//! before partitioning.

mod patch;

pub use patch::{
    expanding_param_shapes, merging_param_shapes, partition_param_shapes, patch_expanding, patch_merging,
    patch_partition,
};

use crate::error::{Error, Result};
use crate::nn::{layer_norm_at, linear, linear_at};
use crate::params::BoundParams;
use crate::tensor::{Real, Tape, Var};

/// Additive bias for masked-out attention pairs.
pub const MASK_LARGE: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub window_size: usize,
    pub num_windows_h: usize,
    pub num_windows_w: usize,
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, window_size: usize, shift: usize) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::Usage("window size must be positive".into()));
        }
        if !h.is_multiple_of(window_size) || !w.is_multiple_of(window_size) {
            return Err(Error::dim(
                "window_grid",
                format!("{h}x{w} map is not a multiple of window {window_size}"),
            ));
        }
        if shift != 0 && shift != window_size / 2 {
            return Err(Error::Usage(format!(
                "shift {shift} must be 0 or {}",
                window_size / 2
            )));
        }
        Ok(WindowGrid {
            window_size,
            num_windows_h: h / window_size,
            num_windows_w: w / window_size,
            shift,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows_h * self.num_windows_w
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window_size * self.window_size
    }
}

/// Per-window additive mask, `[num_windows, ws², ws²]`, entries 0 or `-MASK_LARGE`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub grid: WindowGrid,
    pub data: Vec<f64>,
}

impl AttentionMask {
    /// Blocks token pairs that share a shifted window but came from
    /// non-adjacent regions before the roll. All zeros when `shift == 0`.
    pub fn build(grid: WindowGrid) -> Self {
        let ws = grid.window_size;
        let (h, w) = (grid.num_windows_h * ws, grid.num_windows_w * ws);
        let n = ws * ws;
        let mut data = vec![0.0; grid.num_windows() * n * n];
        if grid.shift == 0 {
            return AttentionMask { grid, data };
        }
        let s = grid.shift;
        let band = |i: usize, extent: usize| {
            if i < extent - ws {
                0
            } else if i < extent - s {
                1
            } else {
                2
            }
        };
        // region label of each rolled position, gathered per window
        for wy in 0..grid.num_windows_h {
            for wx in 0..grid.num_windows_w {
                let win = wy * grid.num_windows_w + wx;
                let labels: Vec<usize> = (0..n)
                    .map(|t| {
                        let (y, x) = (wy * ws + t / ws, wx * ws + t % ws);
                        band(y, h) * 3 + band(x, w)
                    })
                    .collect();
                for i in 0..n {
                    for j in 0..n {
                        if labels[i] != labels[j] {
                            data[(win * n + i) * n + j] = -MASK_LARGE;
                        }
                    }
                }
            }
        }
        AttentionMask { grid, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        let n = self.grid.tokens_per_window();
        [self.grid.num_windows(), n, n]
    }

    pub fn record<T: Real>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.constant(&self.shape(), self.data.iter().map(|&v| T::lit(v)).collect())
    }
}

/// Index into the `(2ws-1)²`-row relative-position table for each of the
/// `ws² × ws²` token pairs of one window.
pub fn relative_position_index(ws: usize) -> Vec<usize> {
    let n = ws * ws;
    let side = 2 * ws - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = (i / ws) as isize - (j / ws) as isize + ws as isize - 1;
            let dx = (i % ws) as isize - (j % ws) as isize + ws as isize - 1;
            idx.push(dy as usize * side + dx as usize);
        }
    }
    idx
}

/// `[n, h, w, c] -> [n·nh·nw, ws, ws, c]`
pub fn window_partition<T: Real>(tape: &mut Tape<T>, x: Var, ws: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if ws == 0 {
        return Err(Error::Usage("window size must be positive".into()));
    }
    if s.len() != 4 || !s[1].is_multiple_of(ws) || !s[2].is_multiple_of(ws) {
        return Err(Error::dim("window_partition", format!("{s:?} with window {ws}")));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let y = tape.reshape(x, &[n, h / ws, ws, w / ws, ws, c])?;
    let y = tape.permute(y, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(y, &[n * (h / ws) * (w / ws), ws, ws, c])
}

/// Inverse of [`window_partition`] for an `h × w` map.
pub fn window_reverse<T: Real>(tape: &mut Tape<T>, windows: Var, ws: usize, h: usize, w: usize) -> Result<Var> {
    let s = tape.shape(windows).to_vec();
    if ws == 0 || !h.is_multiple_of(ws) || !w.is_multiple_of(ws) {
        return Err(Error::Usage(format!("window {ws} does not tile {h}x{w}")));
    }
    let per_image = (h / ws) * (w / ws);
    if s.len() != 4 || s[1] != ws || s[2] != ws || !s[0].is_multiple_of(per_image) {
        return Err(Error::dim("window_reverse", format!("{s:?} for {h}x{w} with window {ws}")));
    }
    let (n, c) = (s[0] / per_image, s[3]);
    let y = tape.reshape(windows, &[n, h / ws, w / ws, ws, ws, c])?;
    let y = tape.permute(y, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(y, &[n, h, w, c])
}

/// Toroidal roll of an `[n, h, w, c]` map by `(-s, -s)`; `cyclic_shift(·, -s)` undoes it.
pub fn cyclic_shift<T: Real>(tape: &mut Tape<T>, x: Var, s: isize) -> Result<Var> {
    if s == 0 {
        return Ok(x);
    }
    let shape = tape.shape(x);
    if shape.len() != 4 || s.unsigned_abs() >= shape[1].min(shape[2]) {
        return Err(Error::dim("cyclic_shift", format!("shift {s} for {shape:?}")));
    }
    let y = tape.roll(x, 1, -s)?;
    tape.roll(y, 2, -s)
}

/// Windowed multi-head self-attention over `[num_windows_total, ws², c]`.
///
/// `mask`, when given, is `[windows_per_image, ws², ws²]` and repeats for every
/// image in the batch. Params under `prefix`: `qkv.weight`, `q_bias`, `v_bias`,
/// `proj.{weight,bias}`, `relative_position_bias_table`.
pub fn wmsa<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    heads: usize,
    window_size: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::dim("wmsa", format!("expected [windows, tokens, c], got {s:?}")));
    }
    let (bw, n, c) = (s[0], s[1], s[2]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels not divisible by {heads} heads")));
    }
    if n != window_size * window_size {
        return Err(Error::dim("wmsa", format!("{n} tokens for window {window_size}")));
    }
    let d = c / heads;

    // the key bias cancels inside the softmax, so only q and v carry one
    let qb = p.at(prefix, "q_bias")?;
    let vb = p.at(prefix, "v_bias")?;
    let kb = tape.constant(&[c], vec![T::zero(); c])?;
    let qkv_bias = tape.concat(&[qb, kb, vb], 0)?;
    let qkv = linear(tape, x, p.at(prefix, "qkv.weight")?, Some(qkv_bias))?;
    let qkv = tape.reshape(qkv, &[bw, n, 3, heads, d])?;
    let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
    let part = |i: usize, tape: &mut Tape<T>| -> Result<Var> {
        let v = tape.narrow(qkv, 0, i, 1)?;
        tape.reshape(v, &[bw, heads, n, d])
    };
    let q = part(0, tape)?;
    let k = part(1, tape)?;
    let v = part(2, tape)?;

    let q = tape.scale(q, T::lit(1.0 / (d as f64).sqrt()))?;
    let kt = tape.transpose(k)?;
    let mut attn = tape.matmul(q, kt)?;

    let table = p.at(prefix, "relative_position_bias_table")?;
    let bias = tape.index_select(table, &relative_position_index(window_size))?;
    let bias = tape.reshape(bias, &[n, n, heads])?;
    let bias = tape.permute(bias, &[2, 0, 1])?;
    attn = tape.add(attn, bias)?;

    if let Some(m) = mask {
        let nw = tape.shape(m)[0];
        if bw % nw != 0 {
            return Err(Error::dim("wmsa", format!("{bw} windows for a {nw}-window mask")));
        }
        let a = tape.reshape(attn, &[bw / nw, nw, heads, n, n])?;
        let m = tape.reshape(m, &[nw, 1, n, n])?;
        let a = tape.add(a, m)?;
        attn = tape.reshape(a, &[bw, heads, n, n])?;
    }

    let attn = tape.softmax(attn, 3)?;
    let out = tape.matmul(attn, v)?;
    let out = tape.permute(out, &[0, 2, 1, 3])?;
    let out = tape.reshape(out, &[bw, n, c])?;
    linear_at(tape, p, &format!("{prefix}.proj"), out, true)
}

/// Shift, partition, [`wmsa`], reverse and unshift over an `[n, h, w, c]` map.
pub fn window_attention<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    spec: BlockSpec,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::dim("window_attention", format!("expected [n, h, w, c], got {s:?}")));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let ws = spec.window_size;
    let grid = WindowGrid::new(h, w, ws, spec.shift)?;
    let y = cyclic_shift(tape, x, spec.shift as isize)?;
    let win = window_partition(tape, y, ws)?;
    let win = tape.reshape(win, &[n * grid.num_windows(), ws * ws, c])?;
    let mask = if spec.shift > 0 {
        Some(AttentionMask::build(grid).record(tape)?)
    } else {
        None
    };
    let att = wmsa(tape, p, prefix, win, spec.heads, ws, mask)?;
    let att = tape.reshape(att, &[n * grid.num_windows(), ws, ws, c])?;
    let y = window_reverse(tape, att, ws, h, w)?;
    cyclic_shift(tape, y, -(spec.shift as isize))
}

#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub heads: usize,
    pub window_size: usize,
    pub shift: usize,
}

/// Pre-norm Swin transformer block over `[n, h·w, c]`; output shape equals input.
///
/// Params under `prefix`: `norm1`, `attn.*`, `norm2`, `mlp.fc1`, `mlp.fc2`.
pub fn swin_block<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    h: usize,
    w: usize,
    spec: BlockSpec,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::dim("swin_block", format!("{s:?} is not [n, {h}x{w}, c]")));
    }
    let (n, c) = (s[0], s[2]);

    let y = layer_norm_at(tape, p, &format!("{prefix}.norm1"), x)?;
    let y = tape.reshape(y, &[n, h, w, c])?;
    let y = window_attention(tape, p, &format!("{prefix}.attn"), y, spec)?;
    let y = tape.reshape(y, &[n, h * w, c])?;
    let x = tape.add(x, y)?;

    let z = layer_norm_at(tape, p, &format!("{prefix}.norm2"), x)?;
    let z = linear_at(tape, p, &format!("{prefix}.mlp.fc1"), z, true)?;
    let z = tape.gelu(z)?;
    let z = linear_at(tape, p, &format!("{prefix}.mlp.fc2"), z, true)?;
    tape.add(x, z)
}

/// MLP hidden width for a given ratio.
pub fn mlp_hidden(dim: usize, mlp_ratio: f64) -> usize {
    ((dim as f64 * mlp_ratio).round() as usize).max(1)
}

/// Parameter paths and shapes consumed by [`swin_block`].
pub fn block_param_shapes(
    prefix: &str,
    dim: usize,
    heads: usize,
    window_size: usize,
    mlp_ratio: f64,
) -> Vec<(String, Vec<usize>)> {
    let hidden = mlp_hidden(dim, mlp_ratio);
    let side = 2 * window_size - 1;
    [
        ("norm1.weight", vec![dim]),
        ("norm1.bias", vec![dim]),
        ("attn.qkv.weight", vec![3 * dim, dim]),
        ("attn.q_bias", vec![dim]),
        ("attn.v_bias", vec![dim]),
        ("attn.proj.weight", vec![dim, dim]),
        ("attn.proj.bias", vec![dim]),
        ("attn.relative_position_bias_table", vec![side * side, heads]),
        ("norm2.weight", vec![dim]),
        ("norm2.bias", vec![dim]),
        ("mlp.fc1.weight", vec![hidden, dim]),
        ("mlp.fc1.bias", vec![hidden]),
        ("mlp.fc2.weight", vec![dim, hidden]),
        ("mlp.fc2.bias", vec![dim]),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}.{k}"), v))
    .collect()
}

#[cfg(test)]
mod tests;
