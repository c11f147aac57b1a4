use crate::error::{Error, Result};
use crate::nn::{layer_norm_at, linear_at};
use crate::params::BoundParams;
use crate::tensor::{Real, Tape, Var};

/// Non-overlapping `p × p` patches of `[n, c_in, H, W]`, each linearly
/// projected to `d` channels: returns `[n, (H/p)·(W/p), d]`.
///
/// Params: `{prefix}.proj.weight` `[d, c_in, p, p]`, `{prefix}.proj.bias` `[d]`.
pub fn patch_partition<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    patch: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || patch == 0 || !s[2].is_multiple_of(patch) || !s[3].is_multiple_of(patch) {
        return Err(Error::dim("patch_partition", format!("{s:?} with patch {patch}")));
    }
    let w = p.at(prefix, "proj.weight")?;
    let b = p.at(prefix, "proj.bias")?;
    let y = tape.conv2d(x, w, Some(b), patch, 0, 1)?;
    let ys = tape.shape(y).to_vec();
    let y = tape.permute(y, &[0, 2, 3, 1])?;
    tape.reshape(y, &[ys[0], ys[2] * ys[3], ys[1]])
}

/// `[n, h·w, c] -> [n, (h/2)·(w/2), 2c]`: concatenate each 2×2 neighbourhood
/// as `(x[0,0], x[1,0], x[0,1], x[1,1])`, LayerNorm over 4c, project to 2c.
///
/// Params: `{prefix}.norm.{weight,bias}` `[4c]`, `{prefix}.reduction.weight` `[2c, 4c]`.
pub fn patch_merging<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    h: usize,
    w: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::dim("patch_merging", format!("{s:?} is not [n, {h}x{w}, c]")));
    }
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::dim("patch_merging", format!("odd extent {h}x{w}")));
    }
    let (n, c) = (s[0], s[2]);
    let y = tape.reshape(x, &[n, h / 2, 2, w / 2, 2, c])?;
    // [n, h/2, w/2, dx, dy, c] so the flattened 4c axis is dx-major
    let y = tape.permute(y, &[0, 1, 3, 4, 2, 5])?;
    let y = tape.reshape(y, &[n, (h / 2) * (w / 2), 4 * c])?;
    let y = layer_norm_at(tape, p, &format!("{prefix}.norm"), y)?;
    linear_at(tape, p, &format!("{prefix}.reduction"), y, false)
}

/// `[n, h·w, c] -> [n, 2h·2w, c/2]`: project c → 2c, then spread the 2c
/// channels over a 2×2 neighbourhood of c/2 channels each.
///
/// Params: `{prefix}.expand.weight` `[2c, c]`.
pub fn patch_expanding<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    h: usize,
    w: usize,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::dim("patch_expanding", format!("{s:?} is not [n, {h}x{w}, c]")));
    }
    let (n, c) = (s[0], s[2]);
    if c % 2 != 0 {
        return Err(Error::dim("patch_expanding", format!("odd channel count {c}")));
    }
    let y = linear_at(tape, p, &format!("{prefix}.expand"), x, false)?;
    let y = tape.reshape(y, &[n, h, w, 2, 2, c / 2])?;
    let y = tape.permute(y, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(y, &[n, 4 * h * w, c / 2])
}

pub fn partition_param_shapes(prefix: &str, c_in: usize, dim: usize, patch: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.proj.weight"), vec![dim, c_in, patch, patch]),
        (format!("{prefix}.proj.bias"), vec![dim]),
    ]
}

pub fn merging_param_shapes(prefix: &str, c: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.norm.weight"), vec![4 * c]),
        (format!("{prefix}.norm.bias"), vec![4 * c]),
        (format!("{prefix}.reduction.weight"), vec![2 * c, 4 * c]),
    ]
}

pub fn expanding_param_shapes(prefix: &str, c: usize) -> Vec<(String, Vec<usize>)> {
    vec![(format!("{prefix}.expand.weight"), vec![2 * c, c])]
}
