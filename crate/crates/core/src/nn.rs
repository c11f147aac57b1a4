//! Small layer helpers composed from tape primitives.

use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Real, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// `x · Wᵀ + b` over the last axis, `W` stored as `[out, in]`.
pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let wt = tape.transpose(weight)?;
    let y = tape.matmul(x, wt)?;
    match bias {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

/// Linear layer reading `{prefix}.weight` and optional `{prefix}.bias`.
pub fn linear_at<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    bias: bool,
) -> Result<Var> {
    let w = p.at(prefix, "weight")?;
    let b = if bias { Some(p.at(prefix, "bias")?) } else { None };
    linear(tape, x, w, b)
}

pub fn layer_norm_at<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let g = p.at(prefix, "weight")?;
    let b = p.at(prefix, "bias")?;
    tape.layer_norm(x, g, b, T::lit(LN_EPS))
}

/// LayerNorm across channels of an `[n, c, h, w]` map.
pub fn layer_norm_channels<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let nhwc = tape.permute(x, &[0, 2, 3, 1])?;
    let y = layer_norm_at(tape, p, prefix, nhwc)?;
    tape.permute(y, &[0, 3, 1, 2])
}

/// Convolution reading `{prefix}.weight` / `{prefix}.bias`.
pub fn conv_at<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    padding: usize,
    groups: usize,
) -> Result<Var> {
    let w = p.at(prefix, "weight")?;
    let b = p.at(prefix, "bias")?;
    tape.conv2d(x, w, Some(b), 1, padding, groups)
}
