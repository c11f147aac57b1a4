use crate::error::{Error, Result};
use crate::nn::{conv_at, layer_norm_channels};
use crate::params::BoundParams;
use crate::tensor::{Real, Tape, Var};

/// Channel-attention branch over `[n, c, h, w]`, without the residual add.
///
/// Per head, with `Q, K, V` flattened to `hw × c'`, returns
/// `V · softmax(Kᵀ Q / √(hw))` where the softmax normalizes over the
/// contracted (first) axis of the `c' × c'` map, then a pointwise projection.
pub fn mdta_attention<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::dim("mdta", format!("expected [n, c, h, w], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels not divisible by {heads} heads")));
    }
    let cp = c / heads;
    let qkv = conv_at(tape, p, &format!("{prefix}.qkv"), x, 0, 1)?;
    let qkv = conv_at(tape, p, &format!("{prefix}.qkv_dw"), qkv, 1, 3 * c)?;
    let split = |i: usize, tape: &mut Tape<T>| -> Result<Var> {
        let v = tape.narrow(qkv, 1, i * c, c)?;
        tape.reshape(v, &[n, heads, cp, h * w])
    };
    let q = split(0, tape)?;
    let k = split(1, tape)?;
    let v = split(2, tape)?;

    // a[i][j] = Σ_p K[i,p] Q[j,p]
    let qt = tape.transpose(q)?;
    let a = tape.matmul(k, qt)?;
    let a = tape.scale(a, T::lit(1.0 / ((h * w) as f64).sqrt()))?;
    let a = tape.softmax(a, 2)?;
    // m[j,p] = Σ_i a[i][j] V[i,p]
    let at = tape.transpose(a)?;
    let m = tape.matmul(at, v)?;
    let m = tape.reshape(m, &[n, c, h, w])?;
    conv_at(tape, p, &format!("{prefix}.project_out"), m, 0, 1)
}

/// [`mdta_attention`] plus the residual input.
pub fn mdta_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let y = mdta_attention(tape, p, prefix, x, heads)?;
    tape.add(x, y)
}

/// Gated feed-forward branch: `PW(GELU(b₁) ⊙ b₂)` where `b₁, b₂` are the two
/// halves of a pointwise-then-depthwise expansion. No residual add.
pub fn gdfn_ffn<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = conv_at(tape, p, &format!("{prefix}.project_in"), x, 0, 1)?;
    let two_e = tape.shape(y)[1];
    let y = conv_at(tape, p, &format!("{prefix}.dwconv"), y, 1, two_e)?;
    let e = two_e / 2;
    let b1 = tape.narrow(y, 1, 0, e)?;
    let b2 = tape.narrow(y, 1, e, e)?;
    let g = tape.gelu(b1)?;
    let z = tape.mul(g, b2)?;
    conv_at(tape, p, &format!("{prefix}.project_out"), z, 0, 1)
}

/// [`gdfn_ffn`] plus the residual input.
pub fn gdfn_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = gdfn_ffn(tape, p, prefix, x)?;
    tape.add(x, y)
}

/// `x + MDTA(LN(x))`, then `+ GDFN(LN(·))`.
pub fn restormer_block<T: Real>(tape: &mut Tape<T>, p: &BoundParams, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let y = layer_norm_channels(tape, p, &format!("{prefix}.norm1"), x)?;
    let y = mdta_attention(tape, p, &format!("{prefix}.attn"), y, heads)?;
    let x = tape.add(x, y)?;
    let z = layer_norm_channels(tape, p, &format!("{prefix}.norm2"), x)?;
    let z = gdfn_ffn(tape, p, &format!("{prefix}.ffn"), z)?;
    tape.add(x, z)
}

/// Parameter shapes of one [`mdta_attention`] branch over `c` channels.
pub fn mdta_param_shapes(prefix: &str, c: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{prefix}.qkv.weight"), vec![3 * c, c, 1, 1]),
        (format!("{prefix}.qkv.bias"), vec![3 * c]),
        (format!("{prefix}.qkv_dw.weight"), vec![3 * c, 1, 3, 3]),
        (format!("{prefix}.qkv_dw.bias"), vec![3 * c]),
        (format!("{prefix}.project_out.weight"), vec![c, c, 1, 1]),
        (format!("{prefix}.project_out.bias"), vec![c]),
    ]
}
