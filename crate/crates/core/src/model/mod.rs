//! The enhancement network: a Swin auto-encoder that fuses `2R+1` frames
//! (SSTF) followed by a channel-attention refinement stage (CAQE) that
//! predicts a residual on the target frame.

mod caqe;
mod config;
mod init;

pub use caqe::{gdfn_ffn, gdfn_forward, mdta_attention, mdta_forward, mdta_param_shapes, restormer_block};
pub use config::ModelConfig;
pub use init::{param_init, param_shapes, INIT_STD};

use crate::error::{Error, Result};
use crate::nn::conv_at;
use crate::params::{BoundParams, ModelParams};
use crate::swin::{patch_expanding, patch_merging, patch_partition, swin_block, BlockSpec};
use crate::tensor::{Real, Tape, Tensor, Var};

/// `2R+1` luma planes in `[0, 1]` centred on the target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipWindow<T> {
    /// `[2R+1, H, W]`
    pub frames: Tensor<T>,
    pub target_index: usize,
    /// Source frame index of each plane; boundary replication repeats indices.
    pub timestamps: Vec<usize>,
}

impl<T: Real> ClipWindow<T> {
    pub fn new(frames: Tensor<T>, timestamps: Vec<usize>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 3 || s[0].is_multiple_of(2) {
            return Err(Error::dim("clip_window", format!("expected [2R+1, H, W], got {s:?}")));
        }
        if timestamps.len() != s[0] {
            return Err(Error::Usage(format!(
                "{} timestamps for {} frames",
                timestamps.len(),
                s[0]
            )));
        }
        Ok(ClipWindow {
            target_index: s[0] / 2,
            frames,
            timestamps,
        })
    }

    pub fn radius(&self) -> usize {
        self.target_index
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn center(&self) -> &[T] {
        let n = self.height() * self.width();
        &self.frames.data()[self.target_index * n..(self.target_index + 1) * n]
    }

    /// `[1, 2R+1, H, W]`
    pub fn batch(&self) -> Tensor<T> {
        let s = self.frames.shape();
        Tensor::new(&[1, s[0], s[1], s[2]], self.frames.data().to_vec()).expect("same element count")
    }
}

/// Reflection index of position `i` for an axis of length `n`, folding
/// repeatedly so any pad length is valid.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads the two trailing axes of an `[n, c, H, W]` map at the far
/// edges up to `(ph, pw)`.
pub fn reflect_pad<T: Real>(tape: &mut Tape<T>, x: Var, ph: usize, pw: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || ph < s[2] || pw < s[3] {
        return Err(Error::dim("reflect_pad", format!("{s:?} to {ph}x{pw}")));
    }
    let mut y = x;
    if ph > s[2] {
        let idx: Vec<usize> = (0..ph).map(|i| reflect_index(i, s[2])).collect();
        let t = tape.permute(y, &[2, 0, 1, 3])?;
        let t = tape.index_select(t, &idx)?;
        y = tape.permute(t, &[1, 2, 0, 3])?;
    }
    if pw > s[3] {
        let idx: Vec<usize> = (0..pw).map(|i| reflect_index(i, s[3])).collect();
        let t = tape.permute(y, &[3, 0, 1, 2])?;
        let t = tape.index_select(t, &idx)?;
        y = tape.permute(t, &[1, 2, 3, 0])?;
    }
    Ok(y)
}

fn padded(extent: usize, multiple: usize) -> usize {
    extent.div_ceil(multiple) * multiple
}

fn block_spec(cfg: &ModelConfig, stage: usize, i: usize) -> BlockSpec {
    BlockSpec {
        heads: cfg.heads[stage],
        window_size: cfg.window_size,
        shift: if i % 2 == 1 { cfg.window_size / 2 } else { 0 },
    }
}

fn blocks<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    mut x: Var,
    stage: usize,
    name: impl Fn(usize) -> String,
    (h, w): (usize, usize),
) -> Result<Var> {
    for i in 0..cfg.depths[stage] {
        x = swin_block(tape, p, &name(i), x, h, w, block_spec(cfg, stage, i))?;
    }
    Ok(x)
}

/// Toggles used by the ablation tests; the network itself always uses skips.
#[derive(Clone, Copy, Debug)]
pub struct SstfOptions {
    pub skip_connections: bool,
}

impl Default for SstfOptions {
    fn default() -> Self {
        SstfOptions { skip_connections: true }
    }
}

/// Fused feature map `[n, embed_dim, H, W]` from stacked frames `[n, 2R+1, H, W]`.
pub fn sstf_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &ModelConfig, frames: Var) -> Result<Var> {
    sstf_forward_with(tape, p, cfg, frames, SstfOptions::default())
}

pub fn sstf_forward_with<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    frames: Var,
    opts: SstfOptions,
) -> Result<Var> {
    let s = tape.shape(frames).to_vec();
    if s.len() != 4 {
        return Err(Error::dim("sstf", format!("expected [n, 2R+1, H, W], got {s:?}")));
    }
    if s[1] != cfg.frames() {
        return Err(Error::Usage(format!(
            "{} input frames for radius {} (expected {})",
            s[1],
            cfg.radius,
            cfg.frames()
        )));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let m = cfg.pad_multiple();
    let (ph, pw) = (padded(h, m), padded(w, m));
    let x = reflect_pad(tape, frames, ph, pw)?;

    let mut hw = [(0, 0); 3];
    for (k, e) in hw.iter_mut().enumerate() {
        *e = ((ph / cfg.patch) >> k, (pw / cfg.patch) >> k);
    }

    let e1 = patch_partition(tape, p, "sstf.patch_embed", x, cfg.patch)?;
    let e1 = blocks(tape, p, cfg, e1, 0, |i| init::enc_block(0, i), hw[0])?;
    let e2 = patch_merging(tape, p, "sstf.enc.stage2.merge", e1, hw[0].0, hw[0].1)?;
    let e2 = blocks(tape, p, cfg, e2, 1, |i| init::enc_block(1, i), hw[1])?;
    let e3 = patch_merging(tape, p, "sstf.enc.stage3.merge", e2, hw[1].0, hw[1].1)?;
    let e3 = blocks(tape, p, cfg, e3, 2, |i| init::enc_block(2, i), hw[2])?;

    let skip = |tape: &mut Tape<T>, a: Var, b: Var| if opts.skip_connections { tape.add(a, b) } else { Ok(a) };

    let d3 = blocks(tape, p, cfg, e3, 2, |i| init::dec_block(0, i), hw[2])?;
    let d3 = skip(tape, d3, e3)?;
    let d2 = patch_expanding(tape, p, "sstf.dec.stage2.up", d3, hw[2].0, hw[2].1)?;
    let d2 = blocks(tape, p, cfg, d2, 1, |i| init::dec_block(1, i), hw[1])?;
    let d2 = skip(tape, d2, e2)?;
    let d1 = patch_expanding(tape, p, "sstf.dec.stage3.up", d2, hw[1].0, hw[1].1)?;
    let d1 = blocks(tape, p, cfg, d1, 0, |i| init::dec_block(2, i), hw[0])?;
    let d1 = skip(tape, d1, e1)?;

    let d = cfg.embed_dim;
    let y = tape.reshape(d1, &[n, hw[0].0, hw[0].1, d])?;
    let y = tape.permute(y, &[0, 3, 1, 2])?;
    let y = conv_at(tape, p, "sstf.head", y, 0, 1)?;
    let y = tape.pixel_shuffle(y, cfg.patch)?;
    let y = tape.narrow(y, 2, 0, h)?;
    tape.narrow(y, 3, 0, w)
}

/// `Rec(Restormerᴺ(x_m)) + x_t` with `x_m: [n, embed_dim, H, W]`, `x_t: [n, 1, H, W]`.
pub fn caqe_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &ModelConfig, x_m: Var, x_t: Var) -> Result<Var> {
    let (sm, st) = (tape.shape(x_m).to_vec(), tape.shape(x_t).to_vec());
    if sm.len() != 4 || st.len() != 4 || sm[0] != st[0] || sm[2..] != st[2..] || st[1] != 1 {
        return Err(Error::dim("caqe", format!("features {sm:?} vs frame {st:?}")));
    }
    let mut y = x_m;
    for i in 0..cfg.num_restormers {
        y = restormer_block(tape, p, &init::restormer(i), y, cfg.mdta_heads)?;
    }
    let y = conv_at(tape, p, "caqe.rec", y, 1, 1)?;
    tape.add(y, x_t)
}

/// Enhanced target frame `[n, 1, H, W]` from stacked frames `[n, 2R+1, H, W]`.
pub fn tvqe_forward<T: Real>(tape: &mut Tape<T>, p: &BoundParams, cfg: &ModelConfig, frames: Var) -> Result<Var> {
    let x_m = sstf_forward(tape, p, cfg, frames)?;
    let x_t = tape.narrow(frames, 1, cfg.radius, 1)?;
    caqe_forward(tape, p, cfg, x_m, x_t)
}

/// Inference on one clip; the result is the unclamped `[H, W]` plane.
pub fn enhance_clip<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, clip: &ClipWindow<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.leaf(clip.batch());
    let y = tvqe_forward(&mut tape, &p, cfg, x)?;
    tape.tensor(y).reshape(&[clip.height(), clip.width()])
}

#[cfg(test)]
mod tests;
