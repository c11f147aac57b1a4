use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Joint flip / rotation applied to every plane of a training sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
    };

    pub fn draw(rng: &mut impl Rng) -> Self {
        Augment {
            hflip: rng.random(),
            vflip: rng.random(),
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// Applies to a `[planes, H, W]` stack (flips first, then rotation).
    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::dim("augment", format!("expected [planes, H, W], got {s:?}")));
        }
        let (n, h, w) = (s[0], s[1], s[2]);
        if self.quarter_turns % 2 == 1 && h != w {
            return Err(Error::Usage(format!("quarter-turn rotation of a non-square {h}x{w} patch")));
        }
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for p in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let (mut sy, mut sx) = (y, xx);
                    // rotation maps output (y, x) back to a flipped-frame position
                    match self.quarter_turns % 4 {
                        1 => (sy, sx) = (xx, w - 1 - y),
                        2 => (sy, sx) = (h - 1 - y, w - 1 - xx),
                        3 => (sy, sx) = (h - 1 - xx, y),
                        _ => {}
                    }
                    if self.vflip {
                        sy = h - 1 - sy;
                    }
                    if self.hflip {
                        sx = w - 1 - sx;
                    }
                    out[(p * h + y) * w + xx] = src[(p * h + sy) * w + sx];
                }
            }
        }
        Tensor::new(s, out)
    }
}
