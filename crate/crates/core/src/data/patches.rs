use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::train::{Sample, SampleSource};

use super::yuv::clip_indices;

/// Aligned compressed and raw luma planes of one sequence.
#[derive(Clone, Debug)]
pub struct SequencePair<T> {
    pub compressed: Vec<Tensor<T>>,
    pub raw: Vec<Tensor<T>>,
}

impl<T: Real> SequencePair<T> {
    pub fn new(compressed: Vec<Tensor<T>>, raw: Vec<Tensor<T>>) -> Result<Self> {
        if compressed.is_empty() || compressed.len() != raw.len() {
            return Err(Error::Usage(format!(
                "sequence lengths differ or are empty: {} compressed vs {} raw",
                compressed.len(),
                raw.len()
            )));
        }
        let s = compressed[0].shape().to_vec();
        if s.len() != 2 || compressed.iter().chain(&raw).any(|p| p.shape() != s.as_slice()) {
            return Err(Error::dim("sequence_pair", format!("planes must all be [H, W] = {s:?}")));
        }
        Ok(SequencePair { compressed, raw })
    }

    pub fn frames(&self) -> usize {
        self.raw.len()
    }

    pub fn height(&self) -> usize {
        self.raw[0].shape()[0]
    }

    pub fn width(&self) -> usize {
        self.raw[0].shape()[1]
    }

    /// Co-located crop of the clamped window around `c.t` and the raw center frame.
    pub fn extract(&self, c: PatchCoord, crop: usize, radius: usize) -> Result<Sample<T>> {
        if c.t >= self.frames() || c.y + crop > self.height() || c.x + crop > self.width() {
            return Err(Error::Usage(format!("patch {c:?} of size {crop} out of bounds")));
        }
        let idx = clip_indices(c.t, radius, self.frames());
        let mut input = Vec::with_capacity(idx.len() * crop * crop);
        for &i in &idx {
            crop_into(&self.compressed[i], c, crop, &mut input);
        }
        let mut target = Vec::with_capacity(crop * crop);
        crop_into(&self.raw[c.t], c, crop, &mut target);
        Ok(Sample {
            input: Tensor::new(&[idx.len(), crop, crop], input)?,
            target: Tensor::new(&[1, crop, crop], target)?,
        })
    }
}

fn crop_into<T: Real>(plane: &Tensor<T>, c: PatchCoord, crop: usize, out: &mut Vec<T>) {
    let w = plane.shape()[1];
    for y in c.y..c.y + crop {
        out.extend_from_slice(&plane.data()[y * w + c.x..y * w + c.x + crop]);
    }
}

/// Frame index and top-left corner of a crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchCoord {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

/// Uniform crop position; `crop` must fit inside `height × width`.
pub fn draw_coord(rng: &mut ChaCha8Rng, frames: usize, height: usize, width: usize, crop: usize) -> Result<PatchCoord> {
    if crop == 0 || crop > height || crop > width {
        return Err(Error::Usage(format!("crop {crop} does not fit a {width}x{height} frame")));
    }
    if frames == 0 {
        return Err(Error::Usage("no frames to sample from".into()));
    }
    Ok(PatchCoord {
        t: rng.random_range(0..frames),
        y: rng.random_range(0..=height - crop),
        x: rng.random_range(0..=width - crop),
    })
}

pub fn sample_patches<T: Real>(
    compressed: &[Tensor<T>],
    raw: &[Tensor<T>],
    crop: usize,
    count: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    let pair = SequencePair::new(compressed.to_vec(), raw.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = draw_coord(&mut rng, pair.frames(), pair.height(), pair.width(), crop)?;
            pair.extract(c, crop, radius)
        })
        .collect()
}

/// Random crops from a set of sequence pairs, picking the pair uniformly.
pub struct PatchSource<T> {
    pub pairs: Vec<SequencePair<T>>,
}

impl<T: Real> PatchSource<T> {
    pub fn new(pairs: Vec<SequencePair<T>>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Usage("no training sequences".into()));
        }
        Ok(PatchSource { pairs })
    }
}

impl<T: Real> SampleSource<T> for PatchSource<T> {
    fn sample(&mut self, rng: &mut ChaCha8Rng, crop: usize, radius: usize) -> Result<Sample<T>> {
        let k = rng.random_range(0..self.pairs.len());
        let pair = &self.pairs[k];
        let c = draw_coord(rng, pair.frames(), pair.height(), pair.width(), crop)?;
        pair.extract(c, crop, radius)
    }
}
