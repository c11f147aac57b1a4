use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::quality::{psnr, ssim, Psnr};

/// Mean per-frame gains of `enhanced` over `compressed`, both against `raw`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaMetrics {
    /// `None` when every frame had an infinite PSNR on either side.
    pub delta_psnr: Option<f64>,
    pub delta_ssim: f64,
    pub frames: usize,
    /// Frames left out of the PSNR mean because a side was infinite.
    pub infinite_frames: usize,
}

fn check_aligned<T: Real>(seqs: &[&[Tensor<T>]]) -> Result<usize> {
    let n = seqs[0].len();
    if n == 0 || seqs.iter().any(|s| s.len() != n) {
        return Err(Error::Metric(format!(
            "sequence lengths differ or are empty: {:?}",
            seqs.iter().map(|s| s.len()).collect::<Vec<_>>()
        )));
    }
    Ok(n)
}

pub fn delta_metrics<T: Real>(raw: &[Tensor<T>], compressed: &[Tensor<T>], enhanced: &[Tensor<T>]) -> Result<DeltaMetrics> {
    let n = check_aligned(&[raw, compressed, enhanced])?;
    let (mut dp, mut ds, mut finite, mut inf) = (0.0, 0.0, 0usize, 0usize);
    for t in 0..n {
        let pc = psnr(&compressed[t], &raw[t], 1.0)?;
        let pe = psnr(&enhanced[t], &raw[t], 1.0)?;
        match (pe, pc) {
            (Psnr::Finite(e), Psnr::Finite(c)) => {
                dp += e - c;
                finite += 1;
            }
            _ => inf += 1,
        }
        ds += ssim(&enhanced[t], &raw[t])? - ssim(&compressed[t], &raw[t])?;
    }
    Ok(DeltaMetrics {
        delta_psnr: (finite > 0).then(|| dp / finite as f64),
        delta_ssim: ds / n as f64,
        frames: n,
        infinite_frames: inf,
    })
}

/// Per-frame quality of a degraded and an enhanced stream against the raw one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualitySeries {
    pub degraded_psnr: Vec<Psnr>,
    pub enhanced_psnr: Vec<Psnr>,
    pub degraded_ssim: Vec<f64>,
    pub enhanced_ssim: Vec<f64>,
}

/// One CSV row of a [`QualitySeries`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub frame: usize,
    pub psnr_degraded: Psnr,
    pub psnr_enhanced: Psnr,
    pub ssim_degraded: f64,
    pub ssim_enhanced: f64,
}

impl QualitySeries {
    pub fn len(&self) -> usize {
        self.degraded_psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degraded_psnr.is_empty()
    }

    pub fn rows(&self) -> Vec<SeriesRow> {
        (0..self.len())
            .map(|t| SeriesRow {
                frame: t,
                psnr_degraded: self.degraded_psnr[t],
                psnr_enhanced: self.enhanced_psnr[t],
                ssim_degraded: self.degraded_ssim[t],
                ssim_enhanced: self.enhanced_ssim[t],
            })
            .collect()
    }

    /// Population std of the finite per-frame PSNRs of the degraded stream.
    pub fn degraded_fluctuation(&self) -> f64 {
        fluctuation(&self.degraded_psnr)
    }

    pub fn enhanced_fluctuation(&self) -> f64 {
        fluctuation(&self.enhanced_psnr)
    }
}

/// Population standard deviation over finite values; 0 when fewer than two.
pub fn fluctuation(series: &[Psnr]) -> f64 {
    let v: Vec<f64> = series.iter().filter_map(|p| p.finite()).collect();
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn per_frame_series<T: Real>(raw: &[Tensor<T>], degraded: &[Tensor<T>], enhanced: &[Tensor<T>]) -> Result<QualitySeries> {
    let n = check_aligned(&[raw, degraded, enhanced])?;
    let mut s = QualitySeries {
        degraded_psnr: Vec::with_capacity(n),
        enhanced_psnr: Vec::with_capacity(n),
        degraded_ssim: Vec::with_capacity(n),
        enhanced_ssim: Vec::with_capacity(n),
    };
    for t in 0..n {
        s.degraded_psnr.push(psnr(&degraded[t], &raw[t], 1.0)?);
        s.enhanced_psnr.push(psnr(&enhanced[t], &raw[t], 1.0)?);
        s.degraded_ssim.push(ssim(&degraded[t], &raw[t])?);
        s.enhanced_ssim.push(ssim(&enhanced[t], &raw[t])?);
    }
    Ok(s)
}

/// Mean finite PSNR of `a` against `b` over frames, with the count of infinite frames.
pub fn mean_psnr<T: Real>(a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<(Option<f64>, usize)> {
    let n = check_aligned(&[a, b])?;
    let (mut sum, mut k) = (0.0, 0usize);
    for t in 0..n {
        if let Psnr::Finite(v) = psnr(&a[t], &b[t], 1.0)? {
            sum += v;
            k += 1;
        }
    }
    Ok(((k > 0).then(|| sum / k as f64), n - k))
}
