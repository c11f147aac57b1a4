//! BD-rate between two rate-distortion curves with both interpolation modes.

use tvqe::metrics::{bd_rate, BdInterp, RdPoint};

fn curve(points: &[(f64, f64)]) -> Vec<RdPoint> {
    points.iter().map(|&(rate, psnr)| RdPoint { rate, psnr }).collect()
}

fn main() -> tvqe::error::Result<()> {
    let anchor = curve(&[(120.0, 30.1), (260.0, 33.4), (520.0, 36.0), (1100.0, 38.9)]);
    let test = curve(&[(100.0, 30.4), (215.0, 33.6), (450.0, 36.3), (950.0, 39.1)]);
    for interp in [BdInterp::Pchip, BdInterp::Cubic] {
        println!("{interp:?}: {:+.3} %", bd_rate(&anchor, &test, interp)?);
    }
    Ok(())
}
