use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rate-distortion operating point; rate in kbps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub rate: f64,
    pub psnr: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BdInterp {
    /// Monotone piecewise-cubic Hermite (Fritsch-Carlson slopes).
    #[default]
    Pchip,
    /// Least-squares global cubic, the original formulation.
    Cubic,
}

/// Sorts by rate and checks rate and PSNR are both strictly increasing.
pub fn validate_curve(points: &[RdPoint], min_points: usize) -> Result<Vec<RdPoint>> {
    if points.len() < min_points {
        return Err(Error::Metric(format!("RD curve has {} points, need at least {min_points}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.rate > 0.0 && p.rate.is_finite() && p.psnr.is_finite())) {
        return Err(Error::Metric(format!("invalid RD point {p:?}")));
    }
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    if let Some(w) = v.windows(2).find(|w| !(w[1].rate > w[0].rate && w[1].psnr > w[0].psnr)) {
        return Err(Error::Metric(format!(
            "RD curve not strictly monotone between {:?} and {:?}",
            w[0], w[1]
        )));
    }
    Ok(v)
}

/// Monotone piecewise-cubic Hermite interpolant through strictly increasing `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Metric("pchip needs at least 2 points with increasing abscissae".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for k in 1..n - 1 {
                if del[k - 1] * del[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Ok(Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    fn segment(&self, v: f64) -> usize {
        let n = self.x.len();
        self.x[1..n - 1].partition_point(|&xi| xi <= v)
    }

    pub fn eval(&self, v: f64) -> f64 {
        let k = self.segment(v);
        let h = self.x[k + 1] - self.x[k];
        let t = (v - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[k]
            + (t3 - 2.0 * t2 + t) * h * self.d[k]
            + (-2.0 * t3 + 3.0 * t2) * self.y[k + 1]
            + (t3 - t2) * h * self.d[k + 1]
    }

    /// Exact integral over `[lo, hi]` within the data range.
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let anti = |k: usize, t: f64| -> f64 {
            let h = self.x[k + 1] - self.x[k];
            let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
            h * ((t4 / 2.0 - t3 + t) * self.y[k]
                + (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * h * self.d[k]
                + (-t4 / 2.0 + t3) * self.y[k + 1]
                + (t4 / 4.0 - t3 / 3.0) * h * self.d[k + 1])
        };
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let (a, b) = (self.x[k].max(lo), self.x[k + 1].min(hi));
            if b > a {
                let h = self.x[k + 1] - self.x[k];
                total += anti(k, (b - self.x[k]) / h) - anti(k, (a - self.x[k]) / h);
            }
        }
        total
    }
}

/// One-sided three-point end slope with shape preservation.
fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Least-squares cubic in `x - center`, coefficients lowest order first.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicFit {
    pub center: f64,
    pub coef: [f64; 4],
}

impl CubicFit {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() < 4 || y.len() != x.len() {
            return Err(Error::Metric(format!("cubic fit needs at least 4 points, got {}", x.len())));
        }
        let center = x.iter().sum::<f64>() / x.len() as f64;
        // normal equations
        let mut a = [[0.0f64; 5]; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let u = xi - center;
            let pw = [1.0, u, u * u, u * u * u];
            for r in 0..4 {
                for c in 0..4 {
                    a[r][c] += pw[r] * pw[c];
                }
                a[r][4] += pw[r] * yi;
            }
        }
        for col in 0..4 {
            let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows");
            a.swap(col, piv);
            if a[col][col].abs() < 1e-300 {
                return Err(Error::Metric("singular cubic fit".into()));
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..5 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let coef = [0, 1, 2, 3].map(|i| a[i][4] / a[i][i]);
        Ok(CubicFit { center, coef })
    }

    pub fn eval(&self, v: f64) -> f64 {
        let u = v - self.center;
        self.coef[0] + u * (self.coef[1] + u * (self.coef[2] + u * self.coef[3]))
    }

    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let anti = |v: f64| {
            let u = v - self.center;
            u * (self.coef[0] + u * (self.coef[1] / 2.0 + u * (self.coef[2] / 3.0 + u * self.coef[3] / 4.0)))
        };
        anti(hi) - anti(lo)
    }
}

enum Curve {
    Pchip(Pchip),
    Cubic(CubicFit),
}

impl Curve {
    fn fit(points: &[RdPoint], interp: BdInterp) -> Result<Self> {
        let x: Vec<f64> = points.iter().map(|p| p.psnr).collect();
        let y: Vec<f64> = points.iter().map(|p| p.rate.log10()).collect();
        Ok(match interp {
            BdInterp::Pchip => Curve::Pchip(Pchip::new(&x, &y)?),
            BdInterp::Cubic => Curve::Cubic(CubicFit::new(&x, &y)?),
        })
    }

    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Curve::Pchip(p) => p.integrate(lo, hi),
            Curve::Cubic(c) => c.integrate(lo, hi),
        }
    }
}

/// Bjøntegaard delta rate of `test` against `anchor` in percent; negative is a saving.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint], interp: BdInterp) -> Result<f64> {
    let min_points = match interp {
        BdInterp::Pchip => 3,
        BdInterp::Cubic => 4,
    };
    let a = validate_curve(anchor, min_points)?;
    let t = validate_curve(test, min_points)?;
    let lo = a[0].psnr.max(t[0].psnr);
    let hi = a[a.len() - 1].psnr.min(t[t.len() - 1].psnr);
    if !(hi > lo) {
        return Err(Error::Metric(format!("RD curves share no PSNR interval ({lo:.4} .. {hi:.4})")));
    }
    let ia = Curve::fit(&a, interp)?.integrate(lo, hi);
    let it = Curve::fit(&t, interp)?.integrate(lo, hi);
    let avg = (it - ia) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}
