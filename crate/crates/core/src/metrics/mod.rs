//! Full-reference quality metrics, quality-gain reports and Bjøntegaard delta rate.

pub mod bdrate;
pub mod quality;
pub mod report;
pub mod series;

pub use bdrate::{bd_rate, validate_curve, BdInterp, CubicFit, Pchip, RdPoint};
pub use quality::{gaussian_taps, mse, psnr, ssim, Psnr, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{gnuplot_table, write_csv, BdRow, DeltaRow};
pub use series::{delta_metrics, fluctuation, mean_psnr, per_frame_series, DeltaMetrics, QualitySeries, SeriesRow};
