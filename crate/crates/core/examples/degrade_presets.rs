//! Rate/quality of the block-DCT degrader at each preset q.

use tvqe::data::{degrade_sequence, rate_proxy_kbps, synthetic_sequence, DegradeProfile, SynthSpec, PRESET_QPS};
use tvqe::metrics::{mean_psnr, ssim};

fn main() -> tvqe::error::Result<()> {
    let spec = SynthSpec { width: 96, height: 64, frames: 6, ..SynthSpec::default() };
    let raw = synthetic_sequence::<f64>(&spec)?;
    println!("{:>3} {:>8} {:>10} {:>8} {:>7}", "q", "step", "kbps", "psnr", "ssim0");
    for q in PRESET_QPS {
        let profile = DegradeProfile::preset(q);
        let (comp, stats) = degrade_sequence(&raw, &profile)?;
        let (p, _) = mean_psnr(&comp, &raw)?;
        println!(
            "{q:>3} {:>8.5} {:>10.2} {:>8.3} {:>7.4}",
            profile.base_step(),
            rate_proxy_kbps(&stats, raw.len(), 30.0),
            p.unwrap_or(f64::INFINITY),
            ssim(&comp[0], &raw[0])?
        );
    }
    Ok(())
}
