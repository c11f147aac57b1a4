//! Runs the toy network on a synthetic degraded clip and reports the PSNR change.

use tvqe::data::{clip_window, degrade_sequence, synthetic_sequence, DegradeProfile, SynthSpec};
use tvqe::metrics::psnr;
use tvqe::model::{enhance_clip, param_init, param_shapes, ModelConfig};
use tvqe::tensor::DType;

fn main() -> tvqe::error::Result<()> {
    let cfg = ModelConfig { dtype: DType::F32, ..ModelConfig::toy() };
    let params = param_init::<f32>(&cfg, 0)?;
    println!("{} tensors, {} parameters", param_shapes(&cfg).len(), params.num_elements());

    let spec = SynthSpec { width: 48, height: 40, frames: 5, ..SynthSpec::default() };
    let raw = synthetic_sequence::<f32>(&spec)?;
    let (comp, _) = degrade_sequence(&raw, &DegradeProfile::preset(37))?;
    for t in 0..spec.frames {
        let clip = clip_window(&comp, t, cfg.radius)?;
        let y = enhance_clip(&params, &cfg, &clip)?;
        println!(
            "frame {t}: clip {:?}, output {:?}, psnr {} -> {}",
            clip.timestamps,
            y.shape(),
            psnr(&comp[t], &raw[t], 1.0)?,
            psnr(&y, &raw[t], 1.0)?
        );
    }
    Ok(())
}
