//! A short two-stage run (Charbonnier, then MSE) on random patches of a synthetic pair.

use tvqe::data::{degrade_sequence, synthetic_sequence, DegradeProfile, PatchSource, SequencePair, SynthSpec};
use tvqe::model::{param_init, ModelConfig};
use tvqe::tensor::DType;
use tvqe::train::{two_stage_train, TrainHooks, TrainSchedule};

fn main() -> tvqe::error::Result<()> {
    let cfg = ModelConfig { dtype: DType::F32, ..ModelConfig::toy() };
    let raw = synthetic_sequence::<f32>(&SynthSpec::default())?;
    let (comp, _) = degrade_sequence(&raw, &DegradeProfile::preset(37))?;
    let mut source = PatchSource::new(vec![SequencePair::new(comp, raw)?])?;

    let schedule = TrainSchedule {
        stage1_steps: 20,
        stage2_steps: 10,
        lr: 1e-3,
        batch_size: 2,
        crop: 32,
        ..TrainSchedule::default()
    };
    let mut hooks = TrainHooks::default();
    hooks.on_step = Some(Box::new(|r| {
        if r.step % 5 == 0 {
            println!("step {:>3} stage {} charbonnier {:.5} mse {:.6}", r.step, r.stage, r.charbonnier, r.mse);
        }
    }));
    let out = two_stage_train(&cfg, param_init::<f32>(&cfg, 0)?, &mut source, &schedule, &mut hooks)?;
    drop(hooks);
    println!("{} steps, adam step count {}", out.history.len(), out.optim.step);
    Ok(())
}
