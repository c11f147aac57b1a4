//! Losses, Adam, augmentation and the two-stage training loop.

mod adam;
mod augment;
mod check;
mod history;
mod loss;

pub use adam::{adam_step, clip_grad_norm, grad_norm, OptimState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_LR};
pub use augment::Augment;
pub use check::{check_problem, model_gradient_check, ModelCheckOptions, ModelCheckReport};
pub use history::{read_loss_csv, write_loss_csv, LossRecord};
pub use loss::{charbonnier_loss, combined_loss, mse_loss, LossConfig, LossTerms, CHARBONNIER_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tvqe_forward, ModelConfig};
use crate::params::ModelParams;
use crate::tensor::{Real, Tape, Tensor};

/// One training example: `2R+1` degraded planes and the raw target plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `[2R+1, s, s]`
    pub input: Tensor<T>,
    /// `[1, s, s]`
    pub target: Tensor<T>,
}

impl<T: Real> Sample<T> {
    /// Same transform on input and target.
    pub fn augmented(&self, aug: Augment) -> Result<Self> {
        Ok(Sample {
            input: aug.apply(&self.input)?,
            target: aug.apply(&self.target)?,
        })
    }
}

/// Supplies training samples; all randomness must come from `rng`.
pub trait SampleSource<T> {
    fn sample(&mut self, rng: &mut ChaCha8Rng, crop: usize, radius: usize) -> Result<Sample<T>>;
}

/// Cycles through a fixed sample list in order, ignoring crop requests.
pub struct FixedSamples<T> {
    pub samples: Vec<Sample<T>>,
    next: usize,
}

impl<T> FixedSamples<T> {
    pub fn new(samples: Vec<Sample<T>>) -> Self {
        FixedSamples { samples, next: 0 }
    }
}

impl<T: Real> SampleSource<T> for FixedSamples<T> {
    fn sample(&mut self, _rng: &mut ChaCha8Rng, _crop: usize, radius: usize) -> Result<Sample<T>> {
        if self.samples.is_empty() {
            return Err(Error::Usage("empty training set".into()));
        }
        let s = self.samples[self.next % self.samples.len()].clone();
        self.next += 1;
        if s.input.shape()[0] != 2 * radius + 1 {
            return Err(Error::Usage(format!(
                "sample has {} frames, model expects {}",
                s.input.shape()[0],
                2 * radius + 1
            )));
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    /// Steps with (α, β) = (1, 0).
    pub stage1_steps: usize,
    /// Steps with (α, β) = (0, 1).
    pub stage2_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
    pub augment: bool,
    /// Global-norm gradient clip; off when `None`.
    pub clip_grad_norm: Option<f64>,
    /// Checkpoint hook period in steps; 0 disables.
    pub checkpoint_every: usize,
    pub epsilon: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            stage1_steps: 200,
            stage2_steps: 50,
            lr: DEFAULT_LR,
            batch_size: 4,
            crop: 32,
            seed: 0,
            augment: true,
            clip_grad_norm: None,
            checkpoint_every: 0,
            epsilon: CHARBONNIER_EPS,
        }
    }
}

impl TrainSchedule {
    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    /// Stage number (1 or 2) and loss weights for a 0-based step.
    pub fn stage_at(&self, step: usize) -> (u8, LossConfig) {
        let (stage, alpha, beta) = if step < self.stage1_steps { (1, 1.0, 0.0) } else { (2, 0.0, 1.0) };
        (
            stage,
            LossConfig {
                alpha,
                beta,
                epsilon: self.epsilon,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop == 0 {
            return Err(Error::Config("batch_size and crop must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("lr {} and epsilon {} must be > 0", self.lr, self.epsilon)));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_grad_norm {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Stacks samples into `([b, 2R+1, s, s], [b, 1, s, s])`.
pub fn stack_batch<T: Real>(samples: &[Sample<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (is, ts) = (first.input.shape().to_vec(), first.target.shape().to_vec());
    let mut inp = Vec::with_capacity(samples.len() * first.input.numel());
    let mut tgt = Vec::with_capacity(samples.len() * first.target.numel());
    for s in samples {
        if s.input.shape() != is.as_slice() || s.target.shape() != ts.as_slice() {
            return Err(Error::dim("stack_batch", "samples differ in extent"));
        }
        inp.extend_from_slice(s.input.data());
        tgt.extend_from_slice(s.target.data());
    }
    let b = samples.len();
    Ok((
        Tensor::new(&[&[b][..], &is].concat(), inp)?,
        Tensor::new(&[&[b][..], &ts].concat(), tgt)?,
    ))
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug)]
pub struct StepLoss {
    pub total: f64,
    pub charbonnier: f64,
    pub mse: f64,
}

/// Forward + backward on one batch; gradients are added into `params`.
pub fn accumulate_batch_grads<T: Real>(
    params: &mut ModelParams<T>,
    cfg: &ModelConfig,
    input: &Tensor<T>,
    target: &Tensor<T>,
    loss_cfg: &LossConfig,
) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.leaf(input.clone());
    let y = tape.leaf(target.clone());
    let pred = tvqe_forward(&mut tape, &bound, cfg, x)?;
    let terms = combined_loss(&mut tape, pred, y, loss_cfg)?;
    let scalar = |v| tape.value(v)[0].to_f64().unwrap_or(f64::NAN);
    let loss = StepLoss {
        total: scalar(terms.total),
        charbonnier: scalar(terms.charbonnier),
        mse: scalar(terms.mse),
    };
    let grads = tape.backward(terms.total)?;
    params.accumulate_grads(&bound, &grads)?;
    Ok(loss)
}

/// Evaluates the loss terms without recording gradients.
pub fn evaluate_loss<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &Tensor<T>,
    target: &Tensor<T>,
    loss_cfg: &LossConfig,
) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.leaf(input.clone());
    let y = tape.leaf(target.clone());
    let pred = tvqe_forward(&mut tape, &bound, cfg, x)?;
    let terms = combined_loss(&mut tape, pred, y, loss_cfg)?;
    let scalar = |v| tape.value(v)[0].to_f64().unwrap_or(f64::NAN);
    Ok(StepLoss {
        total: scalar(terms.total),
        charbonnier: scalar(terms.charbonnier),
        mse: scalar(terms.mse),
    })
}

/// Callbacks invoked during [`two_stage_train`].
#[derive(Default)]
pub struct TrainHooks<'a, T> {
    pub on_step: Option<Box<dyn FnMut(&LossRecord) + 'a>>,
    pub on_checkpoint: Option<Box<dyn FnMut(usize, &ModelParams<T>, &OptimState<T>) -> Result<()> + 'a>>,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub optim: OptimState<T>,
    pub history: Vec<LossRecord>,
}

/// Stage 1 with Charbonnier, then stage 2 with MSE, constant learning rate.
///
/// Fully determined by `schedule.seed`, the initial parameters and the source.
pub fn two_stage_train<T: Real>(
    cfg: &ModelConfig,
    mut params: ModelParams<T>,
    source: &mut dyn SampleSource<T>,
    schedule: &TrainSchedule,
    hooks: &mut TrainHooks<'_, T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    schedule.validate()?;
    let mut optim = OptimState::new(&params, schedule.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut history = Vec::with_capacity(schedule.total_steps());

    for step in 0..schedule.total_steps() {
        let (stage, loss_cfg) = schedule.stage_at(step);
        let mut batch = Vec::with_capacity(schedule.batch_size);
        for _ in 0..schedule.batch_size {
            let s = source.sample(&mut rng, schedule.crop, cfg.radius)?;
            batch.push(if schedule.augment { s.augmented(Augment::draw(&mut rng))? } else { s });
        }
        let (input, target) = stack_batch(&batch)?;

        params.zero_grad();
        let loss = accumulate_batch_grads(&mut params, cfg, &input, &target, &loss_cfg).map_err(|e| match e {
            Error::NonFinite { op } => Error::Numeric(format!(
                "non-finite value in {op} at step {step} (stage {stage}, lr {})",
                optim.lr
            )),
            other => other,
        })?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged at step {step} (stage {stage}, lr {}): charbonnier {} mse {} total {}",
                optim.lr, loss.charbonnier, loss.mse, loss.total
            )));
        }
        if let Some(c) = schedule.clip_grad_norm {
            clip_grad_norm(&mut params, c);
        }
        adam_step(&mut params, &mut optim)?;

        let record = LossRecord {
            step: step + 1,
            stage,
            alpha: loss_cfg.alpha,
            beta: loss_cfg.beta,
            charbonnier: loss.charbonnier,
            mse: loss.mse,
            total: loss.total,
        };
        if let Some(f) = hooks.on_step.as_mut() {
            f(&record);
        }
        history.push(record);
        if schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0 {
            if let Some(f) = hooks.on_checkpoint.as_mut() {
                f(step + 1, &params, &optim)?;
            }
        }
    }
    Ok(TrainOutcome { params, optim, history })
}

#[cfg(test)]
mod tests;
