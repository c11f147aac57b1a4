use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

pub const CHARBONNIER_EPS: f64 = 1e-6;

/// `α·Charbonnier + β·MSE`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 0.0,
            epsilon: CHARBONNIER_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("loss weights must be ≥ 0, got α={} β={}", self.alpha, self.beta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("charbonnier epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

fn check_extents<T: Real>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(op, format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

/// `mean(sqrt((pred − target)² + ε))`
pub fn charbonnier_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, epsilon: f64) -> Result<Var> {
    check_extents(tape, "charbonnier_loss", pred, target)?;
    let d = tape.sub(pred, target)?;
    let d2 = tape.mul(d, d)?;
    let s = tape.add_scalar(d2, T::lit(epsilon))?;
    let r = tape.sqrt(s)?;
    tape.mean(r)
}

/// `mean((pred − target)²)`
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    check_extents(tape, "mse_loss", pred, target)?;
    let d = tape.sub(pred, target)?;
    let d2 = tape.mul(d, d)?;
    tape.mean(d2)
}

/// Handles to the individual terms, for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub charbonnier: Var,
    pub mse: Var,
}

pub fn combined_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let charbonnier = charbonnier_loss(tape, pred, target, cfg.epsilon)?;
    let mse = mse_loss(tape, pred, target)?;
    let a = tape.scale(charbonnier, T::lit(cfg.alpha))?;
    let b = tape.scale(mse, T::lit(cfg.beta))?;
    let total = tape.add(a, b)?;
    Ok(LossTerms { total, charbonnier, mse })
}
