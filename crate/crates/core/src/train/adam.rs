use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 1e-4;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ModelParams<T>, lr: f64) -> Self {
        let zeros = || {
            let mut z = ModelParams::new();
            for (k, t) in params.iter() {
                z.insert(k, Tensor::zeros(t.shape()));
            }
            z
        };
        OptimState {
            step: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Global L2 norm of all gradient buffers.
pub fn grad_norm<T: Real>(params: &ModelParams<T>) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flatten()
        .map(|g| g.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales every gradient so the global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(params: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, t) in params.iter_mut() {
            if let Some(mut g) = t.take_grad() {
                g.iter_mut().for_each(|v| *v *= s);
                t.accumulate_grad(&g).expect("same extent");
            }
        }
    }
    norm
}

/// One bias-corrected Adam update from the parameters' grad buffers, which
/// are cleared afterwards.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, state: &mut OptimState<T>) -> Result<()> {
    if let Some(path) = params.iter().find(|(_, t)| t.grad().is_none()).map(|(k, _)| k.to_string()) {
        return Err(Error::Usage(format!("no gradient for parameter {path}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::lit(state.lr), T::lit(state.eps));
    for (path, p) in params.iter_mut() {
        let g = p.take_grad().expect("checked above");
        let m = state
            .m
            .get_mut(path)
            .ok_or_else(|| Error::Usage(format!("optimizer state lacks {path}")))?;
        let v = state
            .v
            .get_mut(path)
            .ok_or_else(|| Error::Usage(format!("optimizer state lacks {path}")))?;
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::Usage(format!("optimizer state shape mismatch for {path}")));
        }
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            md[i] = b1 * md[i] + (T::one() - b1) * g[i];
            vd[i] = b2 * vd[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
