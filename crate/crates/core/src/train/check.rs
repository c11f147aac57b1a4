use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{combined_loss, LossConfig};
use crate::error::Result;
use crate::model::{param_init, tvqe_forward, ModelConfig};
use crate::params::{BoundParams, ModelParams};
use crate::tensor::gradcheck::{directional_check, finite_diff_check, DirectionalCheck, FdOptions, FdReport};
use crate::tensor::{OpKind, Tensor};

/// End-to-end gradient check of network + loss.
#[derive(Clone, Debug)]
pub struct ModelCheckOptions {
    pub height: usize,
    pub width: usize,
    /// Coordinates checked individually per parameter tensor (largest-gradient one included).
    pub coords_per_tensor: usize,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
    /// Half-width of the uniform noise added to the initialized parameters,
    /// which lifts gradients above finite-difference rounding noise.
    pub perturb: f64,
    pub loss: LossConfig,
    pub fault: Option<OpKind>,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        ModelCheckOptions {
            height: 16,
            width: 16,
            coords_per_tensor: 4,
            step: 1e-4,
            tol: 1e-4,
            seed: 0,
            perturb: 0.2,
            loss: LossConfig::default(),
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelCheckReport {
    pub paths: Vec<String>,
    pub coordinates: FdReport,
    pub directional: Vec<DirectionalCheck>,
    pub tol: f64,
}

impl ModelCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.directional
            .iter()
            .map(|d| d.rel_err)
            .fold(self.coordinates.max_rel_err, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }

    /// Parameter path of the worst coordinate or direction.
    pub fn worst_path(&self) -> Option<&str> {
        let coord = self.coordinates.worst.map(|w| (w.0, self.coordinates.max_rel_err));
        let dir = self
            .directional
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .map(|d| (d.input, d.rel_err));
        let pick = match (coord, dir) {
            (Some(c), Some(d)) => Some(if d.1 > c.1 { d.0 } else { c.0 }),
            (c, d) => c.or(d).map(|x| x.0),
        };
        pick.and_then(|i| self.paths.get(i)).map(String::as_str)
    }

    /// Scalar coordinates touched by the per-coordinate pass.
    pub fn coordinates_checked(&self) -> usize {
        self.coordinates.checked
    }
}

/// Perturbed initial parameters plus a random clip and target in `[0, 1]`.
pub fn check_problem(cfg: &ModelConfig, opts: &ModelCheckOptions) -> Result<(ModelParams<f64>, Tensor<f64>, Tensor<f64>)> {
    let mut params = param_init::<f64>(cfg, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    if opts.perturb > 0.0 {
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-opts.perturb..opts.perturb);
            }
        }
    }
    let (h, w, f) = (opts.height, opts.width, cfg.frames());
    let frames = Tensor::new(&[1, f, h, w], (0..f * h * w).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let target = Tensor::new(&[1, 1, h, w], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect())?;
    Ok((params, frames, target))
}

/// Checks every parameter tensor of the combined loss: sampled coordinates
/// plus one random ±1 direction spanning the whole tensor.
pub fn model_gradient_check(cfg: &ModelConfig, opts: &ModelCheckOptions) -> Result<ModelCheckReport> {
    cfg.validate()?;
    let (params, frames, target) = check_problem(cfg, opts)?;
    let paths: Vec<String> = params.paths().map(String::from).collect();
    let inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let f = |t: &mut crate::tensor::Tape<f64>, v: &[crate::tensor::Var]| {
        let b = BoundParams::from_pairs(paths.iter().cloned().zip(v.iter().copied()));
        let x = t.constant(frames.shape(), frames.data().to_vec())?;
        let y = t.constant(target.shape(), target.data().to_vec())?;
        let pred = tvqe_forward(t, &b, cfg, x)?;
        Ok(combined_loss(t, pred, y, &opts.loss)?.total)
    };
    let fd = FdOptions {
        step: opts.step,
        tol: opts.tol,
        max_coords: Some(opts.coords_per_tensor),
        seed: opts.seed,
        fault: opts.fault,
    };
    let coordinates = finite_diff_check(f, &inputs, &fd)?;
    let directional = directional_check(f, &inputs, &fd)?;
    Ok(ModelCheckReport {
        paths,
        coordinates,
        directional,
        tol: opts.tol,
    })
}
