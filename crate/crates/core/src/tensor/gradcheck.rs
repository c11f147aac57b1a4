//! Central finite-difference verification of tape gradients (f64 only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative error.
pub const REL_GUARD: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_GUARD)
}

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
    /// Check at most this many coordinates per input (all when `None`).
    /// The coordinate with the largest analytic magnitude is always included.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Negates one backward rule in the analytic pass (fault-injection runs).
    pub fault: Option<OpKind>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            tol: 1e-5,
            max_coords: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// (input index, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tol: f64,
    /// Analytic gradients, one buffer per input.
    pub analytic: Vec<Vec<f64>>,
    /// Numeric gradients; unchecked coordinates are NaN.
    pub numeric: Vec<Vec<f64>>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }

    fn merge(&mut self, other: &FdReport) {
        let total = self.checked + other.checked;
        if total > 0 {
            self.mean_rel_err = (self.mean_rel_err * self.checked as f64
                + other.mean_rel_err * other.checked as f64)
                / total as f64;
        }
        self.checked = total;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
            self.worst = other.worst.or(self.worst);
        }
    }
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], fault: Option<OpKind>) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_backward_fault(fault);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Usage(format!(
            "finite-difference check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok((tape, vars, out))
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = eval(f, inputs, None)?;
    Ok(tape.value(out)[0])
}

/// Compares `backward()` against `(f(x+h·e) − f(x−h·e)) / 2h` coordinate by coordinate.
///
/// `f` must be deterministic; two fresh evaluations that differ bitwise yield
/// [`Error::Oracle`].
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = eval(&f, inputs, opts.fault)?;
    let base = tape.value(out)[0];
    let again = eval_scalar(&f, inputs)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {base:e} vs {again:e}"
        )));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = FdReport {
        tol: opts.tol,
        analytic: analytic.clone(),
        ..Default::default()
    };
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let top = (0..n)
                    .max_by(|&a, &b| analytic[i][a].abs().total_cmp(&analytic[i][b].abs()))
                    .unwrap_or(0);
                let mut c: Vec<usize> = sample(&mut rng, n, k).into_iter().collect();
                if !c.contains(&top) {
                    c[0] = top;
                }
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut numeric = vec![f64::NAN; n];
        let mut part = FdReport::default();
        let mut sum_rel = 0.0;
        for &c in &coords {
            let orig = input.data()[c];
            perturbed[i].data_mut()[c] = orig + opts.step;
            let plus = eval_scalar(&f, &perturbed)?;
            perturbed[i].data_mut()[c] = orig - opts.step;
            let minus = eval_scalar(&f, &perturbed)?;
            perturbed[i].data_mut()[c] = orig;
            let num = (plus - minus) / (2.0 * opts.step);
            numeric[c] = num;
            let a = analytic[i][c];
            let rel = relative_error(a, num);
            sum_rel += rel;
            part.max_abs_err = part.max_abs_err.max((a - num).abs());
            if rel > part.max_rel_err || part.worst.is_none() {
                part.max_rel_err = rel;
                part.worst = Some((i, c, a, num));
            }
        }
        part.checked = coords.len();
        part.mean_rel_err = if coords.is_empty() { 0.0 } else { sum_rel / coords.len() as f64 };
        report.merge(&part);
        report.numeric.push(numeric);
    }
    Ok(report)
}

/// Directional-derivative agreement for one input.
#[derive(Clone, Debug)]
pub struct DirectionalCheck {
    pub input: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// For each input, compares `⟨∇f, u⟩` against
/// `(f(x+h·u) − f(x−h·u)) / 2h` for a seeded random ±1 direction `u`, so
/// every coordinate of the input contributes to one check.
pub fn directional_check<F>(f: F, inputs: &[Tensor<f64>], opts: &FdOptions) -> Result<Vec<DirectionalCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = eval(&f, inputs, opts.fault)?;
    let grads = tape.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut perturbed = inputs.to_vec();
    let mut checks = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let u: Vec<f64> = (0..input.numel())
            .map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 })
            .collect();
        let analytic = grads
            .get(vars[i])
            .map_or(0.0, |g| g.iter().zip(&u).map(|(a, b)| a * b).sum());
        let shifted = |sign: f64| {
            let mut t = input.clone();
            t.data_mut().iter_mut().zip(&u).for_each(|(v, d)| *v += sign * opts.step * d);
            t
        };
        perturbed[i] = shifted(1.0);
        let plus = eval_scalar(&f, &perturbed)?;
        perturbed[i] = shifted(-1.0);
        let minus = eval_scalar(&f, &perturbed)?;
        perturbed[i] = input.clone();
        let numeric = (plus - minus) / (2.0 * opts.step);
        checks.push(DirectionalCheck {
            input: i,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(checks)
}

/// Per-op result of [`op_suite`].
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: OpKind,
    pub report: FdReport,
}

type OpCase = (OpKind, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rand::Rng::random_range(rng, lo..hi)).collect()).expect("positive extents")
}

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| uniform(shape, &mut rng, -2.0, 2.0);
    let pos = r(&[6]).data().iter().map(|v| 0.5 + v.abs()).collect::<Vec<_>>();
    vec![
        (OpKind::Add, vec![r(&[2, 3]), r(&[3])], Box::new(|t, v| t.add(v[0], v[1]))),
        (OpKind::Sub, vec![r(&[2, 1, 3]), r(&[4, 1])], Box::new(|t, v| t.sub(v[0], v[1]))),
        (OpKind::Mul, vec![r(&[2, 3]), r(&[2, 1])], Box::new(|t, v| t.mul(v[0], v[1]))),
        (OpKind::Scale, vec![r(&[5])], Box::new(|t, v| t.scale(v[0], -1.75))),
        (OpKind::AddScalar, vec![r(&[5])], Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        (OpKind::Sqrt, vec![Tensor::new(&[6], pos).expect("six values")], Box::new(|t, v| t.sqrt(v[0]))),
        (OpKind::Gelu, vec![r(&[4, 4])], Box::new(|t, v| t.gelu(v[0]))),
        (OpKind::Matmul, vec![r(&[2, 1, 3, 4]), r(&[3, 4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        (OpKind::Softmax, vec![r(&[2, 3, 4])], Box::new(|t, v| t.softmax(v[0], 1))),
        (OpKind::LayerNorm, vec![r(&[3, 6]), r(&[6]), r(&[6])], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        (
            OpKind::Conv2d,
            vec![r(&[1, 4, 5, 4]), r(&[4, 2, 3, 3]), r(&[4])],
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1, 2)),
        ),
        (OpKind::PixelShuffle, vec![r(&[2, 8, 3, 3])], Box::new(|t, v| t.pixel_shuffle(v[0], 2))),
        (OpKind::PixelUnshuffle, vec![r(&[1, 2, 4, 6])], Box::new(|t, v| t.pixel_unshuffle(v[0], 2))),
        (OpKind::Reshape, vec![r(&[2, 3, 4])], Box::new(|t, v| t.reshape(v[0], &[6, 4]))),
        (OpKind::Permute, vec![r(&[2, 3, 4])], Box::new(|t, v| t.permute(v[0], &[2, 0, 1]))),
        (OpKind::Roll, vec![r(&[3, 4, 2])], Box::new(|t, v| t.roll(v[0], 1, -3))),
        (OpKind::Narrow, vec![r(&[3, 5, 2])], Box::new(|t, v| t.narrow(v[0], 1, 1, 3))),
        (OpKind::Concat, vec![r(&[2, 3]), r(&[2, 1])], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        (OpKind::IndexSelect, vec![r(&[4, 3])], Box::new(|t, v| t.index_select(v[0], &[2, 0, 2, 3]))),
        (OpKind::Sum, vec![r(&[3, 3])], Box::new(|t, v| t.sum(v[0]))),
        (OpKind::Mean, vec![r(&[3, 3])], Box::new(|t, v| t.mean(v[0]))),
    ]
}

/// Finite-difference check of every differentiable op on random inputs in
/// `[-2, 2]` (positive for `sqrt`), each wrapped as `sum(w ⊙ op(x))` with a
/// fixed random `w`.
pub fn op_suite(opts: &FdOptions) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for (k, (op, inputs, f)) in op_cases(opts.seed).into_iter().enumerate() {
        let probe = {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let y = f(&mut t, &vars)?;
            t.shape(y).to_vec()
        };
        let w = uniform(&probe, &mut ChaCha8Rng::seed_from_u64(opts.seed + 1000 + k as u64), -2.0, 2.0);
        let report = finite_diff_check(
            |t, v| {
                let y = f(t, v)?;
                let wv = t.constant(w.shape(), w.data().to_vec())?;
                let p = t.mul(y, wv)?;
                t.sum(p)
            },
            &inputs,
            opts,
        )?;
        out.push(OpCheck { op, report });
    }
    Ok(out)
}
