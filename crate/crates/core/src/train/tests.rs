use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::model::{param_init, ModelConfig};
use crate::tensor::DType;

fn uniform(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::new(shape, uniform(shape.iter().product(), seed, 0.0, 1.0)).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape<f64>) -> Result<crate::tensor::Var>) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t).unwrap();
    t.value(v)[0]
}

fn pair(a: &Tensor<f64>, b: &Tensor<f64>, f: impl FnOnce(&mut Tape<f64>, crate::tensor::Var, crate::tensor::Var) -> Result<crate::tensor::Var>) -> f64 {
    eval(|t| {
        let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
        f(t, x, y)
    })
}

// ---- losses ----

#[test]
fn charbonnier_closed_forms() {
    let a = tensor(&[2, 3, 4], 1);
    let same = pair(&a, &a, |t, x, y| charbonnier_loss(t, x, y, 1e-6));
    assert_eq!(same, 1e-3);

    let b = Tensor::new(a.shape(), a.data().iter().map(|v| v + 3e-3).collect()).unwrap();
    let l = pair(&b, &a, |t, x, y| charbonnier_loss(t, x, y, 1e-6));
    assert!((l - 1e-5f64.sqrt()).abs() < 1e-12, "{l}");
    assert!((l - 3.1623e-3).abs() < 1e-7);

    let far = Tensor::new(a.shape(), a.data().iter().map(|v| v + 5.0).collect()).unwrap();
    let l = pair(&far, &a, |t, x, y| charbonnier_loss(t, x, y, 1e-6));
    assert!((l - 5.0).abs() < 1e-6);
}

#[test]
fn mse_matches_direct_formula() {
    let (a, b) = (tensor(&[3, 7], 2), tensor(&[3, 7], 3));
    assert_eq!(pair(&a, &a, mse_loss), 0.0);
    let want = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 21.0;
    assert!((pair(&a, &b, mse_loss) - want).abs() < 1e-9);
    let c = Tensor::new(a.shape(), a.data().iter().map(|v| v - 0.25).collect()).unwrap();
    assert!((pair(&a, &c, mse_loss) - 0.0625).abs() < 1e-12);
}

#[test]
fn loss_extent_mismatch_is_an_error() {
    let mut t = Tape::new();
    let x = t.leaf(tensor(&[2, 2], 1));
    let y = t.leaf(tensor(&[4], 2));
    assert!(matches!(charbonnier_loss(&mut t, x, y, 1e-6), Err(Error::Dimension { .. })));
    assert!(matches!(mse_loss(&mut t, x, y), Err(Error::Dimension { .. })));
}

#[test]
fn combined_loss_stage_settings() {
    let (a, b) = (tensor(&[4, 4], 4), tensor(&[4, 4], 5));
    let with = |alpha, beta| {
        let cfg = LossConfig { alpha, beta, epsilon: 1e-6 };
        pair(&a, &b, |t, x, y| Ok(combined_loss(t, x, y, &cfg)?.total))
    };
    assert_eq!(with(1.0, 0.0), pair(&a, &b, |t, x, y| charbonnier_loss(t, x, y, 1e-6)));
    assert_eq!(with(0.0, 1.0), pair(&a, &b, mse_loss));

    let mut t = Tape::new();
    let x = t.leaf(a.clone().with_requires_grad(true));
    let y = t.leaf(b.clone());
    let terms = combined_loss(&mut t, x, y, &LossConfig { alpha: 0.0, beta: 0.0, epsilon: 1e-6 }).unwrap();
    assert_eq!(t.value(terms.total)[0], 0.0);
    let g = t.backward(terms.total).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 0.0));

    assert!(LossConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
    assert!(LossConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn charbonnier_is_bounded_below(seed in 0u64..10_000, shift in -1.0f64..1.0) {
        let a = tensor(&[3, 3], seed);
        let b = Tensor::new(a.shape(), a.data().iter().enumerate().map(|(i, v)| if i == 4 { v + shift } else { *v }).collect()).unwrap();
        let l = pair(&a, &b, |t, x, y| charbonnier_loss(t, x, y, 1e-6));
        prop_assert!(l >= 1e-3);
        if shift != 0.0 {
            prop_assert!(l > 1e-3);
        }
    }

    #[test]
    fn adam_first_step_sign_is_scale_free(g in prop::collection::vec(-10.0f64..10.0, 1..20), c in 0.01f64..100.0) {
        let run = |scale: f64| {
            let mut p = ModelParams::new();
            p.insert("w", Tensor::zeros(&[g.len()]));
            let mut st = OptimState::new(&p, 1e-3);
            let grad: Vec<f64> = g.iter().map(|v| v * scale).collect();
            p.get_mut("w").unwrap().accumulate_grad(&grad).unwrap();
            adam_step(&mut p, &mut st).unwrap();
            p.get("w").unwrap().data().to_vec()
        };
        let (a, b) = (run(1.0), run(c));
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.signum() == y.signum() || (*x == 0.0 && *y == 0.0), true);
        }
    }
}

// ---- Adam ----

#[test]
fn adam_zero_gradient_changes_only_step() {
    let mut p = ModelParams::new();
    p.insert("w", tensor(&[5], 6));
    let before = p.clone();
    let mut st = OptimState::new(&p, 1e-4);
    p.get_mut("w").unwrap().accumulate_grad(&[0.0; 5]).unwrap();
    adam_step(&mut p, &mut st).unwrap();
    assert_eq!(p.get("w").unwrap().data(), before.get("w").unwrap().data());
    assert_eq!(st.step, 1);
    assert!(st.m.get("w").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(st.v.get("w").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(p.get("w").unwrap().grad().is_none());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = ModelParams::new();
    p.insert("w", Tensor::zeros(&[3]));
    let mut st = OptimState::new(&p, 1e-4);
    let g: [f64; 3] = [0.5, -2.0, 1e-3];
    p.get_mut("w").unwrap().accumulate_grad(&g).unwrap();
    adam_step(&mut p, &mut st).unwrap();
    for (w, g) in p.get("w").unwrap().data().iter().zip(g) {
        let want = -1e-4 * g / (g.abs() + 1e-8);
        assert!((w - want).abs() < 1e-15, "{w} vs {want}");
    }
}

#[test]
fn adam_names_missing_gradient() {
    let mut p = ModelParams::new();
    p.insert("a.w", Tensor::zeros(&[2]));
    p.insert("b.w", Tensor::zeros(&[2]));
    let mut st = OptimState::new(&p, 1e-4);
    p.get_mut("a.w").unwrap().accumulate_grad(&[1.0, 1.0]).unwrap();
    match adam_step(&mut p, &mut st) {
        Err(Error::Usage(m)) => assert!(m.contains("b.w"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn clipping_bounds_global_norm() {
    let mut p = ModelParams::new();
    p.insert("w", Tensor::zeros(&[2]));
    p.get_mut("w").unwrap().accumulate_grad(&[3.0, 4.0]).unwrap();
    assert_eq!(clip_grad_norm(&mut p, 1.0), 5.0);
    assert!((grad_norm(&p) - 1.0).abs() < 1e-12);
}

// ---- augmentation ----

#[test]
fn augmentation_group_laws() {
    let x = tensor(&[3, 5, 5], 7);
    assert_eq!(Augment::IDENTITY.apply(&x).unwrap(), x);
    let h = Augment { hflip: true, ..Augment::IDENTITY };
    assert_eq!(h.apply(&h.apply(&x).unwrap()).unwrap(), x);
    let r = Augment { quarter_turns: 1, ..Augment::IDENTITY };
    let mut y = x.clone();
    for _ in 0..4 {
        y = r.apply(&y).unwrap();
    }
    assert_eq!(y, x);
    let two = r.apply(&r.apply(&x).unwrap()).unwrap();
    assert_eq!(two, Augment { quarter_turns: 2, ..Augment::IDENTITY }.apply(&x).unwrap());

    let rect = tensor(&[1, 2, 3], 8);
    assert!(matches!(r.apply(&rect), Err(Error::Usage(_))));
    assert!(h.apply(&rect).is_ok());
}

#[test]
fn rotation_moves_corners() {
    let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
    let r = Augment { quarter_turns: 1, ..Augment::IDENTITY };
    // counter-clockwise: top row becomes left column read upwards
    assert_eq!(r.apply(&x).unwrap().data(), &[2., 4., 1., 3.]);
}

#[test]
fn augmentation_keeps_pairing() {
    let raw = tensor(&[1, 6, 6], 9);
    let comp = Tensor::new(raw.shape(), raw.data().iter().zip(uniform(36, 10, -0.05, 0.05)).map(|(a, b)| a + b).collect()).unwrap();
    let mse = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let s = Sample { input: comp.clone(), target: raw.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..8 {
        let a = s.augmented(Augment::draw(&mut rng)).unwrap();
        assert!((mse(&a.input, &a.target) - mse(&comp, &raw)).abs() < 1e-15);
    }
}

// ---- loop ----

fn micro() -> ModelConfig {
    ModelConfig {
        radius: 1,
        window_size: 2,
        depths: [1, 1, 1],
        heads: [1, 1, 1],
        embed_dim: 4,
        num_restormers: 1,
        dtype: DType::F64,
        ..ModelConfig::default()
    }
}

fn fixed(n: usize, s: usize) -> FixedSamples<f64> {
    FixedSamples::new(
        (0..n as u64)
            .map(|i| {
                let target = tensor(&[1, s, s], 100 + i);
                let input = Tensor::new(
                    &[3, s, s],
                    (0..3).flat_map(|_| target.data().iter().zip(uniform(s * s, 200 + i, -0.1, 0.1)).map(|(a, b)| a + b)).collect(),
                )
                .unwrap();
                Sample { input, target }
            })
            .collect(),
    )
}

#[test]
fn zero_step_schedule_returns_initial_params() {
    let cfg = micro();
    let p = param_init::<f64>(&cfg, 1).unwrap();
    let sched = TrainSchedule { stage1_steps: 0, stage2_steps: 0, ..Default::default() };
    let out = two_stage_train(&cfg, p.clone(), &mut fixed(2, 16), &sched, &mut TrainHooks::default()).unwrap();
    assert_eq!(out.params, p);
    assert!(out.history.is_empty());
}

#[test]
fn training_is_reproducible_and_staged() {
    let cfg = micro();
    let sched = TrainSchedule { stage1_steps: 3, stage2_steps: 2, batch_size: 2, crop: 16, checkpoint_every: 2, ..Default::default() };
    let run = || {
        let mut ckpts = Vec::new();
        let mut hooks = TrainHooks {
            on_checkpoint: Some(Box::new(|s, _: &ModelParams<f64>, _: &OptimState<f64>| {
                ckpts.push(s);
                Ok(())
            })),
            ..Default::default()
        };
        let out = two_stage_train(&cfg, param_init::<f64>(&cfg, 2).unwrap(), &mut fixed(3, 16), &sched, &mut hooks).unwrap();
        drop(hooks);
        (out, ckpts)
    };
    let ((a, ca), (b, _)) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert_eq!(ca, [2, 4]);
    assert_eq!(a.optim.step, 5);
    let stages: Vec<(u8, f64, f64)> = a.history.iter().map(|r| (r.stage, r.alpha, r.beta)).collect();
    assert_eq!(stages, [(1, 1.0, 0.0), (1, 1.0, 0.0), (1, 1.0, 0.0), (2, 0.0, 1.0), (2, 0.0, 1.0)]);
    assert_eq!(a.history[3].total, a.history[3].mse);
}

#[test]
fn loss_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let rows = vec![
        LossRecord { step: 1, stage: 1, alpha: 1.0, beta: 0.0, charbonnier: 0.5, mse: 0.25, total: 0.5 },
        LossRecord { step: 2, stage: 2, alpha: 0.0, beta: 1.0, charbonnier: 0.4, mse: 0.2, total: 0.2 },
    ];
    write_loss_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,stage,alpha,beta,charbonnier,mse,total\n"));
    assert_eq!(read_loss_csv(&path).unwrap(), rows);
}

#[test]
fn loss_gradient_matches_finite_differences_in_both_stages() {
    for (alpha, beta) in [(1.0, 0.0), (0.0, 1.0)] {
        let opts = ModelCheckOptions {
            loss: LossConfig { alpha, beta, epsilon: 1e-6 },
            coords_per_tensor: 2,
            ..Default::default()
        };
        let report = model_gradient_check(&micro(), &opts).unwrap();
        assert!(report.passed(), "α={alpha}: {} at {:?}", report.max_rel_err(), report.worst_path());
        assert_eq!(report.directional.len(), report.paths.len());
    }
}

#[test]
fn model_check_flags_injected_fault() {
    let opts = ModelCheckOptions { fault: Some(crate::tensor::OpKind::LayerNorm), coords_per_tensor: 1, ..Default::default() };
    let report = model_gradient_check(&micro(), &opts).unwrap();
    assert!(!report.passed());
}
