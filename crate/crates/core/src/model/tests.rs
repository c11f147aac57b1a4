use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::layer_norm_channels;
use crate::tensor::DType;

fn uniform(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::new(shape, uniform(shape.iter().product(), seed, -1.0, 1.0)).unwrap()
}

/// Smallest config that still exercises every stage.
fn micro() -> ModelConfig {
    ModelConfig {
        radius: 1,
        window_size: 2,
        depths: [1, 2, 1],
        heads: [2, 2, 2],
        embed_dim: 4,
        num_restormers: 1,
        dtype: DType::F64,
        ..ModelConfig::default()
    }
}

/// Initialized params with every tensor perturbed so the test sees non-trivial values.
fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = param_init::<f64>(cfg, seed).unwrap();
    for (i, (_, t)) in p.iter_mut().enumerate() {
        let n = t.numel();
        for (v, r) in t.data_mut().iter_mut().zip(uniform(n, seed * 1000 + i as u64, -0.2, 0.2)) {
            *v += r;
        }
    }
    p
}

fn run(p: &ModelParams<f64>, f: impl FnOnce(&mut Tape<f64>, &BoundParams) -> Result<Var>) -> Result<Tensor<f64>> {
    let mut t = Tape::new();
    let b = p.bind(&mut t, false);
    let y = f(&mut t, &b)?;
    Ok(t.tensor(y))
}

fn set(p: &mut ModelParams<f64>, path: &str, f: impl Fn(usize) -> f64) {
    let t = p.get_mut(path).unwrap_or_else(|| panic!("no {path}"));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn data(p: &ModelParams<f64>, path: &str) -> Vec<f64> {
    p.get(path).unwrap().data().to_vec()
}

// ---- config and init ----

#[test]
fn default_config_values() {
    let c = ModelConfig::default();
    assert_eq!((c.window_size, c.depths, c.heads, c.embed_dim), (8, [2, 2, 2], [2, 2, 2], 48));
    assert_eq!((c.mlp_ratio, c.num_restormers, c.radius), (1.0, 4, 3));
    c.validate().unwrap();
    ModelConfig::toy().validate().unwrap();
    let bad = ModelConfig {
        heads: [5, 2, 2],
        ..ModelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

/// Independent tally over the config algebra.
fn closed_form_count(cfg: &ModelConfig) -> usize {
    let (d, f, p, ws) = (cfg.embed_dim, 2 * cfg.radius + 1, cfg.patch, cfg.window_size);
    let block = |c: usize, heads: usize| {
        let hid = (c as f64 * cfg.mlp_ratio).round() as usize;
        4 * c + 3 * c * c + 2 * c + c * c + c + (2 * ws - 1) * (2 * ws - 1) * heads + hid * c + hid + c * hid + c
    };
    let mut n = d * f * p * p + d;
    for k in 0..3 {
        let c = d << k;
        n += 2 * cfg.depths[k] * block(c, cfg.heads[k]);
    }
    n += 8 * d + 8 * d * d; // merge d -> 2d
    n += 16 * d + 32 * d * d; // merge 2d -> 4d
    n += 2 * (4 * d) * (4 * d); // expand 4d
    n += 2 * (2 * d) * (2 * d); // expand 2d
    n += d * d * p * p + d * p * p;
    let e = cfg.gdfn_expansion * d;
    let res = 4 * d + (3 * d * d + 3 * d) + (27 * d + 3 * d) + (d * d + d) + (2 * e * d + 2 * e) + (18 * e + 2 * e) + (d * e + d);
    n += cfg.num_restormers * res;
    n + 9 * d + 1
}

#[test]
fn parameter_count_matches_closed_form() {
    for cfg in [ModelConfig::default(), ModelConfig::toy(), micro()] {
        let p = param_init::<f32>(&cfg, 0).unwrap();
        assert_eq!(p.num_elements(), closed_form_count(&cfg), "{cfg:?}");
        assert_eq!(p.len(), param_shapes(&cfg).len());
    }
}

#[test]
fn init_is_seeded() {
    let cfg = micro();
    let a = param_init::<f64>(&cfg, 7).unwrap();
    let b = param_init::<f64>(&cfg, 7).unwrap();
    let c = param_init::<f64>(&cfg, 8).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().zip(c.iter()).any(|((_, x), (_, y))| x.data() != y.data()));
}

#[test]
fn init_follows_rules() {
    let p = param_init::<f64>(&ModelConfig::default(), 1).unwrap();
    for (path, t) in p.iter() {
        let d = t.data();
        if path.ends_with("norm1.weight") || path.ends_with("norm2.weight") || path.ends_with("norm.weight") {
            assert!(d.iter().all(|&v| v == 1.0), "{path}");
        } else if path.ends_with("bias") || path.ends_with("relative_position_bias_table") {
            assert!(d.iter().all(|&v| v == 0.0), "{path}");
        } else {
            assert!(d.iter().all(|&v| v.abs() <= 2.0 * INIT_STD), "{path}");
            let std = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
            if d.len() > 1000 {
                assert!((std - 0.88 * INIT_STD).abs() < 0.1 * INIT_STD, "{path}: {std}");
            }
        }
    }
}

#[test]
fn reflect_index_folds() {
    let got: Vec<usize> = (0..9).map(|i| reflect_index(i, 3)).collect();
    assert_eq!(got, [0, 1, 2, 1, 0, 1, 2, 1, 0]);
    assert_eq!(reflect_index(5, 1), 0);
}

// ---- MDTA ----

#[test]
fn mdta_single_channel_returns_value() {
    let mut p = ModelParams::new();
    p.insert("a.qkv.weight", tensor(&[3, 1, 1, 1], 1));
    p.insert("a.qkv.bias", tensor(&[3], 2));
    p.insert("a.qkv_dw.weight", tensor(&[3, 1, 3, 3], 3));
    p.insert("a.qkv_dw.bias", tensor(&[3], 4));
    p.insert("a.project_out.weight", Tensor::full(&[1, 1, 1, 1], 1.0));
    p.insert("a.project_out.bias", Tensor::zeros(&[1]));
    let x = tensor(&[1, 1, 3, 3], 5);
    let (m, v) = {
        let mut t = Tape::new();
        let b = p.bind(&mut t, false);
        let xv = t.leaf(x.clone());
        let m = mdta_attention(&mut t, &b, "a", xv, 1).unwrap();
        let qkv = conv_at(&mut t, &b, "a.qkv", xv, 0, 1).unwrap();
        let qkv = conv_at(&mut t, &b, "a.qkv_dw", qkv, 1, 3).unwrap();
        let v = t.narrow(qkv, 1, 2, 1).unwrap();
        (t.tensor(m), t.tensor(v))
    };
    assert_eq!(m.data(), v.data());
}

fn mdta_params(c: usize, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::new();
    p.insert("a.qkv.weight", tensor(&[3 * c, c, 1, 1], seed));
    p.insert("a.qkv.bias", tensor(&[3 * c], seed + 1));
    p.insert("a.qkv_dw.weight", tensor(&[3 * c, 1, 3, 3], seed + 2));
    p.insert("a.qkv_dw.bias", tensor(&[3 * c], seed + 3));
    p.insert("a.project_out.weight", tensor(&[c, c, 1, 1], seed + 4));
    p.insert("a.project_out.bias", tensor(&[c], seed + 5));
    p
}

#[test]
fn mdta_matches_channel_attention_oracle() {
    let (c, h, w) = (2, 2, 2);
    let hw = h * w;
    let p = mdta_params(c, 10);
    let x = tensor(&[1, c, h, w], 11);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        mdta_forward(t, b, "a", xv, 1)
    })
    .unwrap();
    assert_eq!(y.shape(), x.shape());

    let (pw, pb) = (data(&p, "a.qkv.weight"), data(&p, "a.qkv.bias"));
    let (dw, db) = (data(&p, "a.qkv_dw.weight"), data(&p, "a.qkv_dw.bias"));
    let xd = x.data();
    let mut pwo = vec![0.0; 3 * c * hw];
    for o in 0..3 * c {
        for px in 0..hw {
            pwo[o * hw + px] = pb[o] + (0..c).map(|i| pw[o * c + i] * xd[i * hw + px]).sum::<f64>();
        }
    }
    let mut qkv = vec![0.0; 3 * c * hw];
    for o in 0..3 * c {
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = db[o];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += dw[o * 9 + ky * 3 + kx] * pwo[o * hw + sy as usize * w + sx as usize];
                        }
                    }
                }
                qkv[o * hw + yy * w + xx] = acc;
            }
        }
    }
    let ch = |part: usize, i: usize| &qkv[(part * c + i) * hw..(part * c + i + 1) * hw];
    // logits[i][j] = <K_i, Q_j> / sqrt(hw), softmax over i
    let mut attn = [[0.0; 2]; 2];
    for j in 0..c {
        let logits: Vec<f64> = (0..c)
            .map(|i| ch(1, i).iter().zip(ch(0, j)).map(|(a, b)| a * b).sum::<f64>() / (hw as f64).sqrt())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for i in 0..c {
            attn[i][j] = logits[i].exp() / z;
        }
    }
    let mut m = vec![0.0; c * hw];
    for j in 0..c {
        for px in 0..hw {
            m[j * hw + px] = (0..c).map(|i| attn[i][j] * ch(2, i)[px]).sum();
        }
    }
    let (ow, ob) = (data(&p, "a.project_out.weight"), data(&p, "a.project_out.bias"));
    for o in 0..c {
        for px in 0..hw {
            let proj = ob[o] + (0..c).map(|i| ow[o * c + i] * m[i * hw + px]).sum::<f64>();
            let want = xd[o * hw + px] + proj;
            assert!((y.data()[o * hw + px] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn mdta_heads_split_channels() {
    let p = mdta_params(4, 20);
    let x = tensor(&[2, 4, 3, 5], 21);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        mdta_forward(t, b, "a", xv, 2)
    })
    .unwrap();
    assert_eq!(y.shape(), x.shape());
    let err = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        mdta_forward(t, b, "a", xv, 3)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

// ---- GDFN ----

fn gdfn_params(c: usize, e: usize, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::new();
    p.insert("f.project_in.weight", tensor(&[2 * e, c, 1, 1], seed));
    p.insert("f.project_in.bias", tensor(&[2 * e], seed + 1));
    p.insert("f.dwconv.weight", tensor(&[2 * e, 1, 3, 3], seed + 2));
    p.insert("f.dwconv.bias", tensor(&[2 * e], seed + 3));
    p.insert("f.project_out.weight", tensor(&[c, e, 1, 1], seed + 4));
    p.insert("f.project_out.bias", tensor(&[c], seed + 5));
    p
}

/// Two explicit branches built from separate conv / gelu calls.
fn gdfn_oracle(p: &ModelParams<f64>, x: &Tensor<f64>, e: usize) -> Tensor<f64> {
    let c = x.shape()[1];
    let half = |path: &str, from: usize, per: usize| {
        Tensor::new(
            &[&[e][..], &p.get(path).unwrap().shape()[1..]].concat(),
            data(p, path)[from * e * per..(from + 1) * e * per].to_vec(),
        )
        .unwrap()
    };
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let branch = |t: &mut Tape<f64>, k: usize| {
        let w1 = t.leaf(half("f.project_in.weight", k, c));
        let b1 = t.leaf(half("f.project_in.bias", k, 1));
        let w2 = t.leaf(half("f.dwconv.weight", k, 9));
        let b2 = t.leaf(half("f.dwconv.bias", k, 1));
        let y = t.conv2d(xv, w1, Some(b1), 1, 0, 1).unwrap();
        t.conv2d(y, w2, Some(b2), 1, 1, e).unwrap()
    };
    let a = branch(&mut t, 0);
    let b = branch(&mut t, 1);
    let g = t.gelu(a).unwrap();
    let z = t.mul(g, b).unwrap();
    let wo = t.leaf(p.get("f.project_out.weight").unwrap().clone());
    let bo = t.leaf(p.get("f.project_out.bias").unwrap().clone());
    let z = t.conv2d(z, wo, Some(bo), 1, 0, 1).unwrap();
    let y = t.add(xv, z).unwrap();
    t.tensor(y)
}

#[test]
fn gdfn_matches_two_branch_composition() {
    let (c, e) = (4, 8);
    let p = gdfn_params(c, e, 30);
    let x = tensor(&[1, c, 4, 4], 31);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        gdfn_forward(t, b, "f", xv)
    })
    .unwrap();
    assert_eq!(y, gdfn_oracle(&p, &x, e));
}

#[test]
fn gdfn_gate_neutralization() {
    let (c, e) = (3, 6);
    let x = tensor(&[1, c, 4, 4], 41);

    // second branch constant 1: plain pw -> dw -> GELU -> pw feed-forward
    let mut p = gdfn_params(c, e, 40);
    set(&mut p, "f.project_in.weight", |i| if i >= e * c { 0.0 } else { 0.3 * ((i % 5) as f64 - 2.0) });
    set(&mut p, "f.project_in.bias", |i| if i >= e { 0.0 } else { 0.1 });
    set(&mut p, "f.dwconv.bias", |i| if i >= e { 1.0 } else { -0.05 });
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        gdfn_forward(t, b, "f", xv)
    })
    .unwrap();
    let want = {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let pi = p.get("f.project_in.weight").unwrap();
        let w1 = t.leaf(Tensor::new(&[e, c, 1, 1], pi.data()[..e * c].to_vec()).unwrap());
        let b1 = t.leaf(Tensor::new(&[e], data(&p, "f.project_in.bias")[..e].to_vec()).unwrap());
        let w2 = t.leaf(Tensor::new(&[e, 1, 3, 3], data(&p, "f.dwconv.weight")[..9 * e].to_vec()).unwrap());
        let b2 = t.leaf(Tensor::new(&[e], data(&p, "f.dwconv.bias")[..e].to_vec()).unwrap());
        let y = t.conv2d(xv, w1, Some(b1), 1, 0, 1).unwrap();
        let y = t.conv2d(y, w2, Some(b2), 1, 1, e).unwrap();
        let y = t.gelu(y).unwrap();
        let wo = t.leaf(p.get("f.project_out.weight").unwrap().clone());
        let bo = t.leaf(p.get("f.project_out.bias").unwrap().clone());
        let y = t.conv2d(y, wo, Some(bo), 1, 0, 1).unwrap();
        let y = t.add(xv, y).unwrap();
        t.tensor(y)
    };
    for (a, b) in y.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    // first branch zero: GELU(0) = 0 closes the gate
    let mut p = gdfn_params(c, e, 42);
    set(&mut p, "f.project_in.weight", |i| if i < e * c { 0.0 } else { 0.5 });
    set(&mut p, "f.project_in.bias", |i| if i < e { 0.0 } else { 0.5 });
    set(&mut p, "f.dwconv.bias", |i| if i < e { 0.0 } else { 0.5 });
    set(&mut p, "f.project_out.bias", |_| 0.0);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        gdfn_forward(t, b, "f", xv)
    })
    .unwrap();
    assert_eq!(y.data(), x.data());
}

// ---- Restormer / CAQE ----

#[test]
fn restormer_block_is_manual_composition() {
    let cfg = micro();
    let p = random_params(&cfg, 50);
    let x = tensor(&[1, cfg.embed_dim, 4, 6], 51);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        restormer_block(t, b, "caqe.res0", xv, 1)
    })
    .unwrap();
    let want = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        let n1 = layer_norm_channels(t, b, "caqe.res0.norm1", xv)?;
        let a = mdta_attention(t, b, "caqe.res0.attn", n1, 1)?;
        let x1 = t.add(xv, a)?;
        let n2 = layer_norm_channels(t, b, "caqe.res0.norm2", x1)?;
        let f = gdfn_ffn(t, b, "caqe.res0.ffn", n2)?;
        t.add(x1, f)
    })
    .unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y, want);
}

#[test]
fn restormer_with_zero_branch_outputs_is_identity() {
    let cfg = micro();
    let mut p = random_params(&cfg, 52);
    for name in ["attn.project_out", "ffn.project_out"] {
        set(&mut p, &format!("caqe.res0.{name}.weight"), |_| 0.0);
        set(&mut p, &format!("caqe.res0.{name}.bias"), |_| 0.0);
    }
    let x = tensor(&[1, cfg.embed_dim, 4, 4], 53);
    let y = run(&p, |t, b| {
        let xv = t.leaf(x.clone());
        restormer_block(t, b, "caqe.res0", xv, 1)
    })
    .unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn caqe_zero_reconstruction_is_exact_residual() {
    let cfg = micro();
    let mut p = random_params(&cfg, 54);
    set(&mut p, "caqe.rec.weight", |_| 0.0);
    set(&mut p, "caqe.rec.bias", |_| 0.0);
    let xm = tensor(&[1, cfg.embed_dim, 5, 3], 55);
    let xt = tensor(&[1, 1, 5, 3], 56);
    let y = run(&p, |t, b| {
        let (m, f) = (t.leaf(xm.clone()), t.leaf(xt.clone()));
        caqe_forward(t, b, &cfg, m, f)
    })
    .unwrap();
    assert_eq!(y, xt);

    let err = run(&p, |t, b| {
        let m = t.leaf(xm.clone());
        let f = t.leaf(tensor(&[1, 1, 4, 3], 57));
        caqe_forward(t, b, &cfg, m, f)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn caqe_single_restormer_is_manual_composition() {
    let cfg = micro();
    let p = random_params(&cfg, 58);
    let xm = tensor(&[1, cfg.embed_dim, 4, 4], 59);
    let xt = tensor(&[1, 1, 4, 4], 60);
    let y = run(&p, |t, b| {
        let (m, f) = (t.leaf(xm.clone()), t.leaf(xt.clone()));
        caqe_forward(t, b, &cfg, m, f)
    })
    .unwrap();
    let want = run(&p, |t, b| {
        let (m, f) = (t.leaf(xm.clone()), t.leaf(xt.clone()));
        let r = restormer_block(t, b, "caqe.res0", m, 1)?;
        let r = conv_at(t, b, "caqe.rec", r, 1, 1)?;
        t.add(r, f)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
    assert_eq!(y, want);
}

// ---- SSTF / full network ----

fn clip(cfg: &ModelConfig, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(&[1, cfg.frames(), h, w], uniform(cfg.frames() * h * w, seed, 0.0, 1.0)).unwrap()
}

#[test]
fn sstf_output_extent_and_zero_path() {
    let cfg = micro();
    let p = random_params(&cfg, 70);
    let x = clip(&cfg, 10, 21, 71);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        sstf_forward(t, b, &cfg, v)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, cfg.embed_dim, 10, 21]);

    let p0 = param_init::<f64>(&cfg, 72).unwrap();
    let zeros = Tensor::zeros(&[1, 3, 16, 16]);
    let y = run(&p0, |t, b| {
        let v = t.leaf(zeros.clone());
        sstf_forward(t, b, &cfg, v)
    })
    .unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sstf_skips_matter() {
    let cfg = micro();
    let p = random_params(&cfg, 73);
    let x = clip(&cfg, 16, 16, 74);
    let with = |skips: bool| {
        run(&p, |t, b| {
            let v = t.leaf(x.clone());
            sstf_forward_with(t, b, &cfg, v, SstfOptions { skip_connections: skips })
        })
        .unwrap()
    };
    let (a, b) = (with(true), with(false));
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3, "max diff {diff}");
}

#[test]
fn sstf_rejects_wrong_frame_count() {
    let cfg = micro();
    let p = random_params(&cfg, 75);
    let err = run(&p, |t, b| {
        let v = t.leaf(Tensor::zeros(&[1, 5, 16, 16]));
        sstf_forward(t, b, &cfg, v)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn zero_reconstruction_returns_center_frame() {
    let cfg = micro();
    let mut p = random_params(&cfg, 80);
    set(&mut p, "caqe.rec.weight", |_| 0.0);
    set(&mut p, "caqe.rec.bias", |_| 0.0);
    let x = clip(&cfg, 12, 18, 81);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        tvqe_forward(t, b, &cfg, v)
    })
    .unwrap();
    let n = 12 * 18;
    assert_eq!(y.data(), &x.data()[n..2 * n]);
}

#[test]
fn forward_is_deterministic() {
    let cfg = micro();
    let p = random_params(&cfg, 82);
    let c = ClipWindow::new(
        Tensor::new(&[3, 16, 16], uniform(3 * 256, 83, 0.0, 1.0)).unwrap(),
        vec![0, 1, 2],
    )
    .unwrap();
    let a = enhance_clip(&p, &cfg, &c).unwrap();
    let b = enhance_clip(&p, &cfg, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[16, 16]);
}

#[test]
fn every_frame_influences_output() {
    let cfg = micro();
    let p = random_params(&cfg, 84);
    let x = clip(&cfg, 16, 16, 85);
    let base = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        tvqe_forward(t, b, &cfg, v)
    })
    .unwrap();
    for f in [0, 2] {
        let mut y = x.clone();
        y.data_mut()[f * 256 + 37] += 0.25;
        let out = run(&p, |t, b| {
            let v = t.leaf(y);
            tvqe_forward(t, b, &cfg, v)
        })
        .unwrap();
        assert_ne!(out.data(), base.data(), "frame {f} ignored");
    }
}

#[test]
fn gradients_reach_every_parameter() {
    let cfg = micro();
    let p = param_init::<f64>(&cfg, 86).unwrap();
    let x = clip(&cfg, 16, 16, 87);
    let mut t = Tape::new();
    let b = p.bind(&mut t, true);
    let v = t.leaf(x);
    let y = tvqe_forward(&mut t, &b, &cfg, v).unwrap();
    let loss = t.mean(y).unwrap();
    let g = t.backward(loss).unwrap();
    let (mut total, mut nonzero) = (0usize, 0usize);
    for (path, var) in b.iter() {
        let gr = g.get(var).unwrap_or_else(|| panic!("no grad for {path}"));
        assert!(gr.iter().all(|v| v.is_finite()), "{path}");
        total += gr.len();
        nonzero += gr.iter().filter(|&&v| v != 0.0).count();
    }
    assert!(nonzero as f64 >= 0.99 * total as f64, "{nonzero}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_extent_equals_input_extent(h in 16usize..80, w in 16usize..80, radius in 1usize..4, seed in 0u64..100) {
        let cfg = ModelConfig { radius, ..micro() };
        let p = param_init::<f64>(&cfg, seed).unwrap();
        let x = clip(&cfg, h, w, seed);
        let y = run(&p, |t, b| {
            let v = t.leaf(x);
            tvqe_forward(t, b, &cfg, v)
        }).unwrap();
        prop_assert_eq!(y.shape(), &[1, 1, h, w]);
    }
}
