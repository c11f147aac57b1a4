use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::ModelParams;
use crate::tensor::gradcheck::{finite_diff_check, FdOptions};
use crate::tensor::Tensor;

fn uniform(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_params(shapes: &[(String, Vec<usize>)], seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::new();
    for (i, (path, shape)) in shapes.iter().enumerate() {
        let n = shape.iter().product();
        let data = if path.ends_with("norm1.weight") || path.ends_with("norm2.weight") || path.ends_with("norm.weight") {
            uniform(n, seed + i as u64, 0.3).into_iter().map(|v| 1.0 + v).collect()
        } else {
            uniform(n, seed + i as u64, 0.5)
        };
        p.insert(path.clone(), Tensor::new(shape, data).unwrap());
    }
    p
}

fn zero_params(shapes: &[(String, Vec<usize>)]) -> ModelParams<f64> {
    let mut p = ModelParams::new();
    for (path, shape) in shapes {
        let fill = if path.ends_with("norm1.weight") || path.ends_with("norm2.weight") { 1.0 } else { 0.0 };
        p.insert(path.clone(), Tensor::full(shape, fill));
    }
    p
}

fn data(p: &ModelParams<f64>, path: &str) -> Vec<f64> {
    p.get(path).unwrap().data().to_vec()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

// ---- naive oracles over row-major f64 buffers ----

fn naive_linear(x: &[f64], rows: usize, w: &[f64], out: usize, b: Option<&[f64]>) -> Vec<f64> {
    let inp = x.len() / rows;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        for o in 0..out {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..inp {
                acc += x[r * inp + i] * w[o * inp + i];
            }
            y[r * out + o] = acc;
        }
    }
    y
}

fn naive_ln(x: &[f64], c: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (row, out) in x.chunks(c).zip(y.chunks_mut(c)) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for k in 0..c {
            out[k] = (row[k] - mean) / (var + crate::nn::LN_EPS).sqrt() * g[k] + b[k];
        }
    }
    y
}

fn qkv_bias(p: &ModelParams<f64>, prefix: &str, c: usize) -> Vec<f64> {
    let mut b = data(p, &format!("{prefix}.q_bias"));
    b.extend(std::iter::repeat_n(0.0, c));
    b.extend(data(p, &format!("{prefix}.v_bias")));
    b
}

/// Attention over `n` tokens where only pairs with `allowed(i, j)` take part.
fn naive_attention(
    x: &[f64],
    n: usize,
    c: usize,
    heads: usize,
    p: &ModelParams<f64>,
    prefix: &str,
    allowed: impl Fn(usize, usize) -> bool,
    bias: impl Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let d = c / heads;
    let qkv = naive_linear(x, n, &data(p, &format!("{prefix}.qkv.weight")), 3 * c, Some(&qkv_bias(p, prefix, c)));
    let at = |t: usize, part: usize, h: usize, k: usize| qkv[t * 3 * c + part * c + h * d + k];
    let mut merged = vec![0.0; n * c];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<Option<f64>> = (0..n)
                .map(|j| {
                    allowed(i, j).then(|| {
                        let dot: f64 = (0..d).map(|k| at(i, 0, h, k) * at(j, 1, h, k)).sum();
                        dot / (d as f64).sqrt() + bias(i, j, h)
                    })
                })
                .collect();
            let m = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().flatten().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                if let Some(s) = s {
                    let a = (s - m).exp() / z;
                    for k in 0..d {
                        merged[i * c + h * d + k] += a * at(j, 2, h, k);
                    }
                }
            }
        }
    }
    naive_linear(
        &merged,
        n,
        &data(p, &format!("{prefix}.proj.weight")),
        c,
        Some(&data(p, &format!("{prefix}.proj.bias"))),
    )
}

fn table_bias(p: &ModelParams<f64>, prefix: &str, ws: usize, heads: usize) -> impl Fn((usize, usize), (usize, usize), usize) -> f64 {
    let table = data(p, &format!("{prefix}.relative_position_bias_table"));
    move |(yi, xi), (yj, xj), h| {
        let dy = yi as isize - yj as isize + ws as isize - 1;
        let dx = xi as isize - xj as isize + ws as isize - 1;
        table[(dy as usize * (2 * ws - 1) + dx as usize) * heads + h]
    }
}

fn attn_shapes(prefix: &str, c: usize, heads: usize, ws: usize) -> Vec<(String, Vec<usize>)> {
    block_param_shapes("b", c, heads, ws, 1.0)
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("b.attn.").map(|r| (format!("{prefix}.{r}"), v)))
        .collect()
}

fn run(p: &ModelParams<f64>, f: impl FnOnce(&mut Tape<f64>, &BoundParams) -> Result<Var>) -> Result<Tensor<f64>> {
    let mut t = Tape::new();
    let b = p.bind(&mut t, false);
    let y = f(&mut t, &b)?;
    Ok(t.tensor(y))
}

fn map(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::new(shape, uniform(shape.iter().product(), seed, 1.0)).unwrap()
}

// ---- window partition / shift ----

#[test]
fn window_partition_single_window_is_identity() {
    let x = map(&[1, 4, 4, 3], 1);
    let y = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        window_partition(t, v, 4)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, 4, 4, 3]);
    assert_eq!(y.data(), x.data());
}

#[test]
fn window_partition_counts_and_tiles() {
    let x = map(&[2, 4, 6, 1], 2);
    let y = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        window_partition(t, v, 2)
    })
    .unwrap();
    assert_eq!(y.shape(), &[12, 2, 2, 1]);
    // window (b=1, wy=1, wx=2) token (1,0) is pixel (3, 4)
    let win = 6 + 3 + 2;
    assert_eq!(y.data()[win * 4 + 2], x.data()[(4 + 3) * 6 + 4]);

    let sq = map(&[1, 8, 8, 2], 3);
    let y = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(sq.clone());
        window_partition(t, v, 4)
    })
    .unwrap();
    assert_eq!(y.shape()[0], 4);
}

#[test]
fn window_partition_rejects_bad_window() {
    let x = map(&[1, 4, 4, 1], 1);
    let err = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        window_partition(t, v, 0)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    assert!(WindowGrid::new(6, 8, 4, 0).is_err());
    assert!(WindowGrid::new(8, 8, 4, 1).is_err());
}

#[test]
fn cyclic_shift_rolls_two_by_two_diagonally() {
    let x = Tensor::from_f64(&[1, 2, 2, 1], &[1., 2., 3., 4.]).unwrap();
    let y = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        cyclic_shift(t, v, 1)
    })
    .unwrap();
    // out[i][j] = x[(i+1) % 2][(j+1) % 2]
    assert_eq!(y.data(), &[4., 3., 2., 1.]);

    let id = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        cyclic_shift(t, v, 0)
    })
    .unwrap();
    assert_eq!(id.data(), x.data());
}

#[test]
fn cyclic_shift_matches_index_oracle() {
    let (h, w, s) = (6, 4, 2);
    let x = map(&[1, h, w, 2], 4);
    let y = run(&ModelParams::new(), |t, _| {
        let v = t.leaf(x.clone());
        cyclic_shift(t, v, s as isize)
    })
    .unwrap();
    for i in 0..h {
        for j in 0..w {
            for k in 0..2 {
                let src = (((i + s) % h) * w + (j + s) % w) * 2 + k;
                assert_eq!(y.data()[(i * w + j) * 2 + k], x.data()[src]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn window_round_trip_is_bit_exact(n in 1usize..3, nh in 1usize..4, nw in 1usize..4, ws in 1usize..4, c in 1usize..4, seed in 0u64..1000) {
        let (h, w) = (nh * ws, nw * ws);
        let x = map(&[n, h, w, c], seed);
        let y = run(&ModelParams::new(), |t, _| {
            let v = t.leaf(x.clone());
            let p = window_partition(t, v, ws)?;
            window_reverse(t, p, ws, h, w)
        }).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn shift_round_trip_is_bit_exact(h in 2usize..7, w in 2usize..7, s in 0isize..2, seed in 0u64..1000) {
        let x = map(&[1, h, w, 2], seed);
        let y = run(&ModelParams::new(), |t, _| {
            let v = t.leaf(x.clone());
            let y = cyclic_shift(t, v, s)?;
            cyclic_shift(t, y, -s)
        }).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn swin_block_preserves_shape(nh in 1usize..3, nw in 1usize..3, shifted in any::<bool>(), heads in 1usize..3, seed in 0u64..100) {
        let ws = 2;
        let c = 4;
        let (h, w) = (nh * ws, nw * ws);
        let p = random_params(&block_param_shapes("blk", c, heads, ws, 1.0), seed);
        let x = map(&[2, h * w, c], seed);
        let spec = BlockSpec { heads, window_size: ws, shift: if shifted { 1 } else { 0 } };
        let y = run(&p, |t, b| {
            let v = t.leaf(x.clone());
            swin_block(t, b, "blk", v, h, w, spec)
        }).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
    }
}

// ---- mask ----

#[test]
fn unshifted_mask_is_all_zero() {
    let m = AttentionMask::build(WindowGrid::new(8, 8, 4, 0).unwrap());
    assert!(m.data.iter().all(|&v| v == 0.0));
    assert_eq!(m.shape(), [4, 16, 16]);
}

#[test]
fn shifted_mask_only_touches_border_windows() {
    let m = AttentionMask::build(WindowGrid::new(12, 12, 4, 2).unwrap());
    let n = 16;
    let window = |k: usize| &m.data[k * n * n..(k + 1) * n * n];
    // interior windows (not in the last row or column) hold no wrapped tokens
    for wy in 0..2 {
        for wx in 0..2 {
            assert!(window(wy * 3 + wx).iter().all(|&v| v == 0.0));
        }
    }
    assert!(window(8).iter().any(|&v| v != 0.0));
    assert!(m.data.iter().all(|&v| v == 0.0 || v == -MASK_LARGE));
    assert_eq!(m, AttentionMask::build(WindowGrid::new(12, 12, 4, 2).unwrap()));
}

// ---- wmsa ----

#[test]
fn wmsa_single_window_matches_full_attention() {
    let (ws, c, heads) = (4, 8, 2);
    let p = random_params(&attn_shapes("a", c, heads, ws), 10);
    let x = map(&[1, ws * ws, c], 11);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        wmsa(t, b, "a", v, heads, ws, None)
    })
    .unwrap();
    let bias = table_bias(&p, "a", ws, heads);
    let pos = |i: usize| (i / ws, i % ws);
    let want = naive_attention(x.data(), ws * ws, c, heads, &p, "a", |_, _| true, |i, j, h| bias(pos(i), pos(j), h));
    close(y.data(), &want, 1e-6);
}

#[test]
fn wmsa_single_token_is_projected_value() {
    let (c, heads) = (4, 2);
    let p = random_params(&attn_shapes("a", c, heads, 1), 12);
    let x = map(&[3, 1, c], 13);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        wmsa(t, b, "a", v, heads, 1, None)
    })
    .unwrap();
    let qkv = naive_linear(x.data(), 3, &data(&p, "a.qkv.weight"), 3 * c, Some(&qkv_bias(&p, "a", c)));
    let v: Vec<f64> = qkv.chunks(3 * c).flat_map(|r| r[2 * c..].to_vec()).collect();
    let want = naive_linear(&v, 3, &data(&p, "a.proj.weight"), c, Some(&data(&p, "a.proj.bias")));
    close(y.data(), &want, 1e-12);
}

#[test]
fn wmsa_windows_are_independent() {
    let (ws, c, heads, k) = (2, 4, 2, 5);
    let p = random_params(&attn_shapes("a", c, heads, ws), 14);
    let x = map(&[k, ws * ws, c], 15);
    let all = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        wmsa(t, b, "a", v, heads, ws, None)
    })
    .unwrap();
    let stride = ws * ws * c;
    for i in 0..k {
        let one = Tensor::new(&[1, ws * ws, c], x.data()[i * stride..(i + 1) * stride].to_vec()).unwrap();
        let y = run(&p, |t, b| {
            let v = t.leaf(one);
            wmsa(t, b, "a", v, heads, ws, None)
        })
        .unwrap();
        assert_eq!(y.data(), &all.data()[i * stride..(i + 1) * stride]);
    }

    let order = [3, 0, 4, 1, 2];
    let permuted = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        let v = t.index_select(v, &order)?;
        wmsa(t, b, "a", v, heads, ws, None)
    })
    .unwrap();
    for (dst, &src) in order.iter().enumerate() {
        assert_eq!(
            &permuted.data()[dst * stride..(dst + 1) * stride],
            &all.data()[src * stride..(src + 1) * stride]
        );
    }
}

#[test]
fn wmsa_rejects_indivisible_heads() {
    let p = random_params(&attn_shapes("a", 6, 4, 2), 1);
    let x = map(&[1, 4, 6], 1);
    let err = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        wmsa(t, b, "a", v, 4, 2, None)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn shifted_attention_matches_region_restricted_oracle() {
    for (ws, heads) in [(4, 2), (2, 1)] {
        let s = ws / 2;
        let (h, w, c) = (2 * ws, 2 * ws, 4);
        let p = random_params(&attn_shapes("a", c, heads, ws), 20 + ws as u64);
        let x = map(&[1, h, w, c], 21);
        let y = run(&p, |t, b| {
            let v = t.leaf(x.clone());
            window_attention(t, b, "a", v, BlockSpec { heads, window_size: ws, shift: s })
        })
        .unwrap();
        // windows of the shifted grid, expressed in original coordinates and never wrapping
        let block = |v: usize| (v + ws - s) / ws;
        let pos = |i: usize| (i / w, i % w);
        let bias = table_bias(&p, "a", ws, heads);
        let want = naive_attention(
            x.data(),
            h * w,
            c,
            heads,
            &p,
            "a",
            |i, j| {
                let ((yi, xi), (yj, xj)) = (pos(i), pos(j));
                block(yi) == block(yj) && block(xi) == block(xj)
            },
            |i, j, hd| bias(pos(i), pos(j), hd),
        );
        close(y.data(), &want, 1e-6);
    }
}

#[test]
fn unshifted_attention_matches_per_window_oracle() {
    let (ws, heads, c) = (2, 2, 4);
    let (h, w) = (4, 6);
    let p = random_params(&attn_shapes("a", c, heads, ws), 30);
    let x = map(&[1, h, w, c], 31);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        window_attention(t, b, "a", v, BlockSpec { heads, window_size: ws, shift: 0 })
    })
    .unwrap();
    let pos = |i: usize| (i / w, i % w);
    let bias = table_bias(&p, "a", ws, heads);
    let want = naive_attention(
        x.data(),
        h * w,
        c,
        heads,
        &p,
        "a",
        |i, j| {
            let ((yi, xi), (yj, xj)) = (pos(i), pos(j));
            yi / ws == yj / ws && xi / ws == xj / ws
        },
        |i, j, hd| bias(pos(i), pos(j), hd),
    );
    close(y.data(), &want, 1e-6);
}

// ---- swin block ----

#[test]
fn zero_weight_block_is_identity() {
    let shapes = block_param_shapes("blk", 4, 2, 2, 1.0);
    let p = zero_params(&shapes);
    let x = map(&[1, 16, 4], 40);
    for shift in [0, 1] {
        let y = run(&p, |t, b| {
            let v = t.leaf(x.clone());
            swin_block(t, b, "blk", v, 4, 4, BlockSpec { heads: 2, window_size: 2, shift })
        })
        .unwrap();
        assert_eq!(y.data(), x.data());
    }
}

#[test]
fn unshifted_block_matches_transformer_oracle() {
    let (ws, c, heads) = (4, 8, 2);
    let n = ws * ws;
    let p = random_params(&block_param_shapes("blk", c, heads, ws, 1.0), 50);
    let x = map(&[1, n, c], 51);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        swin_block(t, b, "blk", v, ws, ws, BlockSpec { heads, window_size: ws, shift: 0 })
    })
    .unwrap();

    let ln1 = naive_ln(x.data(), c, &data(&p, "blk.norm1.weight"), &data(&p, "blk.norm1.bias"));
    let bias = table_bias(&p, "blk.attn", ws, heads);
    let pos = |i: usize| (i / ws, i % ws);
    let att = naive_attention(&ln1, n, c, heads, &p, "blk.attn", |_, _| true, |i, j, h| bias(pos(i), pos(j), h));
    let x1: Vec<f64> = x.data().iter().zip(&att).map(|(a, b)| a + b).collect();
    let ln2 = naive_ln(&x1, c, &data(&p, "blk.norm2.weight"), &data(&p, "blk.norm2.bias"));
    let hid = naive_linear(&ln2, n, &data(&p, "blk.mlp.fc1.weight"), c, Some(&data(&p, "blk.mlp.fc1.bias")));
    let act: Vec<f64> = hid.iter().map(|&v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt()))).collect();
    let mlp = naive_linear(&act, n, &data(&p, "blk.mlp.fc2.weight"), c, Some(&data(&p, "blk.mlp.fc2.bias")));
    let want: Vec<f64> = x1.iter().zip(&mlp).map(|(a, b)| a + b).collect();
    close(y.data(), &want, 1e-6);
}

#[test]
fn shifted_block_gradients_match_finite_differences() {
    let (ws, c, heads, h, w) = (2, 4, 2, 4, 4);
    let shapes = block_param_shapes("blk", c, heads, ws, 1.0);
    let p = random_params(&shapes, 60);
    let mut inputs = vec![map(&[1, h * w, c], 61)];
    inputs.extend(shapes.iter().map(|(k, _)| p.get(k).unwrap().clone()));
    let probe = map(&[1, h * w, c], 62);
    let report = finite_diff_check(
        |t, v| {
            let b = BoundParams::from_pairs(shapes.iter().map(|(k, _)| k.clone()).zip(v[1..].iter().copied()));
            let y = swin_block(t, &b, "blk", v[0], h, w, BlockSpec { heads, window_size: ws, shift: 1 })?;
            let pv = t.leaf(probe.clone());
            let y = t.mul(y, pv)?;
            t.sum(y)
        },
        &inputs,
        &FdOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "max rel err {} at {:?}", report.max_rel_err, report.worst);
}

// ---- resolution ladder ----

#[test]
fn patch_partition_p1_is_pointwise_projection() {
    let (cin, d) = (3, 5);
    let p = random_params(&partition_param_shapes("pe", cin, d, 1), 70);
    let x = map(&[1, cin, 2, 3], 71);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_partition(t, b, "pe", v, 1)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, 6, d]);
    // NCHW -> per-pixel rows
    let rows: Vec<f64> = (0..6).flat_map(|px| (0..cin).map(move |k| (k, px))).map(|(k, px)| x.data()[k * 6 + px]).collect();
    let want = naive_linear(&rows, 6, &data(&p, "pe.proj.weight"), d, Some(&data(&p, "pe.proj.bias")));
    close(y.data(), &want, 1e-12);
}

#[test]
fn patch_partition_averaging_weights_give_patch_means() {
    let (cin, d, hh, ww) = (2, 3, 4, 6);
    let mut p = ModelParams::new();
    p.insert("pe.proj.weight", Tensor::full(&[d, cin, 2, 2], 1.0 / (4 * cin) as f64));
    p.insert("pe.proj.bias", Tensor::zeros(&[d]));
    let x = map(&[1, cin, hh, ww], 72);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_partition(t, b, "pe", v, 2)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, (hh / 2) * (ww / 2), d]);
    for ty in 0..hh / 2 {
        for tx in 0..ww / 2 {
            let mut mean = 0.0;
            for k in 0..cin {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    mean += x.data()[(k * hh + 2 * ty + dy) * ww + 2 * tx + dx];
                }
            }
            mean /= (4 * cin) as f64;
            for o in 0..d {
                assert!((y.data()[(ty * (ww / 2) + tx) * d + o] - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn patch_merging_matches_hand_oracle() {
    let (h, w, c) = (4, 4, 2);
    let p = random_params(&merging_param_shapes("m", c), 80);
    let x = map(&[1, h * w, c], 81);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_merging(t, b, "m", v, h, w)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, 4, 2 * c]);
    let tok = |yy: usize, xx: usize| &x.data()[(yy * w + xx) * c..(yy * w + xx + 1) * c];
    let mut cat = Vec::new();
    for ty in 0..h / 2 {
        for tx in 0..w / 2 {
            let (y0, x0) = (2 * ty, 2 * tx);
            for (yy, xx) in [(y0, x0), (y0 + 1, x0), (y0, x0 + 1), (y0 + 1, x0 + 1)] {
                cat.extend_from_slice(tok(yy, xx));
            }
        }
    }
    let normed = naive_ln(&cat, 4 * c, &data(&p, "m.norm.weight"), &data(&p, "m.norm.bias"));
    let want = naive_linear(&normed, 4, &data(&p, "m.reduction.weight"), 2 * c, None);
    close(y.data(), &want, 1e-6);
}

#[test]
fn patch_merging_keeps_constant_maps_constant() {
    let c = 3;
    let p = random_params(&merging_param_shapes("m", c), 82);
    let x = Tensor::new(&[1, 16, c], (0..16).flat_map(|_| [0.3, -1.0, 2.0]).collect()).unwrap();
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_merging(t, b, "m", v, 4, 4)
    })
    .unwrap();
    let first = &y.data()[..2 * c];
    for tok in y.data().chunks(2 * c) {
        assert_eq!(tok, first);
    }
}

#[test]
fn patch_merging_rejects_odd_extent() {
    let p = random_params(&merging_param_shapes("m", 1), 83);
    let x = map(&[1, 6, 1], 84);
    let err = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_merging(t, b, "m", v, 3, 2)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn patch_expanding_matches_hand_oracle() {
    let (h, w, c) = (2, 2, 4);
    let p = random_params(&expanding_param_shapes("e", c), 90);
    let x = map(&[1, h * w, c], 91);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        patch_expanding(t, b, "e", v, h, w)
    })
    .unwrap();
    assert_eq!(y.shape(), &[1, 16, c / 2]);
    let proj = naive_linear(x.data(), h * w, &data(&p, "e.expand.weight"), 2 * c, None);
    let half = c / 2;
    for yy in 0..2 * h {
        for xx in 0..2 * w {
            let src = (yy / 2) * w + xx / 2;
            let slot = (yy % 2) * 2 + xx % 2;
            for k in 0..half {
                let got = y.data()[(yy * 2 * w + xx) * half + k];
                let want = proj[src * 2 * c + slot * half + k];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expanding_after_merging_restores_geometry() {
    let (h, w, c) = (4, 6, 2);
    let mut shapes = merging_param_shapes("m", c);
    shapes.extend(expanding_param_shapes("e", 2 * c));
    let p = random_params(&shapes, 92);
    let x = map(&[2, h * w, c], 93);
    let y = run(&p, |t, b| {
        let v = t.leaf(x.clone());
        let m = patch_merging(t, b, "m", v, h, w)?;
        patch_expanding(t, b, "e", m, h / 2, w / 2)
    })
    .unwrap();
    assert_eq!(y.shape(), x.shape());

    let odd = random_params(&expanding_param_shapes("e", 3), 94);
    let err = run(&odd, |t, b| {
        let v = t.leaf(map(&[1, 4, 3], 95));
        patch_expanding(t, b, "e", v, 2, 2)
    })
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}
