//! Layer outputs against independent nested-loop re-derivations.

use hotspot_nn::init::{rng, uniform};
use hotspot_nn::{
    bce_loss, mcce_loss, mse_loss, Conv2d, Layer, Lstm, Mode, Padding, Pool2d, ReturnMode, Tensor,
};
use proptest::prelude::*;
use rand::Rng;

/// Six-loop convolution with explicit signed offsets into a zero-padded view.
fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, same: bool) -> Tensor {
    let [n, h, w, c] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let [k1, k2, _, d] = [k.dim(0), k.dim(1), k.dim(2), k.dim(3)];
    let (ph, pw) = if same { ((k1 / 2) as i64, (k2 / 2) as i64) } else { (0, 0) };
    let (oh, ow) = if same { (h, w) } else { (h - k1 + 1, w - k2 + 1) };
    let at = |img: usize, i: i64, j: i64, ch: usize| -> f64 {
        if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
            0.0
        } else {
            x.data()[((img * h + i as usize) * w + j as usize) * c + ch]
        }
    };
    let mut out = vec![0.0; n * oh * ow * d];
    for img in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for f in 0..d {
                    let mut s = b.data()[f];
                    for m in 0..k1 {
                        for q in 0..k2 {
                            for ch in 0..c {
                                let kv = k.data()[((m * k2 + q) * c + ch) * d + f];
                                s += kv * at(img, i as i64 + m as i64 - ph, j as i64 + q as i64 - pw, ch);
                            }
                        }
                    }
                    out[((img * oh + i) * ow + j) * d + f] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[n, oh, ow, d], out).unwrap()
}

fn pool_oracle(x: &Tensor, max: bool) -> Tensor {
    let [n, h, w, c] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let mut out = Vec::new();
    for img in 0..n {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for ch in 0..c {
                    let vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(a, b)| x.data()[((img * h + 2 * i + a) * w + 2 * j + b) * c + ch])
                        .collect();
                    out.push(if max {
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / 4.0
                    });
                }
            }
        }
    }
    Tensor::from_vec(&[n, h / 2, w / 2, c], out).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (k, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((x - y).abs() <= tol, "element {k}: {x} vs {y}");
    }
}

#[test]
fn conv_same_padding_matches_oracle_on_5x5x2() {
    let mut r = rng(2024);
    let mut layer = Conv2d::new((3, 3), 2, 3, Padding::Same, &mut r);
    layer.bias.value = uniform(&[3], 1.0, &mut r);
    let x = uniform(&[1, 5, 5, 2], 1.0, &mut r);
    let y = layer.forward(&x, Mode::Eval).unwrap();
    assert_close(&y, &conv_oracle(&x, &layer.kernels.value, &layer.bias.value, true), 1e-6);
}

#[test]
fn conv_matches_oracle_on_100_random_instances() {
    let mut r = rng(7);
    for case in 0..100 {
        let same = case % 2 == 0;
        let k = [1, 3, 5][r.random_range(0..3)];
        let h = r.random_range(k..k + 5);
        let w = r.random_range(k..k + 5);
        let c = r.random_range(1..4);
        let d = r.random_range(1..4);
        let n = r.random_range(1..3);
        let pad = if same { Padding::Same } else { Padding::Valid };
        let mut layer = Conv2d::new((k, k), c, d, pad, &mut r);
        layer.bias.value = uniform(&[d], 1.0, &mut r);
        let x = uniform(&[n, h, w, c], 2.0, &mut r);
        let y = layer.forward(&x, Mode::Eval).unwrap();
        assert_close(&y, &conv_oracle(&x, &layer.kernels.value, &layer.bias.value, same), 1e-9);
    }
}

#[test]
fn pooling_matches_oracle_on_random_instances() {
    let mut r = rng(8);
    let x = uniform(&[1, 6, 6, 3], 1.0, &mut r);
    assert_close(&Pool2d::max().forward(&x, Mode::Eval).unwrap(), &pool_oracle(&x, true), 0.0);
    for _ in 0..100 {
        let shape = [r.random_range(1..3), r.random_range(2..8), r.random_range(2..8), r.random_range(1..4)];
        let x = uniform(&shape, 1.0, &mut r);
        assert_close(&Pool2d::max().forward(&x, Mode::Eval).unwrap(), &pool_oracle(&x, true), 0.0);
        assert_close(&Pool2d::avg().forward(&x, Mode::Eval).unwrap(), &pool_oracle(&x, false), 1e-15);
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_matches_per_step_oracle() {
    let mut r = rng(31);
    let (t, n, m) = (5, 3, 4);
    let mut layer = Lstm::new(n, m, ReturnMode::All, &mut r);
    let x = uniform(&[t, 1, n], 1.0, &mut r);
    let y = layer.forward(&x, Mode::Eval).unwrap();

    // Re-evaluate the recurrence directly from the weight matrices.
    let mut params = Vec::new();
    layer.visit_params(&mut |_, p| params.push(p.value.clone()));
    // visit order per gate k: w_x, w_h, b
    let gate = |k: usize, xs: &[f64], hs: &[f64], row: usize| -> f64 {
        let (wx, wh, b) = (&params[3 * k], &params[3 * k + 1], &params[3 * k + 2]);
        let mut z = b.data()[row];
        for j in 0..n {
            z += wx.data()[row * n + j] * xs[j];
        }
        for j in 0..m {
            z += wh.data()[row * m + j] * hs[j];
        }
        z
    };
    let (mut h, mut c) = (vec![0.0; m], vec![0.0; m]);
    for s in 0..t {
        let xs = &x.data()[s * n..(s + 1) * n];
        let mut hn = vec![0.0; m];
        let mut cn = vec![0.0; m];
        for row in 0..m {
            let i = sig(gate(0, xs, &h, row));
            let f = sig(gate(1, xs, &h, row));
            let g = gate(2, xs, &h, row).tanh();
            let o = sig(gate(3, xs, &h, row));
            assert!(i > 0.0 && i < 1.0 && f > 0.0 && f < 1.0 && o > 0.0 && o < 1.0);
            cn[row] = f * c[row] + i * g;
            hn[row] = o * cn[row].tanh();
        }
        h = hn;
        c = cn;
        for row in 0..m {
            assert!((y.data()[s * m + row] - h[row]).abs() < 1e-12);
        }
    }
}

/// Straight summation with no shared helpers.
fn bce_oracle(p: &[f64], y: &[f64], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for k in 0..p.len() {
        if mask[k] {
            let q = p[k].max(1e-7).min(1.0 - 1e-7);
            total += if y[k] == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
            n += 1.0;
        }
    }
    total / n
}

#[test]
fn losses_match_summation_oracles() {
    let mut r = rng(77);
    for _ in 0..100 {
        let len = r.random_range(1..40);
        let p: Vec<f64> = (0..len).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..len).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let counts: Vec<f64> = (0..len).map(|_| r.random_range(0.0..5.0)).collect();
        let mut mask: Vec<bool> = (0..len).map(|_| r.random_bool(0.7)).collect();
        mask[0] = true;
        let (l, _) = bce_loss(&p, &y, &mask).unwrap();
        assert!((l - bce_oracle(&p, &y, &mask)).abs() < 1e-9);

        let (l, _) = mse_loss(&counts, &y, &mask).unwrap();
        let n = mask.iter().filter(|&&m| m).count() as f64;
        let direct: f64 = (0..len).filter(|&k| mask[k]).map(|k| (y[k] - counts[k]).powi(2)).sum::<f64>() / n;
        assert!((l - direct).abs() < 1e-9);

        // two classes per cell
        let pc: Vec<f64> = (0..2 * len).map(|_| r.random::<f64>()).collect();
        let yc: Vec<f64> = (0..2 * len).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let (l, _) = mcce_loss(&pc, &yc, &mask, 2).unwrap();
        let direct: f64 = (0..len)
            .filter(|&k| mask[k])
            .flat_map(|k| [2 * k, 2 * k + 1])
            .map(|j| -yc[j] * pc[j].max(1e-7).min(1.0 - 1e-7).ln())
            .sum::<f64>()
            / n;
        assert!((l - direct).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn valid_and_same_agree_on_interior(seed in 0u64..10_000, h in 5usize..9, w in 5usize..9, c in 1usize..3) {
        let mut r = rng(seed);
        let kernels = uniform(&[3, 3, c, 2], 1.0, &mut r);
        let bias = uniform(&[2], 1.0, &mut r);
        let x = uniform(&[1, h, w, c], 1.0, &mut r);
        let mut same = Conv2d::from_parts(kernels.clone(), bias.clone(), Padding::Same).unwrap();
        let mut valid = Conv2d::from_parts(kernels, bias, Padding::Valid).unwrap();
        let ys = same.forward(&x, Mode::Eval).unwrap();
        let yv = valid.forward(&x, Mode::Eval).unwrap();
        for i in 0..h - 2 {
            for j in 0..w - 2 {
                for f in 0..2 {
                    let a = yv.data()[(i * (w - 2) + j) * 2 + f];
                    let b = ys.data()[((i + 1) * w + j + 1) * 2 + f];
                    prop_assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn lstm_last_equals_final_of_all(seed in 0u64..10_000, t in 1usize..8, n in 1usize..4) {
        let mut r = rng(seed);
        let mut all = Lstm::new(3, 4, ReturnMode::All, &mut rng(seed ^ 1));
        let mut last = Lstm::new(3, 4, ReturnMode::Last, &mut rng(seed ^ 1));
        let x = uniform(&[t, n, 3], 1.0, &mut r);
        let ya = all.forward(&x, Mode::Eval).unwrap();
        let yl = last.forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(&ya.data()[(t - 1) * n * 4..], yl.data());
    }

    #[test]
    fn losses_are_non_negative_and_zero_at_perfect(seed in 0u64..10_000, len in 1usize..30) {
        let mut r = rng(seed);
        let y: Vec<f64> = (0..len).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let p: Vec<f64> = (0..len).map(|_| r.random::<f64>()).collect();
        let mask = vec![true; len];
        prop_assert!(bce_loss(&p, &y, &mask).unwrap().0 >= 0.0);
        prop_assert!(bce_loss(&y, &y, &mask).unwrap().0 <= 1e-6);
        prop_assert!(mse_loss(&p, &y, &mask).unwrap().0 >= 0.0);
        prop_assert_eq!(mse_loss(&y, &y, &mask).unwrap().0, 0.0);
    }

    #[test]
    fn forward_is_bitwise_deterministic(seed in 0u64..10_000) {
        let run = || {
            let mut r = rng(seed);
            let mut conv = Conv2d::new((3, 3), 2, 2, Padding::Same, &mut r);
            let x = uniform(&[2, 4, 4, 2], 1.0, &mut r);
            conv.forward(&x, Mode::Eval).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}
