//! Analytic gradients vs central finite differences (step 1e-4), 10 seeds per
//! layer class, at most one failing seed allowed per class.

use hotspot_nn::gradcheck::{central_difference, check_layer, relative_error, DEFAULT_STEP};
use hotspot_nn::init::{rng, uniform};
use hotspot_nn::{
    bce_loss, mcce_loss, mse_loss, Act, Activation, BatchNorm, Conv2d, Dense, Dropout, Layer, Lstm, Merge,
    Mode, Padding, Parallel, Pool2d, ReturnMode, Sequential, Tensor,
};
use rand::Rng;

const TOLERANCE: f64 = 1e-3;
const FLOOR: f64 = 1e-5;
const SEEDS: u64 = 10;

fn run_class(name: &str, mut case: impl FnMut(u64) -> (Box<dyn Layer>, Tensor, Mode)) {
    let mut failures = Vec::new();
    for seed in 0..SEEDS {
        let (mut layer, x, mode) = case(seed);
        let report = check_layer(layer.as_mut(), &x, mode, seed + 1000, Some(40), FLOOR).unwrap();
        assert!(report.checked > 0);
        if !report.passes(TOLERANCE) {
            failures.push((seed, report.max_rel_error, report.worst));
        }
    }
    assert!(failures.len() <= 1, "{name}: {failures:?}");
}

#[test]
fn conv2d_same_and_valid() {
    run_class("conv same", |s| {
        let mut r = rng(s);
        let mut l = Conv2d::new((3, 3), 2, 3, Padding::Same, &mut r);
        l.bias.value = uniform(&[3], 0.5, &mut r);
        (Box::new(l), uniform(&[2, 4, 5, 2], 1.0, &mut r), Mode::Eval)
    });
    run_class("conv valid", |s| {
        let mut r = rng(s + 50);
        let l = Conv2d::new((3, 1), 3, 2, Padding::Valid, &mut r);
        (Box::new(l), uniform(&[1, 5, 4, 3], 1.0, &mut r), Mode::Eval)
    });
}

#[test]
fn pooling() {
    run_class("max pool", |s| {
        let mut r = rng(s);
        (Box::new(Pool2d::max()), uniform(&[2, 5, 4, 2], 1.0, &mut r), Mode::Eval)
    });
    run_class("avg pool", |s| {
        let mut r = rng(s);
        (Box::new(Pool2d::avg()), uniform(&[1, 4, 6, 3], 1.0, &mut r), Mode::Eval)
    });
}

#[test]
fn batchnorm_training_mode() {
    run_class("batchnorm", |s| {
        let mut r = rng(s);
        let mut l = BatchNorm::new(3);
        l.scale.value = uniform(&[3], 2.0, &mut r);
        l.shift.value = uniform(&[3], 1.0, &mut r);
        (Box::new(l), uniform(&[4, 2, 2, 3], 1.0, &mut r), Mode::Train { step: s })
    });
}

#[test]
fn batchnorm_inference_mode() {
    run_class("batchnorm eval", |s| {
        let mut r = rng(s);
        let mut l = BatchNorm::new(2);
        l.scale.value = uniform(&[2], 2.0, &mut r);
        l.running_mean.value = uniform(&[2], 1.0, &mut r);
        l.running_var.value = uniform(&[2], 1.0, &mut r).map(|v| v.abs() + 0.5);
        (Box::new(l), uniform(&[3, 2, 2, 2], 1.0, &mut r), Mode::Eval)
    });
}

#[test]
fn dropout_with_fixed_step() {
    run_class("dropout", |s| {
        let mut r = rng(s);
        let l = Dropout::new(0.4, s).unwrap();
        (Box::new(l), uniform(&[3, 7], 1.0, &mut r), Mode::Train { step: 3 })
    });
}

#[test]
fn dense_all_activations() {
    for act in [Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Softplus] {
        run_class(&format!("dense {act:?}"), |s| {
            let mut r = rng(s);
            let mut l = Dense::new(5, 4, act, &mut r);
            l.bias.value = uniform(&[4], 0.5, &mut r);
            (Box::new(l), uniform(&[3, 5], 1.0, &mut r), Mode::Eval)
        });
    }
}

#[test]
fn elementwise_activations() {
    for act in [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Softplus] {
        run_class(&format!("act {act:?}"), |s| {
            let mut r = rng(s);
            (Box::new(Act::new(act)), uniform(&[2, 3, 3, 2], 2.0, &mut r), Mode::Eval)
        });
    }
}

#[test]
fn lstm_through_time() {
    run_class("lstm all", |s| {
        let mut r = rng(s);
        let t = r.random_range(1..=10);
        let mut l = Lstm::new(3, 4, ReturnMode::All, &mut r);
        for b in &mut l.b {
            b.value = uniform(&[4], 0.5, &mut r);
        }
        (Box::new(l), uniform(&[t, 2, 3], 1.0, &mut r), Mode::Eval)
    });
    run_class("lstm last", |s| {
        let mut r = rng(s + 99);
        let mut l = Lstm::new(2, 3, ReturnMode::Last, &mut r);
        for b in &mut l.b {
            b.value = uniform(&[3], 0.5, &mut r);
        }
        (Box::new(l), uniform(&[10, 2, 2], 1.0, &mut r), Mode::Eval)
    });
}

#[test]
fn lstm_every_weight_matrix_is_checked() {
    // Full sweep (no probing) over all eight matrices and four biases.
    let mut r = rng(5);
    let mut l = Lstm::new(2, 3, ReturnMode::Last, &mut r);
    let x = uniform(&[4, 2, 2], 1.0, &mut r);
    let report = check_layer(&mut l, &x, Mode::Eval, 6, None, FLOOR).unwrap();
    assert_eq!(report.checked, 4 * (3 * 2 + 3 * 3 + 3) + x.len());
    assert!(report.passes(TOLERANCE), "{report:?}");
}

#[test]
fn containers() {
    run_class("parallel mean", |s| {
        let mut r = rng(s);
        let a = Conv2d::new((3, 3), 2, 2, Padding::Same, &mut r);
        let b = Conv2d::new((1, 1), 2, 2, Padding::Same, &mut r);
        (Box::new(Parallel::new(Merge::Mean).branch(a).branch(b)), uniform(&[1, 4, 4, 2], 1.0, &mut r), Mode::Eval)
    });
    run_class("parallel concat", |s| {
        let mut r = rng(s);
        let mut conv_path = Sequential::new();
        conv_path.push(Conv2d::new((3, 3), 2, 3, Padding::Same, &mut r)).push(Pool2d::avg());
        let p = Parallel::new(Merge::Concat).branch(Pool2d::avg()).branch(conv_path);
        (Box::new(p), uniform(&[2, 4, 4, 2], 1.0, &mut r), Mode::Eval)
    });
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let len = 12;
        let p: Vec<f64> = (0..len).map(|_| r.random_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..len).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let mask: Vec<bool> = (0..len).map(|k| k == 0 || r.random_bool(0.8)).collect();
        type LossFn = fn(&[f64], &[f64], &[bool]) -> hotspot_nn::Result<(f64, Vec<f64>)>;
        let mcce2: LossFn = |p, y, m| mcce_loss(p, y, &m[..m.len() / 2], 2);
        for (name, f) in [("bce", bce_loss as LossFn), ("mse", mse_loss as LossFn), ("mcce", mcce2)] {
            let (_, g) = f(&p, &y, &mask).unwrap();
            for k in 0..len {
                let numeric = central_difference(
                    |v| {
                        let mut q = p.clone();
                        q[k] = v;
                        f(&q, &y, &mask).unwrap().0
                    },
                    p[k],
                    DEFAULT_STEP,
                );
                let err = relative_error(g[k], numeric, FLOOR);
                assert!(err <= TOLERANCE, "{name} seed {seed} elem {k}: {} vs {numeric}", g[k]);
            }
        }
    }
}
