//! Central finite-difference checks for layer gradients.
//!
//! The scalar loss is `Σ output ⊙ R` for a fixed random projection `R`, so the
//! analytic gradient is obtained by back-propagating `R` itself.

use rand::Rng;

use crate::error::Result;
use crate::init::{rng, uniform};
use crate::layer::{zero_grads, Layer, Mode};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero gradients from
/// turning finite-difference truncation noise into huge relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Name and element of the worst offender.
    pub worst: Option<(String, usize)>,
}

impl GradReport {
    fn record(&mut self, name: &str, index: usize, err: f64) {
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), index));
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn projected_loss(layer: &mut dyn Layer, input: &Tensor, mode: Mode, proj: &Tensor) -> Result<f64> {
    let y = layer.forward(input, mode)?;
    Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
}

fn with_param_element<T>(layer: &mut dyn Layer, target: usize, elem: usize, f: impl FnOnce(&mut f64) -> T) -> T {
    let mut f = Some(f);
    let mut out = None;
    let mut idx = 0;
    layer.visit_params(&mut |_, p| {
        if p.trainable {
            if idx == target {
                out = Some((f.take().unwrap())(&mut p.value.data_mut()[elem]));
            }
            idx += 1;
        }
    });
    out.expect("param index in range")
}

/// Compare analytic and numeric gradients for every trainable parameter and
/// the input. `probes` caps the elements checked per tensor (sampled with `seed`).
pub fn check_layer(
    layer: &mut dyn Layer,
    input: &Tensor,
    mode: Mode,
    seed: u64,
    probes: Option<usize>,
    floor: f64,
) -> Result<GradReport> {
    let mut r = rng(seed);
    let out_shape = layer.forward(input, mode)?.shape().to_vec();
    let proj = uniform(&out_shape, 1.0, &mut r);

    zero_grads(layer);
    layer.forward(input, mode)?;
    let input_grad = layer.backward(&proj)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit_params(&mut |name, p| {
        if p.trainable {
            analytic.push((name.to_string(), p.grad.data().to_vec()));
        }
    });

    let pick = |len: usize, r: &mut crate::init::SeededRng| -> Vec<usize> {
        match probes {
            Some(k) if k < len => (0..k).map(|_| r.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        }
    };

    let mut report = GradReport::default();
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for e in pick(grads.len(), &mut r) {
            let x0 = with_param_element(layer, pi, e, |v| *v);
            let numeric = central_difference(
                |x| {
                    with_param_element(layer, pi, e, |v| *v = x);
                    projected_loss(layer, input, mode, &proj).expect("forward succeeded once")
                },
                x0,
                DEFAULT_STEP,
            );
            with_param_element(layer, pi, e, |v| *v = x0);
            report.record(name, e, relative_error(grads[e], numeric, floor));
        }
    }
    let mut x = input.clone();
    for e in pick(x.len(), &mut r) {
        let x0 = x.data()[e];
        let numeric = central_difference(
            |v| {
                x.data_mut()[e] = v;
                projected_loss(layer, &x, mode, &proj).expect("forward succeeded once")
            },
            x0,
            DEFAULT_STEP,
        );
        x.data_mut()[e] = x0;
        report.record("input", e, relative_error(input_grad.data()[e], numeric, floor));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::NnError;

    /// `y = x²` with a backward pass that is off by a factor of 1.01.
    struct Skewed(Option<Tensor>);

    impl Layer for Skewed {
        fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
            self.0 = Some(input.clone());
            Ok(input.map(|v| v * v))
        }

        fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
            let x = self.0.take().ok_or(NnError::NoForward("skewed"))?;
            let data = x.data().iter().zip(g.data()).map(|(x, g)| 2.02 * x * g).collect();
            Tensor::from_vec(x.shape(), data)
        }

        fn name(&self) -> &'static str {
            "skewed"
        }
    }

    #[test]
    fn detects_a_one_percent_gradient_error() {
        let x = uniform(&[4, 3], 1.0, &mut rng(1));
        let report = check_layer(&mut Skewed(None), &x, Mode::Eval, 2, None, 1e-5).unwrap();
        assert_eq!(report.checked, 12);
        assert!(!report.passes(1e-3));
        assert!((report.max_rel_error - 0.01 / 1.01).abs() < 1e-4);
    }
}
