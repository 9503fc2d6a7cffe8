//! Long short-term memory layer with backpropagation through time.
//!
//! Per timestep, for a batch of `N` sequences:
//!
//! ```text
//! i = σ(W_xi x + W_hi h_prev + b_i)
//! f = σ(W_xf x + W_hf h_prev + b_f)
//! g = tanh(W_xc x + W_hc h_prev + b_c)
//! c = f ⊙ c_prev + i ⊙ g
//! o = σ(W_xo x + W_ho h_prev + b_o)
//! h = o ⊙ tanh(c)
//! ```
//!
//! `h` and `c` start at zero for every sequence.

use rand::Rng;

use crate::activation::sigmoid;
use crate::dense::{matmul_backward_acc, matmul_bt_acc};
use crate::error::{NnError, Result};
use crate::init::uniform;
use crate::layer::{Layer, Mode, Param, ParamVisitor};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReturnMode {
    /// `N×m`: hidden state after the final step.
    Last,
    /// `T×N×m`: hidden state after every step.
    All,
}

/// Gate order used for weight/bias arrays: input, forget, candidate, output.
const GATES: [&str; 4] = ["i", "f", "c", "o"];

pub struct Lstm {
    /// `W_x*`, each `m×n`, in [`GATES`] order.
    pub w_x: [Param; 4],
    /// `W_h*`, each `m×m`.
    pub w_h: [Param; 4],
    pub b: [Param; 4],
    return_mode: ReturnMode,
    cache: Option<Cache>,
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct Cache {
    n: usize,
    steps: Vec<StepCache>,
}

/// Gate activations for one step of a batch.
struct StepOut {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, return_mode: ReturnMode, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let w_x = std::array::from_fn(|_| Param::new(uniform(&[hidden, inputs], limit, rng)));
        let w_h = std::array::from_fn(|_| Param::new(uniform(&[hidden, hidden], limit, rng)));
        let b = std::array::from_fn(|k| {
            // forget gate starts open
            let v = if k == 1 { 1.0 } else { 0.0 };
            Param::new(Tensor::filled(&[hidden], v))
        });
        Lstm { w_x, w_h, b, return_mode, cache: None }
    }

    pub fn inputs(&self) -> usize {
        self.w_x[0].value.dim(1)
    }

    pub fn hidden(&self) -> usize {
        self.w_x[0].value.dim(0)
    }

    pub fn return_mode(&self) -> ReturnMode {
        self.return_mode
    }

    fn step_batch(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], n: usize) -> StepOut {
        let (ni, m) = (self.inputs(), self.hidden());
        let mut pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n * m]);
        for (k, z) in pre.iter_mut().enumerate() {
            let b = self.b[k].value.data();
            for r in 0..n {
                z[r * m..(r + 1) * m].copy_from_slice(b);
            }
            matmul_bt_acc(x, self.w_x[k].value.data(), n, ni, m, z);
            matmul_bt_acc(h_prev, self.w_h[k].value.data(), n, m, m, z);
        }
        let [zi, zf, zg, zo] = pre;
        let i: Vec<f64> = zi.into_iter().map(sigmoid).collect();
        let f: Vec<f64> = zf.into_iter().map(sigmoid).collect();
        let g: Vec<f64> = zg.into_iter().map(f64::tanh).collect();
        let o: Vec<f64> = zo.into_iter().map(sigmoid).collect();
        let c: Vec<f64> = (0..n * m).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        StepOut { i, f, g, o, c, tanh_c, h }
    }

    /// One recurrence step for a single sequence: returns `(h, c)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, m) = (self.inputs(), self.hidden());
        if x.len() != n || h_prev.len() != m || c_prev.len() != m {
            return Err(NnError::shape(
                "lstm step",
                format!("x {}, h {}, c {} for input {n} hidden {m}", x.len(), h_prev.len(), c_prev.len()),
            ));
        }
        let out = self.step_batch(x, h_prev, c_prev, 1);
        Ok((out.h, out.c))
    }

    /// Run a single sequence of vectors from zero state without touching the cache.
    pub fn run_sequence(&self, sequence: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if sequence.is_empty() {
            return Err(NnError::Invalid("lstm over an empty sequence".into()));
        }
        let m = self.hidden();
        let (mut h, mut c) = (vec![0.0; m], vec![0.0; m]);
        let mut hs = Vec::with_capacity(sequence.len());
        for x in sequence {
            (h, c) = self.step(x, &h, &c)?;
            hs.push(h.clone());
        }
        Ok(hs)
    }
}

impl Layer for Lstm {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (ni, m) = (self.inputs(), self.hidden());
        if input.rank() != 3 || input.dim(2) != ni {
            return Err(NnError::shape(
                "lstm",
                format!("input must be T×N×{ni}, got {:?}", input.shape()),
            ));
        }
        let (t, n) = (input.dim(0), input.dim(1));
        if t == 0 {
            return Err(NnError::Invalid("lstm over an empty sequence".into()));
        }
        let mut h = vec![0.0; n * m];
        let mut c = vec![0.0; n * m];
        let mut steps = Vec::with_capacity(t);
        let mut all = Vec::with_capacity(if self.return_mode == ReturnMode::All { t * n * m } else { 0 });
        for s in 0..t {
            let x = &input.data()[s * n * ni..(s + 1) * n * ni];
            let out = self.step_batch(x, &h, &c, n);
            if self.return_mode == ReturnMode::All {
                all.extend_from_slice(&out.h);
            }
            let h_prev = std::mem::replace(&mut h, out.h);
            let c_prev = std::mem::replace(&mut c, out.c);
            steps.push(StepCache {
                x: x.to_vec(),
                h_prev,
                c_prev,
                i: out.i,
                f: out.f,
                g: out.g,
                o: out.o,
                tanh_c: out.tanh_c,
            });
        }
        self.cache = Some(Cache { n, steps });
        match self.return_mode {
            ReturnMode::Last => Tensor::from_vec(&[n, m], h),
            ReturnMode::All => Tensor::from_vec(&[t, n, m], all),
        }
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let Cache { n, steps } = self.cache.take().ok_or(NnError::NoForward("lstm"))?;
        let (ni, m, t) = (self.inputs(), self.hidden(), steps.len());
        let expected: Vec<usize> = match self.return_mode {
            ReturnMode::Last => vec![n, m],
            ReturnMode::All => vec![t, n, m],
        };
        if output_grad.shape() != expected.as_slice() {
            return Err(NnError::shape(
                "lstm backward",
                format!("gradient {:?} vs output {expected:?}", output_grad.shape()),
            ));
        }
        let nm = n * m;
        let mut dh_next = vec![0.0; nm];
        let mut dc_next = vec![0.0; nm];
        let mut input_grad = Tensor::zeros(&[t, n, ni]);
        for s in (0..t).rev() {
            let st = &steps[s];
            let mut dh = std::mem::take(&mut dh_next);
            match self.return_mode {
                ReturnMode::All => {
                    for (a, b) in dh.iter_mut().zip(&output_grad.data()[s * nm..(s + 1) * nm]) {
                        *a += b;
                    }
                }
                ReturnMode::Last if s == t - 1 => {
                    for (a, b) in dh.iter_mut().zip(output_grad.data()) {
                        *a += b;
                    }
                }
                ReturnMode::Last => {}
            }
            // pre-activation gradients in GATES order
            let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; nm]);
            for k in 0..nm {
                let dc = dh[k] * st.o[k] * (1.0 - st.tanh_c[k] * st.tanh_c[k]) + dc_next[k];
                let d_o = dh[k] * st.tanh_c[k];
                let di = dc * st.g[k];
                let dg = dc * st.i[k];
                let df = dc * st.c_prev[k];
                dc_next[k] = dc * st.f[k];
                dz[0][k] = di * st.i[k] * (1.0 - st.i[k]);
                dz[1][k] = df * st.f[k] * (1.0 - st.f[k]);
                dz[2][k] = dg * (1.0 - st.g[k] * st.g[k]);
                dz[3][k] = d_o * st.o[k] * (1.0 - st.o[k]);
            }
            let dx = &mut input_grad.data_mut()[s * n * ni..(s + 1) * n * ni];
            dh_next = vec![0.0; nm];
            for (k, dzk) in dz.iter().enumerate() {
                let db = self.b[k].grad.data_mut();
                for r in 0..n {
                    for (b, g) in db.iter_mut().zip(&dzk[r * m..(r + 1) * m]) {
                        *b += g;
                    }
                }
                let (wx, dwx) = split_param(&mut self.w_x[k]);
                matmul_backward_acc(dzk, &st.x, wx, n, ni, m, dwx, dx);
                let (wh, dwh) = split_param(&mut self.w_h[k]);
                matmul_backward_acc(dzk, &st.h_prev, wh, n, m, m, dwh, &mut dh_next);
            }
        }
        Ok(input_grad)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        for k in 0..4 {
            visitor(&format!("w_x{}", GATES[k]), &mut self.w_x[k]);
            visitor(&format!("w_h{}", GATES[k]), &mut self.w_h[k]);
            visitor(&format!("b_{}", GATES[k]), &mut self.b[k]);
        }
    }

    fn name(&self) -> &'static str {
        "lstm"
    }
}

fn split_param(p: &mut Param) -> (&[f64], &mut [f64]) {
    (p.value.data(), p.grad.data_mut())
}
