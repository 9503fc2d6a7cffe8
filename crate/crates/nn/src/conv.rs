//! Stride-1 2-D convolution over `N×H×W×C` tensors.
//!
//! Output element `(n, i, j, d)` is
//! `bias[d] + Σ_m Σ_q Σ_c K[m, q, c, d] · I[n, i + m - pad, j + q - pad, c]`
//! with out-of-range input positions treated as zero.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::init::he_uniform;
use crate::layer::{Layer, Mode, Param, ParamVisitor};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `H×W`; kernel extents must be odd.
    Same,
    /// No padding; output is `(H-k1+1)×(W-k2+1)`.
    Valid,
}

pub struct Conv2d {
    /// `k1×k2×C×D`
    pub kernels: Param,
    /// `D`
    pub bias: Param,
    padding: Padding,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        kernel: (usize, usize),
        in_channels: usize,
        filters: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let (k1, k2) = kernel;
        let kernels = he_uniform(&[k1, k2, in_channels, filters], k1 * k2 * in_channels, rng);
        Conv2d::from_parts(kernels, Tensor::zeros(&[filters]), padding).expect("consistent shapes")
    }

    pub fn from_parts(kernels: Tensor, bias: Tensor, padding: Padding) -> Result<Self> {
        if kernels.rank() != 4 {
            return Err(NnError::shape("conv2d", format!("kernels must be k1×k2×C×D, got {:?}", kernels.shape())));
        }
        let (k1, k2, d) = (kernels.dim(0), kernels.dim(1), kernels.dim(3));
        if bias.shape() != [d] {
            return Err(NnError::shape("conv2d", format!("bias {:?} for {d} filters", bias.shape())));
        }
        if padding == Padding::Same && (k1 % 2 == 0 || k2 % 2 == 0) {
            return Err(NnError::Invalid(format!("same padding needs odd kernel extents, got {k1}×{k2}")));
        }
        Ok(Conv2d { kernels: Param::new(kernels), bias: Param::new(bias), padding, input: None })
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.value.dim(2)
    }

    pub fn filters(&self) -> usize {
        self.kernels.value.dim(3)
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (k1, k2) = (self.kernels.value.dim(0), self.kernels.value.dim(1));
        match self.padding {
            Padding::Same => Ok(Geometry { k1, k2, pad_h: k1 / 2, pad_w: k2 / 2, out_h: h, out_w: w }),
            Padding::Valid => {
                if h < k1 || w < k2 {
                    return Err(NnError::shape("conv2d", format!("{h}×{w} input smaller than {k1}×{k2} kernel")));
                }
                Ok(Geometry { k1, k2, pad_h: 0, pad_w: 0, out_h: h - k1 + 1, out_w: w - k2 + 1 })
            }
        }
    }
}

struct Geometry {
    k1: usize,
    k2: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    /// Input row for output row `i` and kernel row `m`, if inside the image.
    #[inline]
    fn src(i: usize, m: usize, pad: usize, extent: usize) -> Option<usize> {
        let s = (i + m).checked_sub(pad)?;
        (s < extent).then_some(s)
    }
}

/// `Σ a[k]·b[k]` with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ta) = a.split_at(a.len() / 4 * 4);
    let (cb, tb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

impl Conv2d {
    /// Kernels as a `D×(k1·k2·C)` matrix, one contiguous row per filter.
    fn kernel_rows(&self) -> Vec<f64> {
        let d = self.filters();
        let k = self.kernels.value.data();
        let plen = k.len() / d;
        let mut kt = vec![0.0; k.len()];
        for r in 0..plen {
            for f in 0..d {
                kt[f * plen + r] = k[r * d + f];
            }
        }
        kt
    }
}

impl Geometry {
    /// Copy the receptive field of output `(i, j)` into `patch`, zero outside the image.
    #[inline]
    fn gather(&self, x: &[f64], img: usize, i: usize, j: usize, h: usize, w: usize, c: usize, patch: &mut [f64]) {
        for m in 0..self.k1 {
            let si = Geometry::src(i, m, self.pad_h, h);
            for q in 0..self.k2 {
                let dst = &mut patch[(m * self.k2 + q) * c..(m * self.k2 + q + 1) * c];
                match (si, Geometry::src(j, q, self.pad_w, w)) {
                    (Some(si), Some(sj)) => {
                        let base = ((img * h + si) * w + sj) * c;
                        dst.copy_from_slice(&x[base..base + c]);
                    }
                    _ => dst.fill(0.0),
                }
            }
        }
    }

    /// Add `patch` back onto the input positions it was gathered from.
    #[inline]
    fn scatter(&self, dx: &mut [f64], img: usize, i: usize, j: usize, h: usize, w: usize, c: usize, patch: &[f64]) {
        for m in 0..self.k1 {
            let Some(si) = Geometry::src(i, m, self.pad_h, h) else { continue };
            for q in 0..self.k2 {
                let Some(sj) = Geometry::src(j, q, self.pad_w, w) else { continue };
                let base = ((img * h + si) * w + sj) * c;
                let src = &patch[(m * self.k2 + q) * c..(m * self.k2 + q + 1) * c];
                for (a, b) in dx[base..base + c].iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        if input.rank() != 4 {
            return Err(NnError::shape("conv2d", format!("input must be N×H×W×C, got {:?}", input.shape())));
        }
        let (n, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        if c != self.in_channels() {
            return Err(NnError::shape(
                "conv2d",
                format!("input has {c} channels but kernels expect {}", self.in_channels()),
            ));
        }
        let g = self.geometry(h, w)?;
        let d = self.filters();
        let kt = self.kernel_rows();
        let plen = g.k1 * g.k2 * c;
        let b = self.bias.value.data();
        let x = input.data();
        let mut patch = vec![0.0; plen];
        let mut out = Tensor::zeros(&[n, g.out_h, g.out_w, d]);
        let o = out.data_mut();
        for img in 0..n {
            for i in 0..g.out_h {
                for j in 0..g.out_w {
                    g.gather(x, img, i, j, h, w, c, &mut patch);
                    let obase = ((img * g.out_h + i) * g.out_w + j) * d;
                    for f in 0..d {
                        o[obase + f] = b[f] + dot(&kt[f * plen..(f + 1) * plen], &patch);
                    }
                }
            }
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let input = self.input.take().ok_or(NnError::NoForward("conv2d"))?;
        let (n, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let g = self.geometry(h, w)?;
        let d = self.filters();
        if output_grad.shape() != [n, g.out_h, g.out_w, d] {
            return Err(NnError::shape(
                "conv2d backward",
                format!("gradient {:?} vs output {:?}", output_grad.shape(), [n, g.out_h, g.out_w, d]),
            ));
        }
        let plen = g.k1 * g.k2 * c;
        let kt = self.kernel_rows();
        let mut dkt = vec![0.0; kt.len()];
        let x = input.data();
        let gy = output_grad.data();
        let db = self.bias.grad.data_mut();
        let mut input_grad = Tensor::zeros(input.shape());
        let dx = input_grad.data_mut();
        let mut patch = vec![0.0; plen];
        let mut dpatch = vec![0.0; plen];
        for img in 0..n {
            for i in 0..g.out_h {
                for j in 0..g.out_w {
                    let obase = ((img * g.out_h + i) * g.out_w + j) * d;
                    let grow = &gy[obase..obase + d];
                    if grow.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    g.gather(x, img, i, j, h, w, c, &mut patch);
                    dpatch.fill(0.0);
                    for (f, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        db[f] += gv;
                        axpy(&mut dkt[f * plen..(f + 1) * plen], gv, &patch);
                        axpy(&mut dpatch, gv, &kt[f * plen..(f + 1) * plen]);
                    }
                    g.scatter(dx, img, i, j, h, w, c, &dpatch);
                }
            }
        }
        let dk = self.kernels.grad.data_mut();
        for r in 0..plen {
            for f in 0..d {
                dk[r * d + f] += dkt[f * plen + r];
            }
        }
        Ok(input_grad)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        visitor("kernels", &mut self.kernels);
        visitor("bias", &mut self.bias);
    }

    fn name(&self) -> &'static str {
        "conv"
    }
}
