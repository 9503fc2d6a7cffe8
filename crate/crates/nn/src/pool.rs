//! 2×2, stride-2 pooling over `N×H×W×C`. Odd extents drop the trailing row/column.

use crate::error::{NnError, Result};
use crate::layer::{Layer, Mode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

pub struct Pool2d {
    kind: PoolKind,
    cache: Option<Cache>,
}

struct Cache {
    input_shape: Vec<usize>,
    /// For max pooling: flat input index of each output's winner.
    argmax: Vec<usize>,
}

impl Pool2d {
    pub fn new(kind: PoolKind) -> Self {
        Pool2d { kind, cache: None }
    }

    pub fn max() -> Self {
        Pool2d::new(PoolKind::Max)
    }

    pub fn avg() -> Self {
        Pool2d::new(PoolKind::Avg)
    }
}

impl Layer for Pool2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        if input.rank() != 4 {
            return Err(NnError::shape("pool2d", format!("input must be N×H×W×C, got {:?}", input.shape())));
        }
        let (n, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        if h < 2 || w < 2 {
            return Err(NnError::shape("pool2d", format!("2×2 window larger than {h}×{w} input")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = input.data();
        let mut out = Tensor::zeros(&[n, oh, ow, c]);
        let mut argmax = Vec::new();
        if self.kind == PoolKind::Max {
            argmax.reserve(out.len());
        }
        let o = out.data_mut();
        let mut oi = 0;
        for img in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    let idx = |di: usize, dj: usize, ch: usize| ((img * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                    for ch in 0..c {
                        let cand = [idx(0, 0, ch), idx(0, 1, ch), idx(1, 0, ch), idx(1, 1, ch)];
                        match self.kind {
                            PoolKind::Max => {
                                // first maximum in scan order wins ties
                                let mut best = cand[0];
                                for &k in &cand[1..] {
                                    if x[k] > x[best] {
                                        best = k;
                                    }
                                }
                                o[oi] = x[best];
                                argmax.push(best);
                            }
                            PoolKind::Avg => {
                                o[oi] = (x[cand[0]] + x[cand[1]] + x[cand[2]] + x[cand[3]]) * 0.25;
                            }
                        }
                        oi += 1;
                    }
                }
            }
        }
        self.cache = Some(Cache { input_shape: input.shape().to_vec(), argmax });
        Ok(out)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(NnError::NoForward("pool2d"))?;
        let s = &cache.input_shape;
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        if output_grad.shape() != [n, oh, ow, c] {
            return Err(NnError::shape("pool2d backward", format!("{:?}", output_grad.shape())));
        }
        let mut input_grad = Tensor::zeros(s);
        let dx = input_grad.data_mut();
        let g = output_grad.data();
        match self.kind {
            PoolKind::Max => {
                for (gv, &k) in g.iter().zip(&cache.argmax) {
                    dx[k] += gv;
                }
            }
            PoolKind::Avg => {
                let mut oi = 0;
                for img in 0..n {
                    for i in 0..oh {
                        for j in 0..ow {
                            for ch in 0..c {
                                let share = g[oi] * 0.25;
                                for di in 0..2 {
                                    for dj in 0..2 {
                                        dx[((img * h + 2 * i + di) * w + 2 * j + dj) * c + ch] += share;
                                    }
                                }
                                oi += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(input_grad)
    }

    fn name(&self) -> &'static str {
        match self.kind {
            PoolKind::Max => "maxpool",
            PoolKind::Avg => "avgpool",
        }
    }
}
