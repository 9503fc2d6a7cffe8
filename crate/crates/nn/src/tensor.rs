//! Dense row-major tensors of `f64` with at most four axes.

use crate::error::{NnError, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= MAX_RANK, "tensor rank {} exceeds {MAX_RANK}", shape.len());
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(NnError::shape("tensor", format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::shape(
                "tensor",
                format!("shape {shape:?} holds {n} elements but {} were given", data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data, new shape. Element count must be preserved.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > MAX_RANK {
            return Err(NnError::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.clone().reshape(shape)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(NnError::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Reorder axes. `axes[k]` names the source axis that becomes axis `k`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = [false; MAX_RANK];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(NnError::shape("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        // Pad to rank 4 with leading unit axes so one loop nest covers every case.
        let pad = MAX_RANK - rank;
        let mut src_shape = [1usize; MAX_RANK];
        src_shape[pad..].copy_from_slice(&self.shape);
        let mut src_strides = [0usize; MAX_RANK];
        let mut acc = 1;
        for k in (0..MAX_RANK).rev() {
            src_strides[k] = acc;
            acc *= src_shape[k];
        }
        let mut dst_shape = [1usize; MAX_RANK];
        let mut strides = [0usize; MAX_RANK];
        for k in 0..MAX_RANK {
            let src_axis = if k < pad { k } else { axes[k - pad] + pad };
            dst_shape[k] = src_shape[src_axis];
            strides[k] = src_strides[src_axis];
        }
        let mut data = Vec::with_capacity(self.len());
        for a in 0..dst_shape[0] {
            for b in 0..dst_shape[1] {
                for c in 0..dst_shape[2] {
                    let base = a * strides[0] + b * strides[1] + c * strides[2];
                    for d in 0..dst_shape[3] {
                        data.push(self.data[base + d * strides[3]]);
                    }
                }
            }
        }
        Ok(Tensor { shape: dst_shape[pad..].to_vec(), data })
    }

    /// Concatenate tensors along their last axis. Leading axes must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| NnError::Invalid("concat of zero tensors".into()))?;
        let lead = &first.shape[..first.rank() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.rank() != first.rank() || &p.shape[..p.rank() - 1] != lead {
                return Err(NnError::shape("concat", format!("{:?} vs {:?}", first.shape, p.shape)));
            }
            widths.push(*p.shape.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_last`].
    pub fn split_last(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let last = *self.shape.last().unwrap_or(&0);
        if widths.iter().sum::<usize>() != last {
            return Err(NnError::shape("split", format!("widths {widths:?} do not sum to {last}")));
        }
        let rows = self.len() / last.max(1);
        let lead = &self.shape[..self.rank() - 1];
        let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut off = r * last;
            for (buf, &w) in out.iter_mut().zip(widths) {
                buf.extend_from_slice(&self.data[off..off + w]);
                off += w;
            }
        }
        Ok(out
            .into_iter()
            .zip(widths)
            .map(|(data, &w)| {
                let mut shape = lead.to_vec();
                shape.push(w);
                Tensor { shape, data }
            })
            .collect())
    }
}
