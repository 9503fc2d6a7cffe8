//! The [`Layer`] trait and generic containers.
//!
//! Every layer caches whatever its backward pass needs during `forward`, so a
//! layer instance must see exactly one `forward` before each `backward`.
//! Parameter gradients accumulate (`+=`) until [`zero_grads`] is called.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Forward-pass mode. `step` seeds stochastic layers so repeated forwards at the
/// same step (as finite-difference checks do) see identical dropout masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { step: u64 },
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// A named value with its gradient buffer.
///
/// Non-trainable params (batch-norm running statistics) are persisted with the
/// model but skipped by the optimizer and by gradient checks.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, trainable: true }
    }

    pub fn buffer(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, trainable: false }
    }
}

pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;

pub trait Layer: Send {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Consumes the gradient of the loss w.r.t. the last forward output and
    /// returns the gradient w.r.t. that forward's input.
    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor>;

    /// Visit every parameter in a fixed order with a stable dotted name.
    fn visit_params(&mut self, _visitor: &mut ParamVisitor<'_>) {}

    fn name(&self) -> &'static str;
}

/// Visit `child`'s params with `prefix.` prepended to their names.
pub fn visit_prefixed(child: &mut dyn Layer, prefix: &str, visitor: &mut ParamVisitor<'_>) {
    child.visit_params(&mut |name, p| visitor(&format!("{prefix}.{name}"), p));
}

pub fn zero_grads(layer: &mut dyn Layer) {
    layer.visit_params(&mut |_, p| p.grad.fill(0.0));
}

/// Number of trainable scalars.
pub fn param_count(layer: &mut dyn Layer) -> usize {
    let mut n = 0;
    layer.visit_params(&mut |_, p| {
        if p.trainable {
            n += p.value.len()
        }
    });
    n
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer>) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let mut g = output_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = format!("{i}.{}", layer.name());
            visit_prefixed(layer.as_mut(), &prefix, visitor);
        }
    }

    fn name(&self) -> &'static str {
        "seq"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    /// Elementwise mean; branch outputs must have identical shapes.
    Mean,
    /// Concatenation along the last (channel) axis.
    Concat,
}

/// Branches applied to the same input, merged by [`Merge`].
pub struct Parallel {
    branches: Vec<Box<dyn Layer>>,
    merge: Merge,
    widths: Option<Vec<usize>>,
}

impl Parallel {
    pub fn new(merge: Merge) -> Self {
        Parallel { branches: Vec::new(), merge, widths: None }
    }

    pub fn branch(mut self, layer: impl Layer + 'static) -> Self {
        self.branches.push(Box::new(layer));
        self
    }
}

impl Layer for Parallel {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if self.branches.is_empty() {
            return Err(NnError::Invalid("parallel layer without branches".into()));
        }
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(input, mode))
            .collect::<Result<Vec<_>>>()?;
        match self.merge {
            Merge::Mean => {
                let mut acc = outs[0].clone();
                for o in &outs[1..] {
                    acc.add_assign(o)?;
                }
                acc.scale(1.0 / outs.len() as f64);
                self.widths = Some(Vec::new());
                Ok(acc)
            }
            Merge::Concat => {
                self.widths = Some(outs.iter().map(|o| *o.shape().last().unwrap()).collect());
                Tensor::concat_last(&outs.iter().collect::<Vec<_>>())
            }
        }
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let widths = self.widths.take().ok_or(NnError::NoForward("parallel"))?;
        let grads = match self.merge {
            Merge::Mean => {
                let mut g = output_grad.clone();
                g.scale(1.0 / self.branches.len() as f64);
                vec![g; self.branches.len()]
            }
            Merge::Concat => output_grad.split_last(&widths)?,
        };
        let mut input_grad: Option<Tensor> = None;
        for (branch, g) in self.branches.iter_mut().zip(&grads) {
            let gi = branch.backward(g)?;
            match input_grad.as_mut() {
                Some(acc) => acc.add_assign(&gi)?,
                None => input_grad = Some(gi),
            }
        }
        Ok(input_grad.unwrap())
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            let prefix = format!("{i}.{}", b.name());
            visit_prefixed(b.as_mut(), &prefix, visitor);
        }
    }

    fn name(&self) -> &'static str {
        "par"
    }
}

/// Pass-through; useful as a residual branch.
pub struct Identity;

impl Layer for Identity {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        Ok(input.clone())
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        Ok(output_grad.clone())
    }

    fn name(&self) -> &'static str {
        "id"
    }
}

/// Collapse all but the leading axis: `N×…` becomes `N×rest`.
#[derive(Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { input_shape: None }
    }
}

impl Layer for Flatten {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let n = input.dim(0);
        self.input_shape = Some(input.shape().to_vec());
        input.reshaped(&[n, input.len() / n.max(1)])
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.take().ok_or(NnError::NoForward("flatten"))?;
        output_grad.reshaped(&shape)
    }

    fn name(&self) -> &'static str {
        "flatten"
    }
}
