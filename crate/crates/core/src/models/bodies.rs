//! Convolutional spatial feature extractors. Each maps `N×p×p×C` to a flat
//! `N×F` feature vector, with three 2× reductions of the spatial extent.

use hotspot_nn::init::{mix_seed, SeededRng};
use hotspot_nn::layer::ParamVisitor;
use hotspot_nn::{Act, BatchNorm, Conv2d, Dropout, Flatten, Layer, Merge, Mode, NnError, Padding, Parallel, Pool2d, Sequential, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyKind {
    Vgg,
    ResNet,
    FastMask,
    FastResMask,
}

impl BodyKind {
    pub const ALL: [BodyKind; 4] = [BodyKind::Vgg, BodyKind::ResNet, BodyKind::FastMask, BodyKind::FastResMask];

    pub fn name(self) -> &'static str {
        match self {
            BodyKind::Vgg => "vgg",
            BodyKind::ResNet => "resnet",
            BodyKind::FastMask => "fastmask",
            BodyKind::FastResMask => "fastresmask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase().replace(['-', '_'], "");
        BodyKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::config(format!("unknown body `{s}` (expected vgg, resnet, fastmask or fastresmask)")))
    }
}

/// Shared knobs for body construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BodySpec {
    pub kind: BodyKind,
    pub p: usize,
    pub channels: usize,
    /// Width unit: 32 gives the full-size filter counts.
    pub base: usize,
    pub batch_norm: bool,
    pub dropout: f64,
    pub seed: u64,
}

/// A built body and the length of the feature vector it emits.
pub struct Body {
    pub net: Sequential,
    pub features: usize,
}

struct Ctx<'a> {
    spec: &'a BodySpec,
    rng: &'a mut SeededRng,
    dropouts: u64,
}

impl Ctx<'_> {
    fn conv(&mut self, seq: &mut Sequential, k: usize, cin: usize, cout: usize) {
        seq.push(Conv2d::new((k, k), cin, cout, Padding::Same, self.rng));
        seq.push(Act::relu());
    }

    /// Batch-norm and dropout as configured, after a pooling layer.
    fn regularize(&mut self, seq: &mut Sequential, channels: usize) -> Result<()> {
        if self.spec.batch_norm {
            seq.push(BatchNorm::new(channels));
        }
        if self.spec.dropout > 0.0 {
            self.dropouts += 1;
            seq.push(Dropout::new(self.spec.dropout, mix_seed(self.spec.seed, 0xd0 + self.dropouts))?);
        }
        Ok(())
    }

    /// conv3(f/4) → conv1(f/4) → conv3(f), averaged with a parallel conv3(f),
    /// then max-pooled.
    fn res_block(&mut self, cin: usize, f: usize) -> Result<Sequential> {
        let q = (f / 4).max(1);
        let mut main = Sequential::new();
        self.conv(&mut main, 3, cin, q);
        self.conv(&mut main, 1, q, q);
        self.conv(&mut main, 3, q, f);
        let mut side = Sequential::new();
        self.conv(&mut side, 3, cin, f);
        let mut block = Sequential::new();
        block.push(Parallel::new(Merge::Mean).branch(main).branch(side));
        block.push(Pool2d::max());
        self.regularize(&mut block, f)?;
        Ok(block)
    }

    /// Pooled identity path concatenated with a conv3 → conv3 → pool path.
    fn neck(&mut self, cin: usize, f: usize) -> Sequential {
        let mut conv_path = Sequential::new();
        self.conv(&mut conv_path, 3, cin, f);
        self.conv(&mut conv_path, 3, f, f);
        conv_path.push(Pool2d::avg());
        let mut neck = Sequential::new();
        neck.push(Parallel::new(Merge::Concat).branch(Pool2d::avg()).branch(conv_path));
        neck
    }
}

/// Runs stages in sequence, average-pools every stage output down to the
/// last stage's scale and concatenates them along channels.
pub struct MultiScale {
    stages: Vec<Sequential>,
    /// `pools[i]` brings stage `i` down to the final scale.
    pools: Vec<Vec<Pool2d>>,
    widths: Vec<usize>,
    ran: bool,
}

impl MultiScale {
    pub fn new(stages: Vec<Sequential>, widths: Vec<usize>) -> Self {
        let n = stages.len();
        let pools = (0..n).map(|i| (i + 1..n).map(|_| Pool2d::avg()).collect()).collect();
        MultiScale { stages, pools, widths, ran: false }
    }
}

impl Layer for MultiScale {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> hotspot_nn::Result<Tensor> {
        let mut x = input.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for (stage, pools) in self.stages.iter_mut().zip(&mut self.pools) {
            x = stage.forward(&x, mode)?;
            let mut y = x.clone();
            for pool in pools.iter_mut() {
                y = pool.forward(&y, mode)?;
            }
            outs.push(y);
        }
        self.ran = true;
        Tensor::concat_last(&outs.iter().collect::<Vec<_>>())
    }

    fn backward(&mut self, output_grad: &Tensor) -> hotspot_nn::Result<Tensor> {
        if !std::mem::take(&mut self.ran) {
            return Err(NnError::NoForward("multiscale"));
        }
        let parts = output_grad.split_last(&self.widths)?;
        let mut carried: Option<Tensor> = None;
        for i in (0..self.stages.len()).rev() {
            let mut g = parts[i].clone();
            for pool in self.pools[i].iter_mut().rev() {
                g = pool.backward(&g)?;
            }
            if let Some(c) = carried.take() {
                g.add_assign(&c)?;
            }
            carried = Some(self.stages[i].backward(&g)?);
        }
        Ok(carried.expect("at least one stage"))
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            hotspot_nn::layer::visit_prefixed(s, &format!("{i}.seq"), visitor);
        }
    }

    fn name(&self) -> &'static str {
        "multiscale"
    }
}

const REDUCTIONS: usize = 3;

/// Spatial extent after the three 2×2 reductions (floor at each step).
pub fn reduced_extent(p: usize) -> usize {
    (0..REDUCTIONS).fold(p, |e, _| e / 2)
}

pub fn build_body(spec: &BodySpec, rng: &mut SeededRng) -> Result<Body> {
    if spec.p < 8 {
        return Err(Error::config(format!("bodies need p ≥ 8 to survive three poolings, got {}", spec.p)));
    }
    if spec.base == 0 || spec.channels == 0 {
        return Err(Error::config("body widths must be positive"));
    }
    let b = spec.base;
    let c = spec.channels;
    let mut ctx = Ctx { spec, rng, dropouts: 0 };
    let mut net = Sequential::new();
    let out_channels = match spec.kind {
        BodyKind::Vgg => {
            let pairs = [(3, b), (3, b), (3, 2 * b), (3, 2 * b), (1, 8 * b)];
            let mut cin = c;
            for (i, &(k, f)) in pairs.iter().enumerate() {
                ctx.conv(&mut net, k, cin, f);
                ctx.conv(&mut net, k, f, f);
                cin = f;
                if i < REDUCTIONS {
                    net.push(Pool2d::max());
                    ctx.regularize(&mut net, f)?;
                }
            }
            cin
        }
        BodyKind::ResNet => {
            let mut cin = c;
            for f in [b, 2 * b, 4 * b] {
                net.push(ctx.res_block(cin, f)?);
                cin = f;
            }
            cin
        }
        BodyKind::FastMask => {
            let mut stages = Vec::new();
            let mut widths = Vec::new();
            let mut cin = c;
            for f in [b, 2 * b, 4 * b] {
                stages.push(ctx.neck(cin, f));
                cin += f;
                widths.push(cin);
            }
            net.push(MultiScale::new(stages, widths.clone()));
            widths.iter().sum()
        }
        BodyKind::FastResMask => {
            let mut stages = Vec::new();
            let mut cin = c;
            for f in [b, 2 * b, 4 * b] {
                stages.push(ctx.res_block(cin, f)?);
                cin = f;
            }
            let widths = vec![b, 2 * b, 4 * b];
            net.push(MultiScale::new(stages, widths.clone()));
            widths.iter().sum()
        }
    };
    net.push(Flatten::new());
    let e = reduced_extent(spec.p);
    Ok(Body { net, features: e * e * out_channels })
}
