//! Layers shared by super-nets and discrete networks, plus the per-pass
//! forward context that binds their parameters into a tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twophase_tensor::{BatchStats, Binding, ConvSpec, ParamId, ParamSet, Tape, Tensor, Var};

use crate::error::Result;
use crate::supernet::SpaceConfig;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean/variance of one batch-norm layer, used at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Allocates parameters and batch-norm slots while a model is assembled.
pub struct Builder<'a> {
    pub params: &'a mut ParamSet,
    pub rng: &'a mut ChaCha8Rng,
    /// Whether batch-norm layers get a learnable scale and shift.
    pub affine: bool,
    pub running: Vec<RunningStats>,
}

impl<'a> Builder<'a> {
    pub fn new(params: &'a mut ParamSet, rng: &'a mut ChaCha8Rng, affine: bool) -> Self {
        Self {
            params,
            rng,
            affine,
            running: Vec::new(),
        }
    }

    /// Uniform in ±1/√fan_in, the usual default for convolution and linear layers.
    pub fn fan_in_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut *self.rng);
        self.params.add(name, t)
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, spec: ConvSpec, bias: bool) -> Conv {
        let fan_in = c_in / spec.groups * k * k;
        let w = self.fan_in_uniform(format!("{name}.w"), &[c_out, c_in / spec.groups, k, k], fan_in);
        let b = bias.then(|| self.fan_in_uniform(format!("{name}.b"), &[c_out], fan_in));
        Conv { w, b, spec }
    }

    pub fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        let (gamma, beta) = if self.affine {
            (
                Some(self.params.add(format!("{name}.gamma"), Tensor::ones(&[c]))),
                Some(self.params.add(format!("{name}.beta"), Tensor::zeros(&[c]))),
            )
        } else {
            (None, None)
        };
        self.running.push(RunningStats::new(c));
        BatchNorm {
            gamma,
            beta,
            slot: self.running.len() - 1,
        }
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, zero: bool) -> Linear {
        let w = if zero {
            self.params.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]))
        } else {
            self.fan_in_uniform(format!("{name}.w"), &[d_in, d_out], d_in)
        };
        let b = self.params.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Linear { w, b }
    }

    pub fn random_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// One forward pass: a fresh tape plus bindings of the model's parameters.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub weights: Binding<'a>,
    pub arch: Option<Binding<'a>>,
    running: Option<&'a [RunningStats]>,
    record: bool,
    /// Batch statistics seen by each batch-norm slot, when recording.
    pub observed: Vec<(usize, BatchStats)>,
}

impl<'a> Ctx<'a> {
    /// Batch-statistics mode. `record` keeps the statistics for running averages.
    pub fn train(weights: Binding<'a>, arch: Option<Binding<'a>>, record: bool) -> Self {
        Self {
            tape: Tape::new(),
            weights,
            arch,
            running: None,
            record,
            observed: Vec::new(),
        }
    }

    /// Inference with running statistics; nothing requires gradients.
    pub fn infer(weights: &'a ParamSet, arch: Option<&'a ParamSet>, running: &'a [RunningStats]) -> Self {
        Self {
            tape: Tape::new(),
            weights: Binding::frozen(weights),
            arch: arch.map(Binding::frozen),
            running: Some(running),
            record: false,
            observed: Vec::new(),
        }
    }

    pub fn w(&mut self, id: ParamId) -> Var {
        self.weights.var(&mut self.tape, id)
    }

    pub fn a(&mut self, id: ParamId) -> Var {
        let arch = self.arch.as_mut().expect("forward pass without architecture parameters");
        arch.var(&mut self.tape, id)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.w(self.w);
        let b = self.b.map(|b| ctx.w(b));
        Ok(ctx.tape.conv2d(x, w, b, self.spec)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub slot: usize,
}

impl BatchNorm {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        if let Some(running) = ctx.running {
            let r = &running[self.slot];
            let set = ctx.weights.set();
            let c = r.mean.len();
            let gamma = self.gamma.map_or_else(|| vec![1.0; c], |g| set.value(g).data().to_vec());
            let beta = self.beta.map_or_else(|| vec![0.0; c], |b| set.value(b).data().to_vec());
            let mut scale = vec![0.0; c];
            let mut shift = vec![0.0; c];
            for ch in 0..c {
                let inv = 1.0 / (r.var[ch] + BN_EPS).sqrt();
                scale[ch] = gamma[ch] * inv;
                shift[ch] = beta[ch] - r.mean[ch] * gamma[ch] * inv;
            }
            let s = ctx.tape.constant(Tensor::from_vec(scale));
            let t = ctx.tape.constant(Tensor::from_vec(shift));
            return Ok(ctx.tape.channel_affine(x, s, t)?);
        }
        let gamma = self.gamma.map(|g| ctx.w(g));
        let beta = self.beta.map(|b| ctx.w(b));
        let (y, stats) = ctx.tape.batch_norm(x, gamma, beta, BN_EPS)?;
        if ctx.record {
            ctx.observed.push((self.slot, stats));
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.w(self.w);
        let b = ctx.w(self.b);
        let y = ctx.tape.matmul(x, w)?;
        Ok(ctx.tape.add_bias(y, b)?)
    }
}

/// ReLU → 1×1 conv (no bias) → BN; used to preprocess cell inputs.
#[derive(Clone, Debug)]
pub struct ReluConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ReluConvBn {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            conv: b.conv(&format!("{name}.conv"), c_in, c_out, 1, ConvSpec::default(), false),
            bn: b.bn(&format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = ctx.tape.relu(x)?;
        let y = self.conv.forward(ctx, y)?;
        self.bn.forward(ctx, y)
    }
}

/// Halves resolution with two 1×1 stride-2 convolutions, the second offset by
/// one pixel, concatenated along channels and batch-normalized.
#[derive(Clone, Debug)]
pub struct FactorizedReduce {
    pub a: Conv,
    pub b: Conv,
    pub bn: BatchNorm,
}

impl FactorizedReduce {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Self {
        let spec = ConvSpec::new(2, 0, 1, 1);
        Self {
            a: b.conv(&format!("{name}.a"), c_in, c_out / 2, 1, spec, false),
            b: b.conv(&format!("{name}.b"), c_in, c_out / 2, 1, spec, false),
            bn: b.bn(&format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let x = ctx.tape.relu(x)?;
        let (_, _, h, w) = ctx.tape.value(x).dims4().expect("feature map");
        let ya = self.a.forward(ctx, x)?;
        let shifted = ctx.tape.crop(x, 1, 1, h - 1, w - 1)?;
        let yb = self.b.forward(ctx, shifted)?;
        let y = ctx.tape.concat(&[ya, yb])?;
        self.bn.forward(ctx, y)
    }
}

/// Cell-input preprocessing: a 1×1 projection, or a factorized reduction when
/// the input comes from before a reduction cell.
#[derive(Clone, Debug)]
pub enum Preprocess {
    Project(ReluConvBn),
    Reduce(FactorizedReduce),
}

impl Preprocess {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Preprocess::Project(p) => p.forward(ctx, x),
            Preprocess::Reduce(r) => r.forward(ctx, x),
        }
    }
}

/// Channel bookkeeping for one cell in a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellShape {
    pub c_prev_prev: usize,
    pub c_prev: usize,
    pub c: usize,
    pub reduction: bool,
    pub reduction_prev: bool,
}

/// Stem → cells → global average pool → linear, shared by super-nets and
/// discrete networks.
#[derive(Clone, Debug)]
pub struct Scaffold {
    pub stem_conv: Conv,
    pub stem_bn: BatchNorm,
    pub pre: Vec<(Preprocess, Preprocess)>,
    pub head: Linear,
    pub shapes: Vec<CellShape>,
}

impl Scaffold {
    /// A zero-initialized head predicts the first class until trained.
    pub fn new(b: &mut Builder, cfg: &SpaceConfig, zero_head: bool) -> Self {
        let (cells, init_channels, classes) = (cfg.cells, cfg.init_channels, cfg.classes);
        let reductions = &cfg.reductions;
        let cell_outputs = intermediate_nodes(cfg.nodes);
        let c_stem = cfg.stem_multiplier * init_channels;
        let stem_conv = b.conv("stem", cfg.in_channels, c_stem, 3, ConvSpec::new(1, 1, 1, 1), false);
        let stem_bn = b.bn("stem.bn", c_stem);
        let (mut c_pp, mut c_p, mut c) = (c_stem, c_stem, init_channels);
        let mut reduction_prev = false;
        let mut shapes = Vec::with_capacity(cells);
        let mut pre = Vec::with_capacity(cells);
        for i in 0..cells {
            let reduction = reductions.contains(&i);
            if reduction {
                c *= 2;
            }
            let p0 = if reduction_prev {
                Preprocess::Reduce(FactorizedReduce::new(b, &format!("cell{i}.pre0"), c_pp, c))
            } else {
                Preprocess::Project(ReluConvBn::new(b, &format!("cell{i}.pre0"), c_pp, c))
            };
            let p1 = Preprocess::Project(ReluConvBn::new(b, &format!("cell{i}.pre1"), c_p, c));
            pre.push((p0, p1));
            shapes.push(CellShape {
                c_prev_prev: c_pp,
                c_prev: c_p,
                c,
                reduction,
                reduction_prev,
            });
            reduction_prev = reduction;
            c_pp = c_p;
            c_p = cell_outputs * c;
        }
        let head = b.linear("classifier", c_p, classes, zero_head);
        Self {
            stem_conv,
            stem_bn,
            pre,
            head,
            shapes,
        }
    }

    pub fn stem(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.stem_conv.forward(ctx, x)?;
        self.stem_bn.forward(ctx, y)
    }

    pub fn classify(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        let pooled = ctx.tape.global_avg_pool(features)?;
        let n = ctx.tape.shape(pooled)[0];
        let c = ctx.tape.shape(pooled)[1];
        let flat = ctx.tape.reshape(pooled, &[n, c])?;
        self.head.forward(ctx, flat)
    }
}

/// Intermediate nodes of an `n`-node cell (two inputs, one output).
pub fn intermediate_nodes(n: usize) -> usize {
    n.saturating_sub(3)
}
