//! Candidate operators with exact parameter and FLOP accounting.
//!
//! Structures follow the usual DARTS space:
//!
//! * `sep_conv_k`: (ReLU, depthwise k×k, pointwise, BN) twice; only the first
//!   depthwise conv carries the stride, the first pointwise keeps `C_in`.
//! * `dil_conv_k`: ReLU, depthwise k×k with dilation 2, pointwise, BN.
//! * pools: 3×3, padding 1, average excludes padding; no BN afterwards.
//! * `skip_connect`: identity at stride 1, factorized reduce at stride 2.
//! * `none`: zeros of the output shape.
//!
//! FLOPs count multiply-accumulates of convolutions (bias excluded) and the
//! window area per pooled element; ReLU and BN are free.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twophase_tensor::{ConvSpec, PoolSpec, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::nn::{BatchNorm, Builder, Conv, Ctx, FactorizedReduce};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum OperatorKind {
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    SkipConnect,
    Zero,
}

impl OperatorKind {
    /// Canonical order; also the tie-break order during derivation.
    pub const ALL: [OperatorKind; 8] = [
        OperatorKind::SepConv3x3,
        OperatorKind::SepConv5x5,
        OperatorKind::DilConv3x3,
        OperatorKind::DilConv5x5,
        OperatorKind::MaxPool3x3,
        OperatorKind::AvgPool3x3,
        OperatorKind::SkipConnect,
        OperatorKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::SepConv3x3 => "sep_conv_3x3",
            OperatorKind::SepConv5x5 => "sep_conv_5x5",
            OperatorKind::DilConv3x3 => "dil_conv_3x3",
            OperatorKind::DilConv5x5 => "dil_conv_5x5",
            OperatorKind::MaxPool3x3 => "max_pool_3x3",
            OperatorKind::AvgPool3x3 => "avg_pool_3x3",
            OperatorKind::SkipConnect => "skip_connect",
            OperatorKind::Zero => "none",
        }
    }

    pub fn kernel(self) -> usize {
        match self {
            OperatorKind::SepConv5x5 | OperatorKind::DilConv5x5 => 5,
            OperatorKind::SkipConnect | OperatorKind::Zero => 1,
            _ => 3,
        }
    }

    /// Whether the operator carries kernel weights at the given stride.
    pub fn has_weights(self, stride: usize) -> bool {
        match self {
            OperatorKind::SepConv3x3
            | OperatorKind::SepConv5x5
            | OperatorKind::DilConv3x3
            | OperatorKind::DilConv5x5 => true,
            OperatorKind::SkipConnect => stride == 2,
            _ => false,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::Genotype(format!("unknown operator {s:?}")))
    }
}

impl From<OperatorKind> for String {
    fn from(k: OperatorKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for OperatorKind {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Parses a comma-separated operator list.
pub fn parse_op_list(s: &str) -> Result<Vec<OperatorKind>> {
    let ops: Vec<OperatorKind> = s.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?;
    for (i, op) in ops.iter().enumerate() {
        if ops[..i].contains(op) {
            return Err(CoreError::Config(format!("operator {op} listed twice")));
        }
    }
    Ok(ops)
}

/// An operator slot in a super-net: one of the named kinds, or a plain
/// k×k convolution with bias (the uniform operator set assumed by the
/// closed-form cost formulas).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpSpec {
    Kind(OperatorKind),
    VanillaConv { kernel: usize },
}

impl From<OperatorKind> for OpSpec {
    fn from(k: OperatorKind) -> Self {
        OpSpec::Kind(k)
    }
}

impl OpSpec {
    pub fn name(self) -> String {
        match self {
            OpSpec::Kind(k) => k.name().to_string(),
            OpSpec::VanillaConv { kernel } => format!("conv_{kernel}x{kernel}"),
        }
    }

    pub fn kind(self) -> Option<OperatorKind> {
        match self {
            OpSpec::Kind(k) => Some(k),
            OpSpec::VanillaConv { .. } => None,
        }
    }

    pub fn is_zero(self) -> bool {
        self == OpSpec::Kind(OperatorKind::Zero)
    }
}

/// Output extent of a `k`×`k` "same"-padded window at `stride`.
pub fn out_extent(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// Trainable scalars of one operator instance. `affine` adds the two
/// per-channel batch-norm parameters of each BN layer.
pub fn operator_param_count(op: impl Into<OpSpec>, c_in: usize, c_out: usize, stride: usize, affine: bool) -> u64 {
    let (ci, co) = (c_in as u64, c_out as u64);
    let bn = |c: u64| if affine { 2 * c } else { 0 };
    match op.into() {
        OpSpec::VanillaConv { kernel } => {
            let k = kernel as u64;
            (k * k * ci + 1) * co
        }
        OpSpec::Kind(kind) => {
            let k = kind.kernel() as u64;
            match kind {
                OperatorKind::SepConv3x3 | OperatorKind::SepConv5x5 => {
                    2 * ci * k * k + ci * ci + ci * co + bn(ci) + bn(co)
                }
                OperatorKind::DilConv3x3 | OperatorKind::DilConv5x5 => ci * k * k + ci * co + bn(co),
                OperatorKind::SkipConnect if stride == 2 => ci * co + bn(co),
                _ => 0,
            }
        }
    }
}

/// Forward FLOPs of one operator instance producing `c_out × h_out × w_out`
/// from `c_in` channels, for a single image.
pub fn operator_flop_count(op: impl Into<OpSpec>, c_in: usize, h_out: usize, w_out: usize, c_out: usize, stride: usize) -> u64 {
    let (ci, co) = (c_in as u64, c_out as u64);
    let hw = (h_out * w_out) as u64;
    match op.into() {
        OpSpec::VanillaConv { kernel } => {
            let k = kernel as u64;
            k * k * ci * hw * co
        }
        OpSpec::Kind(kind) => {
            let k = kind.kernel() as u64;
            match kind {
                OperatorKind::SepConv3x3 | OperatorKind::SepConv5x5 => hw * (2 * k * k * ci + ci * ci + ci * co),
                OperatorKind::DilConv3x3 | OperatorKind::DilConv5x5 => hw * (k * k * ci + ci * co),
                OperatorKind::MaxPool3x3 | OperatorKind::AvgPool3x3 => k * k * co * hw,
                OperatorKind::SkipConnect if stride == 2 => ci * co * hw,
                _ => 0,
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Body {
    Sep {
        dw1: Conv,
        pw1: Conv,
        bn1: BatchNorm,
        dw2: Conv,
        pw2: Conv,
        bn2: BatchNorm,
    },
    Dil {
        dw: Conv,
        pw: Conv,
        bn: BatchNorm,
    },
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    Identity,
    Reduce(FactorizedReduce),
    Zero,
    Vanilla(Conv),
}

/// One operator with its own weights, bound to channel counts and a stride.
#[derive(Clone, Debug)]
pub struct OperatorInstance {
    pub spec: OpSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    body: Body,
}

impl OperatorInstance {
    pub fn new(b: &mut Builder, name: &str, spec: impl Into<OpSpec>, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let spec = spec.into();
        if c_in == 0 || c_out == 0 {
            return Err(CoreError::Config(format!("{name}: channel counts must be positive")));
        }
        if stride != 1 && stride != 2 {
            return Err(CoreError::Config(format!("{name}: stride must be 1 or 2, got {stride}")));
        }
        let same = |what: &str| -> Result<()> {
            if c_in != c_out {
                return Err(CoreError::Config(format!("{name}: {what} needs C_in == C_out, got {c_in} and {c_out}")));
            }
            Ok(())
        };
        let body = match spec {
            OpSpec::VanillaConv { kernel } => {
                if kernel % 2 == 0 {
                    return Err(CoreError::Config(format!("{name}: kernel must be odd, got {kernel}")));
                }
                Body::Vanilla(b.conv(name, c_in, c_out, kernel, ConvSpec::new(stride, kernel / 2, 1, 1), true))
            }
            OpSpec::Kind(kind) => {
                let k = kind.kernel();
                match kind {
                    OperatorKind::SepConv3x3 | OperatorKind::SepConv5x5 => Body::Sep {
                        dw1: b.conv(&format!("{name}.dw1"), c_in, c_in, k, ConvSpec::new(stride, k / 2, 1, c_in), false),
                        pw1: b.conv(&format!("{name}.pw1"), c_in, c_in, 1, ConvSpec::default(), false),
                        bn1: b.bn(&format!("{name}.bn1"), c_in),
                        dw2: b.conv(&format!("{name}.dw2"), c_in, c_in, k, ConvSpec::new(1, k / 2, 1, c_in), false),
                        pw2: b.conv(&format!("{name}.pw2"), c_in, c_out, 1, ConvSpec::default(), false),
                        bn2: b.bn(&format!("{name}.bn2"), c_out),
                    },
                    OperatorKind::DilConv3x3 | OperatorKind::DilConv5x5 => Body::Dil {
                        dw: b.conv(&format!("{name}.dw"), c_in, c_in, k, ConvSpec::new(stride, k - 1, 2, c_in), false),
                        pw: b.conv(&format!("{name}.pw"), c_in, c_out, 1, ConvSpec::default(), false),
                        bn: b.bn(&format!("{name}.bn"), c_out),
                    },
                    OperatorKind::MaxPool3x3 => {
                        same("max_pool_3x3")?;
                        Body::MaxPool(PoolSpec::new(3, stride, 1))
                    }
                    OperatorKind::AvgPool3x3 => {
                        same("avg_pool_3x3")?;
                        Body::AvgPool(PoolSpec::new(3, stride, 1))
                    }
                    OperatorKind::SkipConnect if stride == 1 => {
                        same("skip_connect")?;
                        Body::Identity
                    }
                    OperatorKind::SkipConnect => {
                        if c_out % 2 != 0 {
                            return Err(CoreError::Config(format!("{name}: factorized reduce needs even C_out, got {c_out}")));
                        }
                        Body::Reduce(FactorizedReduce::new(b, name, c_in, c_out))
                    }
                    OperatorKind::Zero => Body::Zero,
                }
            }
        };
        Ok(Self {
            spec,
            c_in,
            c_out,
            stride,
            body,
        })
    }

    /// Parameter ids owned by this instance.
    pub fn params(&self) -> Vec<twophase_tensor::ParamId> {
        let conv = |c: &Conv| std::iter::once(c.w).chain(c.b).collect::<Vec<_>>();
        let bn = |n: &BatchNorm| n.gamma.into_iter().chain(n.beta).collect::<Vec<_>>();
        match &self.body {
            Body::Sep {
                dw1,
                pw1,
                bn1,
                dw2,
                pw2,
                bn2,
            } => [conv(dw1), conv(pw1), bn(bn1), conv(dw2), conv(pw2), bn(bn2)].concat(),
            Body::Dil { dw, pw, bn: n } => [conv(dw), conv(pw), bn(n)].concat(),
            Body::Reduce(r) => [conv(&r.a), conv(&r.b), bn(&r.bn)].concat(),
            Body::Vanilla(c) => conv(c),
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, x: &[usize]) -> Vec<usize> {
        vec![x[0], self.c_out, out_extent(x[2], self.stride), out_extent(x[3], self.stride)]
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.c_in {
            return Err(CoreError::Tensor(twophase_tensor::TensorError::Shape {
                op: "apply_operator",
                detail: format!("{} expects {} input channels, got shape {shape:?}", self.spec.name(), self.c_in),
            }));
        }
        match &self.body {
            Body::Sep {
                dw1,
                pw1,
                bn1,
                dw2,
                pw2,
                bn2,
            } => {
                let y = ctx.tape.relu(x)?;
                let y = dw1.forward(ctx, y)?;
                let y = pw1.forward(ctx, y)?;
                let y = bn1.forward(ctx, y)?;
                let y = ctx.tape.relu(y)?;
                let y = dw2.forward(ctx, y)?;
                let y = pw2.forward(ctx, y)?;
                bn2.forward(ctx, y)
            }
            Body::Dil { dw, pw, bn } => {
                let y = ctx.tape.relu(x)?;
                let y = dw.forward(ctx, y)?;
                let y = pw.forward(ctx, y)?;
                bn.forward(ctx, y)
            }
            Body::MaxPool(spec) => Ok(ctx.tape.max_pool2d(x, *spec)?),
            Body::AvgPool(spec) => Ok(ctx.tape.avg_pool2d(x, *spec)?),
            Body::Identity => Ok(x),
            Body::Reduce(r) => r.forward(ctx, x),
            Body::Zero => Ok(ctx.tape.constant(Tensor::zeros(&self.output_shape(&shape)))),
            Body::Vanilla(c) => c.forward(ctx, x),
        }
    }
}

/// Applies `inst` to `x` on the context's tape.
pub fn apply_operator(ctx: &mut Ctx, inst: &OperatorInstance, x: Var) -> Result<Var> {
    inst.forward(ctx, x)
}
