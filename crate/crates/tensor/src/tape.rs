use crate::conv::{self, ConvGeom};
use crate::error::{Result, TensorError};
use crate::pool::{self, PoolGeom};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch mean and unbiased variance observed by a batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, bias: Var },
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, geom: PoolGeom },
    GlobalAvgPool(Var),
    Relu(Var),
    BatchNorm { x: Var, gamma: Option<Var>, beta: Option<Var>, xhat: Vec<f64>, inv_std: Vec<f64> },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Softmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    GatherChannels { x: Var, idx: Vec<usize> },
    ScatterChannels { x: Var, idx: Vec<usize> },
    Crop { x: Var, top: usize, left: usize },
    Gather { x: Var, idx: Vec<usize> },
    ScaleRows { a: Var, b: Var },
    WeightedSum { w: Var, terms: Vec<Var> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Reshape(Var),
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Define-by-run recording of one forward pass.
///
/// Nodes are appended in execution order, so every input precedes its
/// consumer. A tape also counts forward FLOPs on feature maps (rank-4
/// outputs): convolutions count multiply-accumulates, additions and
/// weighted sums count one per element per term, pooling counts the
/// window area per output element. Everything else is free.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    flops: u64,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Feature-map FLOPs recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], flops: u64) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if value.rank() == 4 {
            self.flops += flops;
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        self.check(loss)?;
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn val(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&c) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                self.acc(grads, *a, || g.iter().zip(bv).map(|(g, b)| g * b).collect());
                self.acc(grads, *b, || g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(a, c) => self.acc(grads, *a, || g.iter().map(|v| v * c).collect()),
            Op::AddBias { x, bias } => {
                self.acc(grads, *x, || g.to_vec());
                let shape = self.shape(*x);
                let (outer, c, inner) = channel_layout(shape);
                self.acc(grads, *bias, || {
                    let mut gb = vec![0.0; c];
                    for o in 0..outer {
                        for (ch, gbc) in gb.iter_mut().enumerate() {
                            *gbc += g[(o * c + ch) * inner..][..inner].iter().sum::<f64>();
                        }
                    }
                    gb
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.val(*a), self.val(*b));
                self.acc(grads, *a, || {
                    let mut ga = vec![0.0; m * k];
                    conv::matmul_a_bt(m, n, k, g, bv, &mut ga, false);
                    ga
                });
                self.acc(grads, *b, || {
                    let mut gb = vec![0.0; k * n];
                    conv::matmul_at_b(k, m, n, av, g, &mut gb, false);
                    gb
                });
            }
            Op::Conv2d { x, w, bias, geom } => {
                let needs = self.nodes[x.0].requires_grad
                    || self.nodes[w.0].requires_grad
                    || bias.is_some_and(|b| self.nodes[b.0].requires_grad);
                if needs {
                    let (gx, gw, gb) = conv::conv_backward(geom, self.val(*x), self.val(*w), g);
                    self.acc(grads, *x, || gx);
                    self.acc(grads, *w, || gw);
                    if let Some(b) = bias {
                        self.acc(grads, *b, || gb);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let len = self.nodes[x.0].value.numel();
                self.acc(grads, *x, || pool::max_backward(argmax, g, len));
            }
            Op::AvgPool { x, geom } => self.acc(grads, *x, || pool::avg_backward(geom, g)),
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let hw = shape[2] * shape[3];
                self.acc(grads, *x, || {
                    g.iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv / hw as f64, hw))
                        .collect()
                });
            }
            Op::Relu(x) => self.acc(grads, *x, || {
                g.iter()
                    .zip(y)
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect()
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (outer, c, inner) = channel_layout(self.shape(*x));
                let m = (outer * inner) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for k in base..base + inner {
                            sum_g[ch] += g[k];
                            sum_gx[ch] += g[k] * xhat[k];
                        }
                    }
                }
                if let Some(gm) = gamma {
                    self.acc(grads, *gm, || sum_gx.clone());
                }
                if let Some(bt) = beta {
                    self.acc(grads, *bt, || sum_g.clone());
                }
                let gamma_v: Option<&[f64]> = gamma.map(|gm| self.val(gm));
                self.acc(grads, *x, || {
                    let mut gx = vec![0.0; g.len()];
                    for o in 0..outer {
                        for ch in 0..c {
                            let scale = gamma_v.map_or(1.0, |gv| gv[ch]);
                            let base = (o * c + ch) * inner;
                            let (sg, sgx) = (sum_g[ch] * scale, sum_gx[ch] * scale);
                            for k in base..base + inner {
                                gx[k] = inv_std[ch] / m * (m * g[k] * scale - sg - xhat[k] * sgx);
                            }
                        }
                    }
                    gx
                });
            }
            Op::ChannelAffine { x, scale, shift } => {
                let (outer, c, inner) = channel_layout(self.shape(*x));
                let (xv, sv) = (self.val(*x), self.val(*scale));
                self.acc(grads, *x, || {
                    let mut gx = g.to_vec();
                    for o in 0..outer {
                        for ch in 0..c {
                            for v in &mut gx[(o * c + ch) * inner..][..inner] {
                                *v *= sv[ch];
                            }
                        }
                    }
                    gx
                });
                self.acc(grads, *scale, || {
                    let mut gs = vec![0.0; c];
                    for o in 0..outer {
                        for (ch, gsc) in gs.iter_mut().enumerate() {
                            let base = (o * c + ch) * inner;
                            *gsc += (base..base + inner).map(|k| g[k] * xv[k]).sum::<f64>();
                        }
                    }
                    gs
                });
                self.acc(grads, *shift, || {
                    let mut gs = vec![0.0; c];
                    for o in 0..outer {
                        for (ch, gsc) in gs.iter_mut().enumerate() {
                            *gsc += g[(o * c + ch) * inner..][..inner].iter().sum::<f64>();
                        }
                    }
                    gs
                });
            }
            Op::Softmax(x) => {
                let last = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, || {
                    let mut gx = vec![0.0; g.len()];
                    for ((gr, yr), out) in g.chunks(last).zip(y.chunks(last)).zip(gx.chunks_mut(last)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    gx
                });
            }
            Op::Log(x) => {
                let xv = self.val(*x);
                self.acc(grads, *x, || g.iter().zip(xv).map(|(g, x)| g / x).collect());
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.acc(grads, *x, || vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.acc(grads, *x, || vec![g[0] / n as f64; n]);
            }
            Op::Concat(xs) => {
                let shape = node.value.shape();
                let (outer, c_total, inner) = channel_layout(shape);
                let mut offset = 0;
                for x in xs {
                    let c = self.shape(*x)[1];
                    self.acc(grads, *x, || {
                        let mut gx = Vec::with_capacity(outer * c * inner);
                        for o in 0..outer {
                            gx.extend_from_slice(&g[(o * c_total + offset) * inner..][..c * inner]);
                        }
                        gx
                    });
                    offset += c;
                }
            }
            Op::GatherChannels { x, idx } => {
                let (outer, c_in, inner) = channel_layout(self.shape(*x));
                self.acc(grads, *x, || {
                    let mut gx = vec![0.0; outer * c_in * inner];
                    let k = idx.len();
                    for o in 0..outer {
                        for (j, &src) in idx.iter().enumerate() {
                            let from = &g[(o * k + j) * inner..][..inner];
                            for (d, s) in gx[(o * c_in + src) * inner..][..inner].iter_mut().zip(from) {
                                *d += s;
                            }
                        }
                    }
                    gx
                });
            }
            Op::ScatterChannels { x, idx } => {
                let (outer, total, inner) = channel_layout(node.value.shape());
                self.acc(grads, *x, || {
                    let k = idx.len();
                    let mut gx = Vec::with_capacity(outer * k * inner);
                    for o in 0..outer {
                        for &dst in idx {
                            gx.extend_from_slice(&g[(o * total + dst) * inner..][..inner]);
                        }
                    }
                    gx
                });
            }
            Op::Crop { x, top, left } => {
                let (n, c, h, w) = self.nodes[x.0].value.dims4().unwrap();
                let (_, _, ho, wo) = node.value.dims4().unwrap();
                self.acc(grads, *x, || {
                    let mut gx = vec![0.0; n * c * h * w];
                    for p in 0..n * c {
                        for oy in 0..ho {
                            let src = &g[(p * ho + oy) * wo..][..wo];
                            gx[(p * h + oy + top) * w + left..][..wo].copy_from_slice(src);
                        }
                    }
                    gx
                });
            }
            Op::Gather { x, idx } => {
                let n = self.nodes[x.0].value.numel();
                self.acc(grads, *x, || {
                    let mut gx = vec![0.0; n];
                    for (&i, &gv) in idx.iter().zip(g) {
                        gx[i] += gv;
                    }
                    gx
                });
            }
            Op::ScaleRows { a, b } => {
                let cols = self.shape(*a)[1];
                let (av, bv) = (self.val(*a), self.val(*b));
                self.acc(grads, *a, || {
                    g.chunks(cols)
                        .zip(bv)
                        .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
                        .collect()
                });
                self.acc(grads, *b, || {
                    g.chunks(cols)
                        .zip(av.chunks(cols))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect()
                });
            }
            Op::WeightedSum { w, terms } => {
                let wv = self.val(*w);
                for (t, &wt) in terms.iter().zip(wv) {
                    self.acc(grads, *t, || g.iter().map(|v| v * wt).collect());
                }
                self.acc(grads, *w, || {
                    terms
                        .iter()
                        .map(|t| self.val(*t).iter().zip(g).map(|(a, b)| a * b).sum())
                        .collect()
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let n = labels.len() as f64;
                self.acc(grads, *logits, || {
                    let mut gx: Vec<f64> = probs.iter().map(|p| p * g[0] / n).collect();
                    for (row, &l) in labels.iter().enumerate() {
                        gx[row * k + l] -= g[0] / n;
                    }
                    gx
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, || g.to_vec()),
        }
    }
}

/// `(outer, channels, inner)` for axis-1 layouts of rank ≥ 2 tensors.
pub(crate) fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}
