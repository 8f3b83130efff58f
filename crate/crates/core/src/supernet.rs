//! Continuous search space: stacked DAG cells whose edges mix candidate
//! operators under softmax(α), whose nodes mix in-edges under softmax(β),
//! optionally routing only a 1/K channel subset through the mixed operator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use twophase_tensor::{ParamId, ParamSet, PoolSpec, Tensor, Var};

use crate::error::{config, CoreError, Result};
use crate::genotype::{CellType, GenoEdge, Genotype};
use crate::nn::{intermediate_nodes, Builder, CellShape, Ctx, RunningStats, Scaffold};
use crate::ops::{OpSpec, OperatorInstance, OperatorKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    /// Nodes per cell: two inputs, `nodes − 3` intermediates, one output.
    pub nodes: usize,
    pub cells: usize,
    /// Indices of stride-2 cells.
    pub reductions: Vec<usize>,
    pub init_channels: usize,
    /// Partial-channel divisor K; 1 routes every channel through the mixed op.
    pub partial_channels: usize,
    pub stem_multiplier: usize,
    pub in_channels: usize,
    pub classes: usize,
}

impl SpaceConfig {
    /// Reductions default to ⅓ and ⅔ depth when there are at least three cells.
    pub fn new(nodes: usize, cells: usize, init_channels: usize, in_channels: usize, classes: usize) -> Self {
        Self {
            nodes,
            cells,
            reductions: default_reductions(cells),
            init_channels,
            partial_channels: 1,
            stem_multiplier: 3,
            in_channels,
            classes,
        }
    }

    pub fn with_reductions(mut self, reductions: Vec<usize>) -> Self {
        self.reductions = reductions;
        self
    }

    pub fn with_partial_channels(mut self, k: usize) -> Self {
        self.partial_channels = k;
        self
    }

    pub fn intermediate(&self) -> usize {
        intermediate_nodes(self.nodes)
    }

    /// Candidate edges `(i, j)`, `i < j`, into every intermediate node `j`,
    /// sorted by `(j, i)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        all_edges(self.nodes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 4 {
            return config(format!("cells need at least 4 nodes, got {}", self.nodes));
        }
        if self.init_channels == 0 || self.in_channels == 0 || self.stem_multiplier == 0 {
            return config("channel counts must be positive");
        }
        if self.classes < 2 {
            return config(format!("need at least 2 classes, got {}", self.classes));
        }
        let k = self.partial_channels;
        if k == 0 {
            return config("partial-channel K must be at least 1");
        }
        if let Some(r) = self.reductions.iter().find(|&&r| r >= self.cells) {
            return config(format!("reduction position {r} outside {} cells", self.cells));
        }
        let mut c = self.init_channels;
        for i in 0..self.cells {
            if self.reductions.contains(&i) {
                c *= 2;
            }
            if c % k != 0 {
                return config(format!("K={k} does not divide the {c} channels of cell {i}"));
            }
            if (self.reductions.contains(&i) || i > 0 && self.reductions.contains(&(i - 1))) && c % 2 != 0 {
                return config(format!("factorized reduction needs an even channel count, cell {i} has {c}"));
            }
        }
        Ok(())
    }
}

pub fn default_reductions(cells: usize) -> Vec<usize> {
    if cells < 3 {
        return Vec::new();
    }
    let mut r = vec![cells / 3, 2 * cells / 3];
    r.dedup();
    r
}

pub fn all_edges(nodes: usize) -> Vec<(usize, usize)> {
    (2..nodes.saturating_sub(1)).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

/// Binary channel selector with exactly ⌈C/K⌉ ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMask {
    pub channels: usize,
    /// Selected channel indices, ascending.
    pub selected: Vec<usize>,
}

impl ChannelMask {
    pub fn full(channels: usize) -> Self {
        Self {
            channels,
            selected: (0..channels).collect(),
        }
    }

    /// Deterministic in `(channels, k, seed, salt)`.
    pub fn sample(channels: usize, k: usize, seed: u64, salt: u64) -> Self {
        if k <= 1 {
            return Self::full(channels);
        }
        let mut idx: Vec<usize> = (0..channels).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        idx.shuffle(&mut rng);
        let mut selected = idx[..channels.div_ceil(k)].to_vec();
        selected.sort_unstable();
        Self { channels, selected }
    }

    pub fn bypass(&self) -> Vec<usize> {
        (0..self.channels).filter(|c| self.selected.binary_search(c).is_err()).collect()
    }

    pub fn is_full(&self) -> bool {
        self.selected.len() == self.channels
    }

    pub fn as_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.channels];
        for &c in &self.selected {
            bits[c] = true;
        }
        bits
    }
}

/// One candidate edge: an operator instance per candidate on the masked channels.
#[derive(Clone, Debug)]
pub struct MixedEdge {
    pub src: usize,
    pub dst: usize,
    pub stride: usize,
    pub mask: ChannelMask,
    pub ops: Vec<OperatorInstance>,
}

impl MixedEdge {
    pub fn new(b: &mut Builder, name: &str, (src, dst): (usize, usize), ops: &[OpSpec], c: usize, stride: usize, mask: ChannelMask) -> Result<Self> {
        if mask.channels != c {
            return config(format!("{name}: mask over {} channels for {c}-channel edge", mask.channels));
        }
        let width = mask.selected.len();
        let ops = ops
            .iter()
            .map(|op| OperatorInstance::new(b, &format!("{name}.{}", op.name()), *op, width, width, stride))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            src,
            dst,
            stride,
            mask,
            ops,
        })
    }

    /// Outputs of the non-zero operators on `x` restricted to the masked channels.
    fn branch_terms(&self, ctx: &mut Ctx, x: Var) -> Result<Vec<Var>> {
        self.ops
            .iter()
            .filter(|op| !op.spec.is_zero())
            .map(|op| op.forward(ctx, x))
            .collect()
    }
}

/// `Σ_o softmax(α)_o · o(S∗x) + (1 − S)∗x` for one edge.
///
/// With a full mask this is the plain mixed operator `Σ_o softmax(α)_o · o(x)`.
/// Unselected channels bypass the operators (max-pooled 2×2 when the edge
/// has stride 2) and keep their channel positions.
pub fn mixed_op_forward(ctx: &mut Ctx, edge: &MixedEdge, x: Var, alpha_row: Var) -> Result<Var> {
    let p = edge.ops.len();
    if ctx.tape.shape(alpha_row) != [p] {
        return config(format!("alpha row {:?} for {p} operators", ctx.tape.shape(alpha_row)));
    }
    let shape = ctx.tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != edge.mask.channels {
        return config(format!("mask over {} channels for input {shape:?}", edge.mask.channels));
    }
    let weights = ctx.tape.softmax(alpha_row)?;
    let live: Vec<usize> = (0..p).filter(|&o| !edge.ops[o].spec.is_zero()).collect();
    let input = if edge.mask.is_full() {
        x
    } else {
        ctx.tape.gather_channels(x, &edge.mask.selected)?
    };
    let terms = edge.branch_terms(ctx, input)?;
    let in_shape = ctx.tape.shape(input).to_vec();
    let mixed = if terms.is_empty() {
        ctx.tape.constant(Tensor::zeros(&edge.ops[0].output_shape(&in_shape)))
    } else if live.len() == p {
        ctx.tape.weighted_sum(weights, &terms)?
    } else {
        let w = ctx.tape.gather(weights, &live)?;
        ctx.tape.weighted_sum(w, &terms)?
    };
    if edge.mask.is_full() {
        return Ok(mixed);
    }
    let c = edge.mask.channels;
    let bypass = edge.mask.bypass();
    let rest = ctx.tape.gather_channels(x, &bypass)?;
    let rest = if edge.stride == 2 {
        ctx.tape.max_pool2d(rest, PoolSpec::new(2, 2, 0))?
    } else {
        rest
    };
    let a = ctx.tape.scatter_channels(mixed, &edge.mask.selected, c)?;
    let b = ctx.tape.scatter_channels(rest, &bypass, c)?;
    Ok(ctx.tape.add(a, b)?)
}

/// `Σ_i softmax(β)_i · f_i` over a node's incoming edge outputs.
pub fn node_forward(ctx: &mut Ctx, inputs: &[Var], beta: Var) -> Result<Var> {
    if inputs.is_empty() {
        return config("node has no predecessors");
    }
    if ctx.tape.shape(beta) != [inputs.len()] {
        return config(format!("beta {:?} for {} predecessors", ctx.tape.shape(beta), inputs.len()));
    }
    let w = ctx.tape.softmax(beta)?;
    Ok(ctx.tape.weighted_sum(w, inputs)?)
}

/// Edges of one cell body in `(dst, src)` order.
#[derive(Clone, Debug)]
pub struct SearchCell {
    pub shape: CellShape,
    pub edges: Vec<MixedEdge>,
    pub nodes: usize,
}

impl SearchCell {
    fn in_edges(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.edges.iter().position(|e| e.dst == j).unwrap_or(self.edges.len());
        let len = self.edges[start..].iter().take_while(|e| e.dst == j).count();
        start..start + len
    }

    /// Intermediate node outputs given the two preprocessed inputs.
    pub fn body(&self, ctx: &mut Ctx, s0: Var, s1: Var, alpha: Var, beta: Var) -> Result<Vec<Var>> {
        let p = self.edges.first().map_or(0, |e| e.ops.len());
        let fused = self.edges.iter().all(|e| e.mask.is_full());
        let alpha_flat = if p > 0 {
            Some(ctx.tape.reshape(alpha, &[self.edges.len() * p])?)
        } else {
            None
        };
        let mut states = vec![s0, s1];
        for j in 2..self.nodes - 1 {
            let range = self.in_edges(j);
            if range.is_empty() {
                return config(format!("node {j} has no incoming edges"));
            }
            let ids: Vec<usize> = range.clone().collect();
            let node = if fused {
                self.fused_node(ctx, &states, &ids, alpha_flat.expect("edges exist"), beta, p)?
            } else {
                let mut outs = Vec::with_capacity(ids.len());
                for &e in &ids {
                    let row = ctx.tape.gather(alpha_flat.expect("edges exist"), &(e * p..(e + 1) * p).collect::<Vec<_>>())?;
                    outs.push(mixed_op_forward(ctx, &self.edges[e], states[self.edges[e].src], row)?);
                }
                let b = ctx.tape.gather(beta, &ids)?;
                node_forward(ctx, &outs, b)?
            };
            states.push(node);
        }
        Ok(states.split_off(2))
    }

    /// Full-mask node in one weighted sum over every (edge, operator) term with
    /// weight softmax(β)_e · softmax(α_e)_o. Same value as mixing per edge then
    /// per node, with one summation per term.
    fn fused_node(&self, ctx: &mut Ctx, states: &[Var], ids: &[usize], alpha_flat: Var, beta: Var, p: usize) -> Result<Var> {
        let k = ids.len();
        let b = ctx.tape.gather(beta, ids)?;
        let b = ctx.tape.softmax(b)?;
        let rows: Vec<usize> = ids.iter().flat_map(|&e| e * p..(e + 1) * p).collect();
        let a = ctx.tape.gather(alpha_flat, &rows)?;
        let a = ctx.tape.reshape(a, &[k, p])?;
        let a = ctx.tape.softmax(a)?;
        let w = ctx.tape.scale_rows(a, b)?;
        let w = ctx.tape.reshape(w, &[k * p])?;
        let mut live = Vec::new();
        let mut terms = Vec::new();
        for (slot, &e) in ids.iter().enumerate() {
            let edge = &self.edges[e];
            for (o, op) in edge.ops.iter().enumerate() {
                if op.spec.is_zero() {
                    continue;
                }
                live.push(slot * p + o);
                terms.push(op.forward(ctx, states[edge.src])?);
            }
        }
        if terms.is_empty() {
            let edge = &self.edges[ids[0]];
            let shape = edge.ops[0].output_shape(ctx.tape.shape(states[edge.src]));
            return Ok(ctx.tape.constant(Tensor::zeros(&shape)));
        }
        let w = if live.len() == k * p { w } else { ctx.tape.gather(w, &live)? };
        Ok(ctx.tape.weighted_sum(w, &terms)?)
    }

    pub fn operator_instances(&self) -> usize {
        self.edges.iter().map(|e| e.ops.len()).sum()
    }
}

/// Architecture parameters of one cell type, detached from any tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellArch {
    pub edges: Vec<(usize, usize)>,
    /// `alpha[e][o]`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

/// Snapshot of α and β for both cell types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub nodes: usize,
    pub ops: Vec<String>,
    pub normal: CellArch,
    pub reduce: CellArch,
}

impl ArchParams {
    /// Zero-initialized parameters over every candidate edge.
    pub fn zeros(nodes: usize, ops: &[OperatorKind]) -> Self {
        let cell = || {
            let edges = all_edges(nodes);
            CellArch {
                alpha: vec![vec![0.0; ops.len()]; edges.len()],
                beta: vec![0.0; edges.len()],
                edges,
            }
        };
        Self {
            nodes,
            ops: ops.iter().map(|o| o.name().to_string()).collect(),
            normal: cell(),
            reduce: cell(),
        }
    }

    pub fn cell(&self, t: CellType) -> &CellArch {
        match t {
            CellType::Normal => &self.normal,
            CellType::Reduce => &self.reduce,
        }
    }

    pub fn cell_mut(&mut self, t: CellType) -> &mut CellArch {
        match t {
            CellType::Normal => &mut self.normal,
            CellType::Reduce => &mut self.reduce,
        }
    }
}

/// Prunes each intermediate node to its top-`retain` in-edges by β (ties to
/// the lower source) and labels each kept edge with its arg-max α operator,
/// never `none` (ties to the earlier candidate).
pub fn derive_genotype(arch: &ArchParams, retain: usize) -> Result<Genotype> {
    let ops: Vec<OperatorKind> = arch.ops.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let mut out = [Vec::new(), Vec::new()];
    for (slot, t) in [CellType::Normal, CellType::Reduce].into_iter().enumerate() {
        let cell = arch.cell(t);
        if cell.alpha.len() != cell.edges.len() || cell.beta.len() != cell.edges.len() {
            return config(format!("{} arch parameters do not match its {} edges", t.name(), cell.edges.len()));
        }
        for j in 2..arch.nodes - 1 {
            let mut cand: Vec<usize> = (0..cell.edges.len()).filter(|&e| cell.edges[e].1 == j).collect();
            if retain > cand.len() {
                return config(format!("cannot retain {retain} in-edges of node {j}, it has {}", cand.len()));
            }
            cand.sort_by(|&a, &b| {
                cell.beta[b]
                    .partial_cmp(&cell.beta[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(cell.edges[a].0.cmp(&cell.edges[b].0))
            });
            let mut kept: Vec<usize> = cand[..retain].to_vec();
            kept.sort_by_key(|&e| cell.edges[e].0);
            for e in kept {
                let row = &cell.alpha[e];
                if row.len() != ops.len() {
                    return config(format!("alpha row of length {} for {} operators", row.len(), ops.len()));
                }
                let mut best: Option<usize> = None;
                for (o, op) in ops.iter().enumerate() {
                    if *op == OperatorKind::Zero {
                        continue;
                    }
                    if best.is_none_or(|b| row[o] > row[b]) {
                        best = Some(o);
                    }
                }
                let Some(best) = best else {
                    return config("no candidate operator other than none");
                };
                out[slot].push(GenoEdge {
                    src: cell.edges[e].0,
                    dst: j,
                    op: ops[best],
                });
            }
        }
    }
    let [normal, reduce] = out;
    Ok(Genotype { normal, reduce })
}

/// Which architecture parameters receive gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveArch {
    pub alpha: bool,
    pub beta: bool,
}

/// A super-net: scaffold, mixed cells, and shared architecture parameters.
#[derive(Clone, Debug)]
pub struct SuperNet {
    pub cfg: SpaceConfig,
    pub ops: Vec<OpSpec>,
    pub weights: ParamSet,
    pub arch: ParamSet,
    pub running: Vec<RunningStats>,
    pub scaffold: Scaffold,
    pub cells: Vec<SearchCell>,
    alpha: [ParamId; 2],
    beta: [ParamId; 2],
    edges: [Vec<(usize, usize)>; 2],
}

/// Arguments for [`SuperNet::build`] beyond the space itself.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub seed: u64,
    /// Standard deviation of the Gaussian noise added to α and β; 0 keeps them at 0.
    pub arch_noise: f64,
    /// Restricts edges to those of a pruned topology.
    pub topology: Option<Genotype>,
}

impl BuildOptions {
    pub fn seed(seed: u64) -> Self {
        Self {
            seed,
            arch_noise: 0.0,
            topology: None,
        }
    }
}

/// Super-net over every candidate edge with α = β = 0.
pub fn build_supernet(cfg: &SpaceConfig, candidate_ops: &[OperatorKind]) -> Result<SuperNet> {
    let ops: Vec<OpSpec> = candidate_ops.iter().map(|&k| k.into()).collect();
    SuperNet::build(cfg, &ops, &BuildOptions::seed(0))
}

impl SuperNet {
    pub fn build(cfg: &SpaceConfig, ops: &[OpSpec], opts: &BuildOptions) -> Result<SuperNet> {
        cfg.validate()?;
        if ops.is_empty() {
            return config("empty candidate operator set");
        }
        let edges = match &opts.topology {
            None => [cfg.edges(), cfg.edges()],
            Some(g) => {
                g.validate()?;
                if g.nodes() != cfg.nodes {
                    return Err(CoreError::Genotype(format!(
                        "topology has {} nodes per cell, space has {}",
                        g.nodes(),
                        cfg.nodes
                    )));
                }
                let pairs = |es: &[GenoEdge]| es.iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>();
                [pairs(&g.normal), pairs(&g.reduce)]
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut weights = ParamSet::new();
        let mut b = Builder::new(&mut weights, &mut rng, false);
        let scaffold = Scaffold::new(&mut b, cfg, false);
        let mut cells = Vec::with_capacity(cfg.cells);
        for (i, shape) in scaffold.shapes.clone().into_iter().enumerate() {
            let t = usize::from(shape.reduction);
            let mut cell_edges = Vec::with_capacity(edges[t].len());
            for (e, &(src, dst)) in edges[t].iter().enumerate() {
                let stride = if shape.reduction && src < 2 { 2 } else { 1 };
                let salt = ((i as u64) << 32) | e as u64;
                let mask = ChannelMask::sample(shape.c, cfg.partial_channels, opts.seed, salt);
                let name = format!("cell{i}.e{src}_{dst}");
                cell_edges.push(MixedEdge::new(&mut b, &name, (src, dst), ops, shape.c, stride, mask)?);
            }
            cells.push(SearchCell {
                shape,
                edges: cell_edges,
                nodes: cfg.nodes,
            });
        }
        let running = std::mem::take(&mut b.running);
        drop(b);

        let mut arch = ParamSet::new();
        let normal = Normal::new(0.0, opts.arch_noise.max(0.0)).map_err(|e| CoreError::Config(e.to_string()))?;
        let mut noise = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data = if opts.arch_noise > 0.0 {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; n]
            };
            Tensor::new(shape.to_vec(), data)
        };
        let p = ops.len();
        let mut alpha = [ParamId(0); 2];
        let mut beta = [ParamId(0); 2];
        for (t, name) in ["normal", "reduce"].iter().enumerate() {
            alpha[t] = arch.add(format!("alpha.{name}"), noise(&[edges[t].len(), p])?);
            beta[t] = arch.add(format!("beta.{name}"), noise(&[edges[t].len()])?);
        }
        let mut net = SuperNet {
            cfg: cfg.clone(),
            ops: ops.to_vec(),
            weights,
            arch,
            running,
            scaffold,
            cells,
            alpha,
            beta,
            edges,
        };
        net.set_active(ActiveArch { alpha: p > 1, beta: true });
        Ok(net)
    }

    pub fn set_active(&mut self, active: ActiveArch) {
        for t in 0..2 {
            self.arch.get_mut(self.alpha[t]).trainable = active.alpha;
            self.arch.get_mut(self.beta[t]).trainable = active.beta;
        }
    }

    pub fn active(&self) -> ActiveArch {
        ActiveArch {
            alpha: self.arch.get(self.alpha[0]).trainable,
            beta: self.arch.get(self.beta[0]).trainable,
        }
    }

    pub fn cell_edges(&self, t: CellType) -> &[(usize, usize)] {
        &self.edges[t as usize]
    }

    pub fn alpha_id(&self, t: CellType) -> ParamId {
        self.alpha[t as usize]
    }

    pub fn beta_id(&self, t: CellType) -> ParamId {
        self.beta[t as usize]
    }

    fn cell_types_present(&self) -> Vec<CellType> {
        let mut out = Vec::new();
        if self.cells.iter().any(|c| !c.shape.reduction) {
            out.push(CellType::Normal);
        }
        if self.cells.iter().any(|c| c.shape.reduction) {
            out.push(CellType::Reduce);
        }
        out
    }

    /// Trainable architecture scalars of the cell types actually stacked.
    pub fn active_arch_params(&self) -> usize {
        let act = self.active();
        self.cell_types_present()
            .into_iter()
            .map(|t| {
                let e = self.edges[t as usize].len();
                usize::from(act.alpha) * e * self.ops.len() + usize::from(act.beta) * e
            })
            .sum()
    }

    /// Kernel weights owned by cell-body operators (scaffold excluded).
    pub fn kernel_params(&self) -> usize {
        self.kernel_ids().map(|id| self.weights.value(id).numel()).sum()
    }

    /// Cell-body kernel weights the weight optimizer may still change.
    pub fn trainable_kernel_params(&self) -> usize {
        self.kernel_ids().filter(|&id| self.weights.get(id).trainable).map(|id| self.weights.value(id).numel()).sum()
    }

    /// Pins every cell-body kernel at its initial value. Used when the
    /// candidates are parameter-free apart from the stride-2 skip projection.
    pub fn freeze_kernels(&mut self) {
        let ids: Vec<ParamId> = self.kernel_ids().collect();
        for id in ids {
            self.weights.get_mut(id).trainable = false;
        }
    }

    fn kernel_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.cells.iter().flat_map(|c| &c.edges).flat_map(|e| &e.ops).flat_map(|op| op.params())
    }

    pub fn operator_instances(&self) -> usize {
        self.cells.iter().map(SearchCell::operator_instances).sum()
    }

    pub fn arch_params(&self) -> ArchParams {
        let cell = |t: CellType| {
            let edges = self.edges[t as usize].clone();
            let p = self.ops.len();
            let a = self.arch.value(self.alpha[t as usize]).data();
            CellArch {
                alpha: a.chunks(p).map(<[f64]>::to_vec).collect(),
                beta: self.arch.value(self.beta[t as usize]).data().to_vec(),
                edges,
            }
        };
        ArchParams {
            nodes: self.cfg.nodes,
            ops: self.ops.iter().map(|o| o.name()).collect(),
            normal: cell(CellType::Normal),
            reduce: cell(CellType::Reduce),
        }
    }

    /// Overwrites α and β from a snapshot with the same edges and operators.
    pub fn load_arch(&mut self, snap: &ArchParams) -> Result<()> {
        for t in [CellType::Normal, CellType::Reduce] {
            let c = snap.cell(t);
            if c.edges != self.edges[t as usize] || c.alpha.iter().any(|r| r.len() != self.ops.len()) {
                return config(format!("{} snapshot does not match the super-net", t.name()));
            }
            self.arch.get_mut(self.alpha[t as usize]).value.data_mut().copy_from_slice(&c.alpha.concat());
            self.arch.get_mut(self.beta[t as usize]).value.data_mut().copy_from_slice(&c.beta);
        }
        Ok(())
    }

    /// Logits for a batch `x` of shape `[N, C, H, W]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let stem = self.scaffold.stem(ctx, x)?;
        let (mut s0, mut s1) = (stem, stem);
        for (i, cell) in self.cells.iter().enumerate() {
            let (p0, p1) = &self.scaffold.pre[i];
            let t = usize::from(cell.shape.reduction);
            let a = ctx.a(self.alpha[t]);
            let b = ctx.a(self.beta[t]);
            let in0 = p0.forward(ctx, s0)?;
            let in1 = p1.forward(ctx, s1)?;
            let nodes = cell.body(ctx, in0, in1, a, b)?;
            let out = ctx.tape.concat(&nodes)?;
            s0 = s1;
            s1 = out;
        }
        self.scaffold.classify(ctx, s1)
    }
}
