//! Discrete networks built from a genotype, trained from scratch for evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twophase_tensor::{ParamSet, Var};

use crate::error::{CoreError, Result};
use crate::genotype::{CellType, GenoEdge, Genotype};
use crate::nn::{Builder, CellShape, Ctx, RunningStats, Scaffold};
use crate::ops::OperatorInstance;
use crate::supernet::SpaceConfig;

#[derive(Clone, Debug)]
pub struct DiscreteCell {
    pub shape: CellShape,
    pub nodes: usize,
    pub edges: Vec<(GenoEdge, OperatorInstance)>,
}

impl DiscreteCell {
    /// Intermediate node outputs: each node sums its two operator outputs.
    pub fn body(&self, ctx: &mut Ctx, s0: Var, s1: Var) -> Result<Vec<Var>> {
        let mut states = vec![s0, s1];
        for j in 2..self.nodes - 1 {
            let mut acc: Option<Var> = None;
            for (e, op) in self.edges.iter().filter(|(e, _)| e.dst == j) {
                let y = op.forward(ctx, states[e.src])?;
                acc = Some(match acc {
                    None => y,
                    Some(a) => ctx.tape.add(a, y)?,
                });
            }
            let node = acc.ok_or_else(|| CoreError::Genotype(format!("node {j} has no incoming edges")))?;
            states.push(node);
        }
        Ok(states.split_off(2))
    }
}

/// Stem → discrete cells → global average pool → linear classifier, with
/// affine batch norm and running statistics.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: SpaceConfig,
    pub weights: ParamSet,
    pub running: Vec<RunningStats>,
    pub scaffold: Scaffold,
    pub cells: Vec<DiscreteCell>,
}

/// Builds the network for `g` under `cfg`; reduction cells use the reduce
/// edges, with stride 2 on edges leaving the two input nodes.
pub fn genotype_to_network(g: &Genotype, cfg: &SpaceConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    g.validate()?;
    if g.nodes() != cfg.nodes {
        return Err(CoreError::Genotype(format!(
            "genotype spans {} nodes per cell but the space has {}",
            g.nodes(),
            cfg.nodes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = ParamSet::new();
    let mut b = Builder::new(&mut weights, &mut rng, true);
    let scaffold = Scaffold::new(&mut b, cfg, true);
    let mut cells = Vec::with_capacity(cfg.cells);
    for (i, shape) in scaffold.shapes.clone().into_iter().enumerate() {
        let t = if shape.reduction { CellType::Reduce } else { CellType::Normal };
        let mut edges = Vec::new();
        for e in g.edges(t) {
            let stride = if shape.reduction && e.src < 2 { 2 } else { 1 };
            let name = format!("cell{i}.e{}_{}.{}", e.src, e.dst, e.op);
            edges.push((*e, OperatorInstance::new(&mut b, &name, e.op, shape.c, shape.c, stride)?));
        }
        cells.push(DiscreteCell {
            shape,
            nodes: cfg.nodes,
            edges,
        });
    }
    let running = std::mem::take(&mut b.running);
    drop(b);
    Ok(Network {
        cfg: cfg.clone(),
        weights,
        running,
        scaffold,
        cells,
    })
}

impl Network {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let stem = self.scaffold.stem(ctx, x)?;
        let (mut s0, mut s1) = (stem, stem);
        for (i, cell) in self.cells.iter().enumerate() {
            let (p0, p1) = &self.scaffold.pre[i];
            let in0 = p0.forward(ctx, s0)?;
            let in1 = p1.forward(ctx, s1)?;
            let nodes = cell.body(ctx, in0, in1)?;
            let out = ctx.tape.concat(&nodes)?;
            s0 = s1;
            s1 = out;
        }
        self.scaffold.classify(ctx, s1)
    }

    /// Edge list read back from the constructed cells.
    pub fn genotype(&self) -> Genotype {
        let mut g = Genotype {
            normal: Vec::new(),
            reduce: Vec::new(),
        };
        for t in [CellType::Normal, CellType::Reduce] {
            let reduction = t == CellType::Reduce;
            if let Some(cell) = self.cells.iter().find(|c| c.shape.reduction == reduction) {
                let edges: Vec<GenoEdge> = cell.edges.iter().map(|(e, _)| *e).collect();
                match t {
                    CellType::Normal => g.normal = edges,
                    CellType::Reduce => g.reduce = edges,
                }
            }
        }
        g
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel()
    }

    /// Kernel weights owned by cell-body operators.
    pub fn kernel_params(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|c| &c.edges)
            .flat_map(|(_, op)| op.params())
            .map(|id| self.weights.value(id).numel())
            .sum()
    }

    pub fn operator_instances(&self) -> usize {
        self.cells.iter().map(|c| c.edges.len()).sum()
    }
}
