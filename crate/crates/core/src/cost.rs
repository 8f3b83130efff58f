//! Closed-form cost of a cell super-net and an enumeration oracle.
//!
//! With `E = n(n−3)/2` candidate edges per cell and `p` candidate operators,
//! all of them `k×k` convolutions with bias:
//!
//! * joint search: `E·p` operator instances holding `(k²C_in+1)C_out` weights
//!   each, and `E·p·H_out·W_out·C_out·(k²C_in+1)` forward FLOPs (one per
//!   multiply-accumulate plus one per element for summing the outputs);
//! * topology search with skip connections: `E` instances, no kernel weights,
//!   `E` β values and `E·H·W·C` FLOPs of summation.
//!
//! Counts cover one cell body; stem, preprocessing and classifier are out.

use serde::{Deserialize, Serialize};
use twophase_tensor::{Binding, Tensor};

use crate::nn::Ctx;
use crate::ops::out_extent;
use crate::supernet::SuperNet;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Forward FLOPs for one image.
    pub flops: u64,
    pub kernel_params: u64,
    /// Trainable α/β scalars.
    pub arch_params: u64,
    pub operator_instances: u64,
    /// Which counting assumptions produced the numbers.
    pub assumption: String,
}

impl CostReport {
    pub fn trainable_params(&self) -> u64 {
        self.kernel_params + self.arch_params
    }

    /// Same counts, whatever the assumption label.
    pub fn same_counts(&self, other: &CostReport) -> bool {
        (self.flops, self.kernel_params, self.arch_params, self.operator_instances)
            == (other.flops, other.kernel_params, other.arch_params, other.operator_instances)
    }
}

/// `n(n−3)/2`, zero below four nodes.
pub fn edge_count(n: u64) -> u64 {
    if n < 3 {
        0
    } else {
        n * (n - 3) / 2
    }
}

/// Joint search over `p` vanilla `k×k` convolutions per edge.
pub fn darts_cost(n: u64, p: u64, k: u64, c_in: u64, c_out: u64, h_out: u64, w_out: u64) -> CostReport {
    let e = edge_count(n);
    let per_op = k * k * c_in + 1;
    CostReport {
        flops: e * p * h_out * w_out * c_out * per_op,
        kernel_params: e * p * per_op * c_out,
        arch_params: e * p + e,
        operator_instances: e * p,
        assumption: "vanilla convolutions with bias on every candidate".into(),
    }
}

/// Topology search with a single skip connection per edge.
pub fn ftso_cost(n: u64, c_in: u64, h_in: u64, w_in: u64) -> CostReport {
    let e = edge_count(n);
    CostReport {
        flops: e * h_in * w_in * c_in,
        kernel_params: 0,
        arch_params: e,
        operator_instances: e,
        assumption: "skip connections only".into(),
    }
}

/// `(joint-search instances, topology-search instances, operator-search instances)`.
pub fn operation_counts(n: u64, p: u64) -> (u64, u64, u64) {
    let e = edge_count(n);
    (e * p, e, 2 * n.saturating_sub(3) * p)
}

/// Topology-search parameters as a fraction of joint-search kernel weights.
pub fn param_ratio(darts: &CostReport, ftso: &CostReport) -> f64 {
    ftso.trainable_params() as f64 / darts.kernel_params as f64
}

pub fn flop_ratio(darts: &CostReport, ftso: &CostReport) -> f64 {
    ftso.flops as f64 / darts.flops as f64
}

/// Walks a built super-net: counts the kernel weights and operator instances
/// it allocated, its trainable α/β for the cell types it stacks, and the
/// FLOPs recorded by the tape while running every cell body once on a single
/// `h × w` image (at each cell's own resolution).
pub fn enumerate_costs(net: &SuperNet, h: usize, w: usize) -> crate::Result<CostReport> {
    let mut flops = 0;
    let (mut h, mut w) = (h, w);
    for (i, cell) in net.cells.iter().enumerate() {
        let t = usize::from(cell.shape.reduction);
        let mut ctx = Ctx::train(Binding::frozen(&net.weights), Some(Binding::frozen(&net.arch)), false);
        let a = ctx.a(net.alpha_id(crate::CellType::from_index(t)));
        let b = ctx.a(net.beta_id(crate::CellType::from_index(t)));
        let s0 = ctx.tape.constant(input(cell.shape.c, h, w, i));
        let s1 = ctx.tape.constant(input(cell.shape.c, h, w, i + 1));
        let before = ctx.tape.flops();
        cell.body(&mut ctx, s0, s1, a, b)?;
        flops += ctx.tape.flops() - before;
        if cell.shape.reduction {
            h = out_extent(h, 2);
            w = out_extent(w, 2);
        }
    }
    Ok(CostReport {
        flops,
        kernel_params: net.kernel_params() as u64,
        arch_params: net.active_arch_params() as u64,
        operator_instances: net.operator_instances() as u64,
        assumption: "enumerated".into(),
    })
}

fn input(c: usize, h: usize, w: usize, salt: usize) -> Tensor {
    let n = c * h * w;
    let data = (0..n).map(|i| ((i * 7 + salt * 13) % 11) as f64 / 11.0 - 0.5).collect();
    Tensor::new(vec![1, c, h, w], data).expect("positive extents")
}
