//! Search algorithms: topology search over a super-net of simple operators,
//! operator search on a pruned topology (gradient or direct replacement), a
//! joint-search baseline, and from-scratch evaluation of a genotype.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use twophase_tensor::optim::clip_grad_norm;
use twophase_tensor::{Binding, OptimizerConfig, OptimizerKind, OptimizerState, ParamSet, Tensor};

use crate::data::{epoch_batches, Batch, Dataset, Split};
use crate::diag::{hessian_max_eigenvalue, EigenEstimate};
use crate::error::{config, data, CoreError, Result};
use crate::genotype::Genotype;
use crate::network::{genotype_to_network, Network};
use crate::nn::Ctx;
use crate::ops::{OpSpec, OperatorKind};
use crate::supernet::{derive_genotype, ActiveArch, ArchParams, BuildOptions, SpaceConfig, SuperNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    #[serde(rename = "iter")]
    Iterations,
    #[serde(rename = "epoch")]
    Epochs,
}

impl std::str::FromStr for BudgetUnit {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iter" | "iters" | "iterations" => Ok(BudgetUnit::Iterations),
            "epoch" | "epochs" => Ok(BudgetUnit::Epochs),
            _ => config(format!("unknown budget unit {s:?}, expected iter or epoch")),
        }
    }
}

/// How long a search phase runs, counted in bilevel steps or in epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub unit: BudgetUnit,
    pub amount: usize,
    pub batch_size: usize,
}

impl SearchBudget {
    pub fn iterations(amount: usize, batch_size: usize) -> Self {
        Self {
            unit: BudgetUnit::Iterations,
            amount,
            batch_size,
        }
    }

    pub fn epochs(amount: usize, batch_size: usize) -> Self {
        Self {
            unit: BudgetUnit::Epochs,
            amount,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amount == 0 {
            return config("search budget must be at least 1");
        }
        if self.batch_size < 2 {
            return config(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        Ok(())
    }
}

/// Optimizer settings for the two alternating updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub arch_lr: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    pub arch_wd: f64,
    /// Weight learning rate, cosine-annealed to `w_lr_min` over the phase.
    pub w_lr: f64,
    pub w_lr_min: f64,
    pub w_momentum: f64,
    pub w_wd: f64,
    pub grad_clip: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            arch_lr: 3e-4,
            arch_beta1: 0.5,
            arch_beta2: 0.999,
            arch_wd: 1e-3,
            w_lr: 0.025,
            w_lr_min: 0.001,
            w_momentum: 0.9,
            w_wd: 3e-4,
            grad_clip: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SpaceConfig,
    pub budget: SearchBudget,
    pub hyper: Hyper,
    pub seed: u64,
    /// Standard deviation of the initial α/β noise; 0 starts from uniform softmax.
    pub arch_noise: f64,
    /// In-edges kept per node at derivation.
    pub retain: usize,
    /// Hessian eigenvalue checkpoint every this many steps; 0 disables.
    pub eigen_every: usize,
    pub eigen_iters: usize,
}

impl SearchConfig {
    pub fn new(space: SpaceConfig, budget: SearchBudget, seed: u64) -> Self {
        Self {
            space,
            budget,
            hyper: Hyper::default(),
            seed,
            arch_noise: 0.0,
            retain: 2,
            eigen_every: 0,
            eigen_iters: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub val_loss: f64,
    pub train_loss: f64,
    /// False when the super-net body has no kernel weights and only the
    /// architecture was updated.
    pub weight_step: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenRecord {
    pub step: usize,
    pub epoch: usize,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: String,
    pub genotype: Genotype,
    /// Monotonic wall-clock of building, searching and deriving.
    pub seconds: f64,
    pub trace: Vec<StepRecord>,
    pub arch: ArchParams,
    pub active: ActiveArch,
    pub eigen: Vec<EigenRecord>,
    /// Cell-body kernel weights the weight optimizer was allowed to change.
    pub kernel_params: usize,
    pub operator_instances: usize,
}

impl PhaseResult {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub val_loss: f64,
    pub train_loss: f64,
    pub weight_step: bool,
}

/// A super-net with its two optimizers.
pub struct Searcher {
    pub net: SuperNet,
    pub hyper: Hyper,
    arch_opt: OptimizerState,
    w_opt: OptimizerState,
    total_steps: usize,
    step: usize,
}

impl Searcher {
    pub fn new(net: SuperNet, hyper: Hyper, total_steps: usize) -> Self {
        let arch_cfg = OptimizerConfig {
            kind: OptimizerKind::Adam {
                beta1: hyper.arch_beta1,
                beta2: hyper.arch_beta2,
                eps: 1e-8,
            },
            lr: hyper.arch_lr,
            weight_decay: hyper.arch_wd,
        };
        let w_cfg = OptimizerConfig::momentum(hyper.w_lr, hyper.w_momentum).with_weight_decay(hyper.w_wd);
        Self {
            arch_opt: OptimizerState::new(arch_cfg, &net.arch),
            w_opt: OptimizerState::new(w_cfg, &net.weights),
            net,
            hyper,
            total_steps: total_steps.max(1),
            step: 0,
        }
    }

    fn w_lr(&self) -> f64 {
        let h = &self.hyper;
        let t = self.step as f64 / self.total_steps as f64;
        h.w_lr_min + 0.5 * (h.w_lr - h.w_lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// One alternation: architecture parameters descend the validation loss
    /// with weights held fixed, then weights descend the training loss with
    /// the architecture held fixed. First order throughout.
    pub fn bilevel_step(&mut self, train: &Batch, val: &Batch) -> Result<StepReport> {
        let (val_loss, arch_grads) = arch_loss(&self.net, &self.net.arch, val)?;
        check_finite(val_loss, self.step)?;
        self.arch_opt.step(&mut self.net.arch, &arch_grads)?;

        let weight_step = self.net.trainable_kernel_params() > 0;
        let train_loss = if weight_step {
            let (loss, mut grads) = weight_loss(&self.net, train)?;
            check_finite(loss, self.step)?;
            if self.hyper.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, self.hyper.grad_clip);
            }
            let lr = self.w_lr();
            self.w_opt.step_with_lr(&mut self.net.weights, &grads, lr)?;
            loss
        } else {
            let loss = forward_loss(&self.net, &self.net.arch, train)?;
            check_finite(loss, self.step)?;
            loss
        };
        self.step += 1;
        Ok(StepReport {
            val_loss,
            train_loss,
            weight_step,
        })
    }
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Divergence {
            phase: String::new(),
            step,
            loss,
            trace: Vec::new(),
        })
    }
}

/// Validation loss and its gradient with respect to every architecture
/// parameter (zeros for inactive ones), kernel weights frozen.
pub fn arch_loss(net: &SuperNet, arch: &ParamSet, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
    let mut ctx = Ctx::train(Binding::frozen(&net.weights), Some(Binding::new(arch)), false);
    let x = ctx.tape.constant(batch.x.clone());
    let logits = net.forward(&mut ctx, x)?;
    let loss = ctx.tape.cross_entropy(logits, &batch.labels)?;
    let value = ctx.tape.value(loss).item();
    if ctx.tape.requires_grad(loss) {
        let g = ctx.tape.backward(loss)?;
        let grads = ctx.arch.as_ref().expect("bound").gradients(&g);
        Ok((value, grads))
    } else {
        Ok((value, arch.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect()))
    }
}

fn weight_loss(net: &SuperNet, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
    let mut ctx = Ctx::train(Binding::new(&net.weights), Some(Binding::frozen(&net.arch)), false);
    let x = ctx.tape.constant(batch.x.clone());
    let logits = net.forward(&mut ctx, x)?;
    let loss = ctx.tape.cross_entropy(logits, &batch.labels)?;
    let value = ctx.tape.value(loss).item();
    let g = ctx.tape.backward(loss)?;
    Ok((value, ctx.weights.gradients(&g)))
}

/// Loss without any gradient bookkeeping.
pub fn forward_loss(net: &SuperNet, arch: &ParamSet, batch: &Batch) -> Result<f64> {
    let mut ctx = Ctx::train(Binding::frozen(&net.weights), Some(Binding::frozen(arch)), false);
    let x = ctx.tape.constant(batch.x.clone());
    let logits = net.forward(&mut ctx, x)?;
    let loss = ctx.tape.cross_entropy(logits, &batch.labels)?;
    Ok(ctx.tape.value(loss).item())
}

/// Trainable architecture scalars, flattened in parameter order.
pub fn active_arch_vector(arch: &ParamSet) -> Vec<f64> {
    arch.iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(_, p)| p.value.data().iter().copied())
        .collect()
}

/// Writes `theta` back into the trainable architecture parameters.
pub fn set_active_arch_vector(arch: &mut ParamSet, theta: &[f64]) {
    let mut off = 0;
    for p in arch.params_mut().iter_mut().filter(|p| p.trainable) {
        let d = p.value.data_mut();
        d.copy_from_slice(&theta[off..off + d.len()]);
        off += d.len();
    }
}

/// Dominant Hessian eigenvalue of the validation loss on `batch` with
/// respect to the active architecture parameters.
pub fn arch_hessian_eigenvalue(net: &SuperNet, batch: &Batch, iters: usize, seed: u64) -> Result<EigenEstimate> {
    let theta = active_arch_vector(&net.arch);
    let mut arch = net.arch.clone();
    let grad = |t: &[f64]| -> Result<Vec<f64>> {
        set_active_arch_vector(&mut arch, t);
        let (_, grads) = arch_loss(net, &arch, batch)?;
        Ok(arch
            .iter()
            .zip(&grads)
            .filter(|((_, p), _)| p.trainable)
            .flat_map(|(_, g)| g.data().iter().copied())
            .collect())
    };
    hessian_max_eigenvalue(grad, &theta, iters, 1e-4, seed)
}

struct Plan {
    per_epoch: usize,
    total: usize,
}

fn plan(data: &Dataset, budget: &SearchBudget) -> Result<Plan> {
    budget.validate()?;
    let train = data.split(Split::SearchTrain).len();
    let val = data.split(Split::SearchVal).len();
    if train < 2 || val < 2 {
        return data_err(train, val);
    }
    let count = |n: usize| n / budget.batch_size + usize::from(n % budget.batch_size >= 2);
    let per_epoch = count(train).min(count(val)).max(1);
    let total = match budget.unit {
        BudgetUnit::Iterations => budget.amount,
        BudgetUnit::Epochs => budget.amount * per_epoch,
    };
    Ok(Plan { per_epoch, total })
}

fn data_err<T>(train: usize, val: usize) -> Result<T> {
    data(format!("search splits too small: {train} training and {val} validation images"))
}

fn check_space(space: &SpaceConfig, data: &Dataset) -> Result<()> {
    let (c, _, _) = data.image_shape();
    if space.in_channels != c {
        return config(format!("space expects {} input channels, data has {c}", space.in_channels));
    }
    if space.classes != data.classes {
        return config(format!("classifier has {} classes, dataset has {}", space.classes, data.classes));
    }
    Ok(())
}

/// Runs the bilevel loop to budget and derives the genotype.
fn search(phase: &str, net: SuperNet, data: &Dataset, cfg: &SearchConfig, started: Instant) -> Result<PhaseResult> {
    let plan = plan(data, &cfg.budget)?;
    let mut s = Searcher::new(net, cfg.hyper, plan.total);
    let mut trace = Vec::with_capacity(plan.total);
    let mut eigen = Vec::new();
    let b = cfg.budget.batch_size;
    let probe = data.batch(&epoch_batches(data.split(Split::SearchVal), b, cfg.seed ^ 0x7A1, 0)[0]);
    let mut step = 0;
    let mut epoch = 0;
    while step < plan.total {
        let train = epoch_batches(data.split(Split::SearchTrain), b, cfg.seed, epoch);
        let val = epoch_batches(data.split(Split::SearchVal), b, cfg.seed ^ 0x7A1, epoch);
        for (tb, vb) in train.iter().zip(&val).take(plan.per_epoch) {
            if step == plan.total {
                break;
            }
            let report = s.bilevel_step(&data.batch(tb), &data.batch(vb)).map_err(|e| match e {
                CoreError::Divergence { step, loss, .. } => CoreError::Divergence {
                    phase: phase.to_string(),
                    step,
                    loss,
                    trace: trace.clone(),
                },
                other => other,
            })?;
            trace.push(StepRecord {
                step,
                epoch,
                val_loss: report.val_loss,
                train_loss: report.train_loss,
                weight_step: report.weight_step,
            });
            step += 1;
            if cfg.eigen_every > 0 && (step % cfg.eigen_every == 0 || step == plan.total) && !active_arch_vector(&s.net.arch).is_empty() {
                let est = arch_hessian_eigenvalue(&s.net, &probe, cfg.eigen_iters, cfg.seed ^ step as u64)?;
                eigen.push(EigenRecord {
                    step,
                    epoch,
                    value: est.value,
                    iterations: est.iterations,
                    converged: est.converged,
                });
            }
        }
        epoch += 1;
    }
    let arch = s.net.arch_params();
    let genotype = derive_genotype(&arch, cfg.retain)?;
    Ok(PhaseResult {
        phase: phase.to_string(),
        genotype,
        seconds: started.elapsed().as_secs_f64(),
        trace,
        arch,
        active: s.net.active(),
        eigen,
        kernel_params: s.net.trainable_kernel_params(),
        operator_instances: s.net.operator_instances(),
    })
}

fn build_options(cfg: &SearchConfig, topology: Option<Genotype>) -> BuildOptions {
    BuildOptions {
        seed: cfg.seed,
        arch_noise: cfg.arch_noise,
        topology,
    }
}

/// Phase one: every edge carries only the simple operator(s) in `topo_ops`
/// (skip connection by default); β is learned and each node keeps its
/// top-`retain` in-edges. With a single operator only β is trained, and
/// when every operator is parameter-free at stride 1 the cell-body kernels
/// (the stride-2 skip projections) stay frozen at their initial values.
pub fn topology_search(data: &Dataset, cfg: &SearchConfig, topo_ops: &[OperatorKind]) -> Result<PhaseResult> {
    check_space(&cfg.space, data)?;
    plan(data, &cfg.budget)?;
    let started = Instant::now();
    let ops: Vec<OpSpec> = topo_ops.iter().map(|&k| k.into()).collect();
    let mut net = SuperNet::build(&cfg.space, &ops, &build_options(cfg, None))?;
    if topo_ops.iter().all(|k| !k.has_weights(1)) {
        net.freeze_kernels();
    }
    search("topology", net, data, cfg, started)
}

/// Phase two, gradient strategy: a mixed-operator super-net on the retained
/// edges only; each edge gets its arg-max α operator.
pub fn operator_search(topology: &Genotype, data: &Dataset, cfg: &SearchConfig, ops: &[OpSpec]) -> Result<PhaseResult> {
    topology.validate()?;
    check_space(&cfg.space, data)?;
    plan(data, &cfg.budget)?;
    let started = Instant::now();
    let mut net = SuperNet::build(&cfg.space, ops, &build_options(cfg, Some(topology.clone())))?;
    net.set_active(ActiveArch { alpha: true, beta: true });
    search("operator", net, data, cfg, started)
}

/// Phase two, replacement strategy: every retained edge gets `op`.
pub fn direct_replace(topology: &Genotype, op: OperatorKind) -> Result<Genotype> {
    topology.validate()?;
    if op == OperatorKind::Zero {
        return config("cannot replace edges with \"none\"");
    }
    Ok(topology.relabel(op))
}

/// Joint α/β/weight search on the full super-net, derived by the same rule.
pub fn darts_baseline_search(data: &Dataset, cfg: &SearchConfig, ops: &[OpSpec]) -> Result<PhaseResult> {
    check_space(&cfg.space, data)?;
    plan(data, &cfg.budget)?;
    let started = Instant::now();
    let mut net = SuperNet::build(&cfg.space, ops, &build_options(cfg, None))?;
    net.set_active(ActiveArch { alpha: true, beta: true });
    search("darts", net, data, cfg, started)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cells: usize,
    pub init_channels: usize,
    /// Overrides the default reduction positions.
    pub reductions: Option<Vec<usize>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Expected class count; checked against the dataset when given.
    pub classes: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cells: 4,
            init_channels: 8,
            reductions: None,
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 3e-4,
            grad_clip: 5.0,
            seed: 0,
            classes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub genotype: Genotype,
    pub params: usize,
    pub epochs: Vec<EpochRecord>,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    #[serde(default)]
    pub seconds: f64,
}

/// Accuracy on `split` using running batch-norm statistics.
pub fn network_accuracy(net: &Network, data: &Dataset, split: Split, batch_size: usize) -> Result<f64> {
    let idx = data.split(split);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk);
        let mut ctx = Ctx::infer(&net.weights, None, &net.running);
        let x = ctx.tape.constant(batch.x);
        let logits = net.forward(&mut ctx, x)?;
        correct += count_correct(ctx.tape.value(logits), &batch.labels);
    }
    Ok(correct as f64 / idx.len() as f64)
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count()
}

/// Trains `genotype_to_network(g)` from scratch on the eval-train split and
/// reports per-epoch accuracies on eval-train, search-val and test.
pub fn evaluate_architecture(g: &Genotype, data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if let Some(c) = cfg.classes {
        if c != data.classes {
            return config(format!("classifier has {c} classes, dataset has {}", data.classes));
        }
    }
    if cfg.batch_size < 2 {
        return config("evaluation batch size must be at least 2");
    }
    let (c, _, _) = data.image_shape();
    let mut space = SpaceConfig::new(g.nodes(), cfg.cells, cfg.init_channels, c, data.classes);
    if let Some(r) = &cfg.reductions {
        space = space.with_reductions(r.clone());
    }
    let started = Instant::now();
    let mut net = genotype_to_network(g, &space, cfg.seed)?;
    let train_idx = data.split(Split::EvalTrain);
    if train_idx.len() < 2 && cfg.epochs > 0 {
        return Err(CoreError::Data("eval-train split has fewer than 2 images".into()));
    }
    let per_epoch = epoch_batches(train_idx, cfg.batch_size, cfg.seed, 0).len();
    let total = (per_epoch * cfg.epochs).max(1);
    let mut opt = OptimizerState::new(
        OptimizerConfig::momentum(cfg.lr, cfg.momentum).with_weight_decay(cfg.weight_decay),
        &net.weights,
    );
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0;
        let mut correct = 0;
        for chunk in epoch_batches(train_idx, cfg.batch_size, cfg.seed, epoch) {
            let batch = data.batch(&chunk);
            let (loss, mut grads, observed, hits) = {
                let mut ctx = Ctx::train(Binding::new(&net.weights), None, true);
                let x = ctx.tape.constant(batch.x);
                let logits = net.forward(&mut ctx, x)?;
                let hits = count_correct(ctx.tape.value(logits), &batch.labels);
                let loss = ctx.tape.cross_entropy(logits, &batch.labels)?;
                let value = ctx.tape.value(loss).item();
                if !value.is_finite() {
                    return Err(CoreError::Numerical(format!("evaluation loss {value} at epoch {epoch}")));
                }
                let g = ctx.tape.backward(loss)?;
                (value, ctx.weights.gradients(&g), std::mem::take(&mut ctx.observed), hits)
            };
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            let t = step as f64 / total as f64;
            let lr = cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos());
            opt.step_with_lr(&mut net.weights, &grads, lr)?;
            for (slot, stats) in &observed {
                net.running[*slot].update(stats);
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            correct += hits;
            step += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc: network_accuracy(&net, data, Split::SearchVal, cfg.batch_size)?,
            test_acc: network_accuracy(&net, data, Split::Test, cfg.batch_size)?,
        });
    }
    let train_acc = network_accuracy(&net, data, Split::EvalTrain, cfg.batch_size)?;
    let (val_acc, test_acc) = match epochs.last() {
        Some(e) => (e.val_acc, e.test_acc),
        None => (
            network_accuracy(&net, data, Split::SearchVal, cfg.batch_size)?,
            network_accuracy(&net, data, Split::Test, cfg.batch_size)?,
        ),
    };
    Ok(EvalReport {
        genotype: g.clone(),
        params: net.param_count(),
        epochs,
        train_acc,
        val_acc,
        test_acc,
        seconds: started.elapsed().as_secs_f64(),
    })
}
