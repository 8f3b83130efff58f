//! First-order optimizers over a [`ParamSet`].
//!
//! * SGD: `p ← p − η(g + λp)`
//! * SGD with momentum: `v ← μv + g + λp`, `p ← p − ηv`
//! * Adam with L2 weight decay folded into the gradient.

use crate::error::{invalid, shape_err, Result};
use crate::param::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay: 0.0,
        }
    }

    pub fn momentum(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Momentum { momentum },
            lr,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let second = match config.kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            _ => Vec::new(),
        };
        let first = match config.kind {
            OptimizerKind::Sgd => Vec::new(),
            _ => zeros,
        };
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One update with an explicit learning rate (for schedules). A zero
    /// rate still advances the state but leaves parameters unchanged.
    pub fn step_with_lr(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return invalid("optimizer_step", format!("learning rate must be finite and >= 0, got {lr}"));
        }
        if grads.len() != params.len() {
            return shape_err(
                "optimizer_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            );
        }
        for ((_, p), g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return shape_err(
                    "optimizer_step",
                    format!("parameter {} is {:?} but gradient is {:?}", p.name, p.value.shape(), g.shape()),
                );
            }
        }
        self.step += 1;
        let wd = self.config.weight_decay;
        let t = self.step as i32;
        for (i, (p, g)) in params.params_mut().iter_mut().zip(grads).enumerate() {
            if !p.trainable {
                continue;
            }
            let pv = p.value.data_mut();
            let gv = g.data();
            match self.config.kind {
                OptimizerKind::Sgd => {
                    for (x, g) in pv.iter_mut().zip(gv) {
                        *x -= lr * (g + wd * *x);
                    }
                }
                OptimizerKind::Momentum { momentum } => {
                    let buf = self.first[i].data_mut();
                    for ((x, g), v) in pv.iter_mut().zip(gv).zip(buf.iter_mut()) {
                        *v = momentum * *v + g + wd * *x;
                        *x -= lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
                    for (((x, g), m), v) in pv.iter_mut().zip(gv).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g + wd * *x;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
