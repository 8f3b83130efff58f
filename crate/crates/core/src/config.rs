//! Experiment files: flat `key = value` lines with dotted section names.
//!
//! ```text
//! # comments run to end of line
//! seed = 3
//! data.source = synthetic
//! space.nodes = 7
//! topology.ops = skip_connect
//! strategy = replace
//! ```
//!
//! Unknown keys are errors. [`ExperimentConfig::to_text`] writes every key
//! in a fixed order, so a snapshot parses back to the same config.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Pattern, Source, SplitFractions};
use crate::engine::{BudgetUnit, EvalConfig, Hyper, SearchBudget, SearchConfig};
use crate::error::{config, CoreError, Result};
use crate::ops::{parse_op_list, OpSpec, OperatorKind};
use crate::supernet::{default_reductions, SpaceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Relabel every retained edge with one operator.
    Replace,
    /// Search operators by gradient on the pruned topology.
    Gradient,
}

impl std::str::FromStr for Strategy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Strategy> {
        match s {
            "replace" | "direct-replace" => Ok(Strategy::Replace),
            "gradient" | "gradient-op-search" => Ok(Strategy::Gradient),
            _ => config(format!("unknown strategy {s:?}, expected replace or gradient")),
        }
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Replace => "replace",
            Strategy::Gradient => "gradient",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// `synthetic`, `idx` or `csv`.
    pub source: String,
    pub pattern: Pattern,
    pub classes: usize,
    pub samples: usize,
    pub channels: usize,
    pub size: usize,
    pub separation: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub fractions: SplitFractions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub nodes: usize,
    pub cells: usize,
    pub init_channels: usize,
    pub partial_channels: usize,
    pub reductions: Option<Vec<usize>>,
    pub topology_ops: Vec<OperatorKind>,
    pub topology_budget: SearchBudget,
    pub operator_ops: Vec<OperatorKind>,
    pub operator_budget: SearchBudget,
    pub hyper: Hyper,
    pub arch_noise: f64,
    pub eigen_every: usize,
    pub eigen_iters: usize,
    pub strategy: Strategy,
    pub replace_op: OperatorKind,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataConfig {
                source: "synthetic".into(),
                pattern: Pattern::Blobs,
                classes: 2,
                samples: 1000,
                channels: 1,
                size: 28,
                separation: 3.0,
                images: None,
                labels: None,
                path: None,
                height: 28,
                width: 28,
                fractions: SplitFractions::default(),
            },
            nodes: 7,
            cells: 5,
            init_channels: 16,
            partial_channels: 1,
            reductions: None,
            topology_ops: vec![OperatorKind::SkipConnect],
            topology_budget: SearchBudget::epochs(1, 64),
            operator_ops: OperatorKind::ALL.to_vec(),
            operator_budget: SearchBudget::epochs(1, 64),
            hyper: Hyper::default(),
            arch_noise: 0.0,
            eigen_every: 0,
            eigen_iters: 20,
            strategy: Strategy::Replace,
            replace_op: OperatorKind::SepConv3x3,
            eval: EvalConfig {
                cells: 5,
                init_channels: 16,
                ..EvalConfig::default()
            },
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CoreError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn unit_name(u: BudgetUnit) -> &'static str {
    match u {
        BudgetUnit::Iterations => "iter",
        BudgetUnit::Epochs => "epoch",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CoreError::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("configuration: "))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let h = &mut self.hyper;
        let e = &mut self.eval;
        let d = &mut self.data;
        match key {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = path(v),
            "data.source" => {
                if !["synthetic", "idx", "csv"].contains(&v) {
                    return config(format!("data.source must be synthetic, idx or csv, got {v:?}"));
                }
                d.source = v.to_string();
            }
            "data.pattern" => {
                d.pattern = match v {
                    "blobs" => Pattern::Blobs,
                    "stripes" => Pattern::Stripes,
                    _ => return config(format!("data.pattern must be blobs or stripes, got {v:?}")),
                }
            }
            "data.classes" => d.classes = num(key, v)?,
            "data.samples" => d.samples = num(key, v)?,
            "data.channels" => d.channels = num(key, v)?,
            "data.size" => d.size = num(key, v)?,
            "data.separation" => d.separation = num(key, v)?,
            "data.images" => d.images = path(v),
            "data.labels" => d.labels = path(v),
            "data.path" => d.path = path(v),
            "data.height" => d.height = num(key, v)?,
            "data.width" => d.width = num(key, v)?,
            "data.fractions" => {
                let f: Vec<f64> = list(key, v)?;
                let arr: [f64; 4] = f
                    .try_into()
                    .map_err(|_| CoreError::Config("data.fractions needs four values".into()))?;
                d.fractions = SplitFractions(arr);
            }
            "space.nodes" => self.nodes = num(key, v)?,
            "space.cells" => self.cells = num(key, v)?,
            "space.init_channels" => self.init_channels = num(key, v)?,
            "space.partial_channels" => self.partial_channels = num(key, v)?,
            "space.reductions" => self.reductions = if v == "default" { None } else { Some(list(key, v)?) },
            "topology.ops" => self.topology_ops = parse_op_list(v)?,
            "topology.budget_unit" => self.topology_budget.unit = v.parse()?,
            "topology.budget" => self.topology_budget.amount = num(key, v)?,
            "operator.ops" => self.operator_ops = parse_op_list(v)?,
            "operator.budget_unit" => self.operator_budget.unit = v.parse()?,
            "operator.budget" => self.operator_budget.amount = num(key, v)?,
            "search.batch_size" => {
                let b = num(key, v)?;
                self.topology_budget.batch_size = b;
                self.operator_budget.batch_size = b;
            }
            "search.arch_lr" => h.arch_lr = num(key, v)?,
            "search.arch_beta1" => h.arch_beta1 = num(key, v)?,
            "search.arch_beta2" => h.arch_beta2 = num(key, v)?,
            "search.arch_weight_decay" => h.arch_wd = num(key, v)?,
            "search.w_lr" => h.w_lr = num(key, v)?,
            "search.w_lr_min" => h.w_lr_min = num(key, v)?,
            "search.w_momentum" => h.w_momentum = num(key, v)?,
            "search.w_weight_decay" => h.w_wd = num(key, v)?,
            "search.grad_clip" => h.grad_clip = num(key, v)?,
            "search.arch_noise" => self.arch_noise = num(key, v)?,
            "search.eigen_every" => self.eigen_every = num(key, v)?,
            "search.eigen_iters" => self.eigen_iters = num(key, v)?,
            "strategy" => self.strategy = v.parse()?,
            "replace_op" => self.replace_op = v.parse()?,
            "eval.cells" => e.cells = num(key, v)?,
            "eval.init_channels" => e.init_channels = num(key, v)?,
            "eval.reductions" => e.reductions = if v == "default" { None } else { Some(list(key, v)?) },
            "eval.epochs" => e.epochs = num(key, v)?,
            "eval.batch_size" => e.batch_size = num(key, v)?,
            "eval.lr" => e.lr = num(key, v)?,
            "eval.lr_min" => e.lr_min = num(key, v)?,
            "eval.momentum" => e.momentum = num(key, v)?,
            "eval.weight_decay" => e.weight_decay = num(key, v)?,
            "eval.grad_clip" => e.grad_clip = num(key, v)?,
            _ => return config(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let h = &self.hyper;
        let e = &self.eval;
        let reductions = |r: &Option<Vec<usize>>| r.as_ref().map_or("default".to_string(), |r| join(r));
        let ops = |o: &[OperatorKind]| join(&o.iter().map(|k| k.name()).collect::<Vec<_>>());
        let pattern = match d.pattern {
            Pattern::Blobs => "blobs",
            Pattern::Stripes => "stripes",
        };
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", show_path(&self.out)),
            ("data.source", d.source.clone()),
            ("data.pattern", pattern.into()),
            ("data.classes", d.classes.to_string()),
            ("data.samples", d.samples.to_string()),
            ("data.channels", d.channels.to_string()),
            ("data.size", d.size.to_string()),
            ("data.separation", d.separation.to_string()),
            ("data.images", show_path(&d.images)),
            ("data.labels", show_path(&d.labels)),
            ("data.path", show_path(&d.path)),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.fractions", join(&d.fractions.0)),
            ("space.nodes", self.nodes.to_string()),
            ("space.cells", self.cells.to_string()),
            ("space.init_channels", self.init_channels.to_string()),
            ("space.partial_channels", self.partial_channels.to_string()),
            ("space.reductions", reductions(&self.reductions)),
            ("topology.ops", ops(&self.topology_ops)),
            ("topology.budget_unit", unit_name(self.topology_budget.unit).into()),
            ("topology.budget", self.topology_budget.amount.to_string()),
            ("operator.ops", ops(&self.operator_ops)),
            ("operator.budget_unit", unit_name(self.operator_budget.unit).into()),
            ("operator.budget", self.operator_budget.amount.to_string()),
            ("search.batch_size", self.topology_budget.batch_size.to_string()),
            ("search.arch_lr", h.arch_lr.to_string()),
            ("search.arch_beta1", h.arch_beta1.to_string()),
            ("search.arch_beta2", h.arch_beta2.to_string()),
            ("search.arch_weight_decay", h.arch_wd.to_string()),
            ("search.w_lr", h.w_lr.to_string()),
            ("search.w_lr_min", h.w_lr_min.to_string()),
            ("search.w_momentum", h.w_momentum.to_string()),
            ("search.w_weight_decay", h.w_wd.to_string()),
            ("search.grad_clip", h.grad_clip.to_string()),
            ("search.arch_noise", self.arch_noise.to_string()),
            ("search.eigen_every", self.eigen_every.to_string()),
            ("search.eigen_iters", self.eigen_iters.to_string()),
            ("strategy", self.strategy.name().into()),
            ("replace_op", self.replace_op.name().into()),
            ("eval.cells", e.cells.to_string()),
            ("eval.init_channels", e.init_channels.to_string()),
            ("eval.reductions", reductions(&e.reductions)),
            ("eval.epochs", e.epochs.to_string()),
            ("eval.batch_size", e.batch_size.to_string()),
            ("eval.lr", e.lr.to_string()),
            ("eval.lr_min", e.lr_min.to_string()),
            ("eval.momentum", e.momentum.to_string()),
            ("eval.weight_decay", e.weight_decay.to_string()),
            ("eval.grad_clip", e.grad_clip.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let d = &self.data;
        let need = |p: &Option<PathBuf>, key: &str| p.clone().ok_or_else(|| CoreError::Config(format!("{key} is required for data.source = {}", d.source)));
        let source = match d.source.as_str() {
            "idx" => Source::Idx {
                images: need(&d.images, "data.images")?,
                labels: need(&d.labels, "data.labels")?,
            },
            "csv" => Source::Csv {
                path: need(&d.path, "data.path")?,
                channels: d.channels,
                height: d.height,
                width: d.width,
            },
            _ => Source::Synthetic {
                pattern: d.pattern,
                classes: d.classes,
                samples: d.samples,
                channels: d.channels,
                size: d.size,
                separation: d.separation,
            },
        };
        Ok(DatasetSpec {
            source,
            fractions: d.fractions,
            seed: self.seed,
        })
    }

    /// Search space for data with `in_channels` channels and `classes` classes.
    pub fn space(&self, in_channels: usize, classes: usize) -> SpaceConfig {
        SpaceConfig::new(self.nodes, self.cells, self.init_channels, in_channels, classes)
            .with_reductions(self.reductions.clone().unwrap_or_else(|| default_reductions(self.cells)))
            .with_partial_channels(self.partial_channels)
    }

    fn search(&self, budget: SearchBudget, in_channels: usize, classes: usize) -> SearchConfig {
        SearchConfig {
            space: self.space(in_channels, classes),
            budget,
            hyper: self.hyper,
            seed: self.seed,
            arch_noise: self.arch_noise,
            retain: 2,
            eigen_every: self.eigen_every,
            eigen_iters: self.eigen_iters,
        }
    }

    pub fn topology_search(&self, in_channels: usize, classes: usize) -> SearchConfig {
        self.search(self.topology_budget, in_channels, classes)
    }

    pub fn operator_search(&self, in_channels: usize, classes: usize) -> SearchConfig {
        self.search(self.operator_budget, in_channels, classes)
    }

    pub fn operator_specs(&self) -> Vec<OpSpec> {
        self.operator_ops.iter().map(|&k| k.into()).collect()
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: self.seed,
            ..self.eval.clone()
        }
    }
}
