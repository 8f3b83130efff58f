//! Tabular search harness over a small fixed cell space: one input node and
//! three intermediate nodes, each connected to every predecessor, with one
//! of five operators per edge (5⁶ = 15,625 cells). An accuracy table stands
//! in for training; search policies are compared by regret against the
//! exhaustive optimum.
//!
//! The joint-relaxation policies run on a surrogate, not a network: each
//! edge mixes its operators with softmax(α), an operator's quality on an
//! edge is the table's marginal accuracy for that choice, and an operator
//! with weights only reaches that quality once trained. Its training
//! progress advances in proportion to its current mixing weight, which is
//! what lets weight-free operators pull ahead early.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, data, CoreError, Result};

pub const OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];
pub const NONE: u8 = 0;
pub const SKIP: u8 = 1;
pub const CONV1: u8 = 2;
pub const CONV3: u8 = 3;
pub const POOL: u8 = 4;
pub const EDGES: usize = 6;
pub const SPACE_SIZE: usize = 15_625;
pub const DATASETS: [&str; 3] = ["cifar10", "cifar100", "ImageNet16-120"];

/// `(src, dst)` of each edge in cell-string order.
pub const EDGE_NODES: [(usize, usize); EDGES] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

/// Operator index per edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub [u8; EDGES]);

impl Cell {
    /// Position in the canonical enumeration (first edge most significant).
    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, &o| acc * 5 + o as usize)
    }

    pub fn from_index(mut i: usize) -> Cell {
        let mut ops = [0u8; EDGES];
        for slot in ops.iter_mut().rev() {
            *slot = (i % 5) as u8;
            i /= 5;
        }
        Cell(ops)
    }

    pub fn uniform(op: u8) -> Cell {
        Cell([op; EDGES])
    }

    pub fn count(&self, op: u8) -> usize {
        self.0.iter().filter(|&&o| o == op).count()
    }

    /// Whether the output node is reachable from the input through non-`none` edges.
    pub fn connected(&self) -> bool {
        let mut reach = [true, false, false, false];
        for (e, &(s, d)) in EDGE_NODES.iter().enumerate() {
            if self.0[e] != NONE && reach[s] {
                reach[d] = true;
            }
        }
        reach[3]
    }

    /// `|op~0|+|op~0|op~1|+|op~0|op~1|op~2|`.
    pub fn to_arch_string(&self) -> String {
        let o = |e: usize| OPS[self.0[e] as usize];
        format!(
            "|{}~0|+|{}~0|{}~1|+|{}~0|{}~1|{}~2|",
            o(0),
            o(1),
            o(2),
            o(3),
            o(4),
            o(5)
        )
    }

    pub fn parse(s: &str) -> Result<Cell> {
        let bad = || CoreError::Data(format!("malformed cell string {s:?}"));
        let nodes: Vec<&str> = s.split('+').collect();
        if nodes.len() != 3 {
            return Err(bad());
        }
        let mut ops = [0u8; EDGES];
        let mut e = 0;
        for (j, node) in nodes.iter().enumerate() {
            let inner = node.strip_prefix('|').and_then(|n| n.strip_suffix('|')).ok_or_else(bad)?;
            let entries: Vec<&str> = inner.split('|').collect();
            if entries.len() != j + 1 {
                return Err(bad());
            }
            for (i, entry) in entries.iter().enumerate() {
                let (name, src) = entry.split_once('~').ok_or_else(bad)?;
                if src != i.to_string() {
                    return Err(bad());
                }
                let op = OPS
                    .iter()
                    .position(|o| *o == name)
                    .ok_or_else(|| CoreError::Data(format!("unknown operator {name:?} in cell {s:?}")))?;
                ops[e] = op as u8;
                e += 1;
            }
        }
        Ok(Cell(ops))
    }
}

pub fn all_cells() -> impl Iterator<Item = Cell> {
    (0..SPACE_SIZE).map(Cell::from_index)
}

pub fn dataset_index(key: &str) -> Result<usize> {
    DATASETS
        .iter()
        .position(|d| *d == key)
        .ok_or_else(|| CoreError::Config(format!("unknown dataset key {key:?}, expected one of {DATASETS:?}")))
}

/// Accuracy triple for every cell, indexed by canonical position.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    acc: Vec<[f64; 3]>,
}

impl AccuracyTable {
    pub fn from_fn(mut f: impl FnMut(Cell) -> [f64; 3]) -> Result<AccuracyTable> {
        let acc: Vec<[f64; 3]> = all_cells().map(&mut f).collect();
        if let Some((i, a)) = acc.iter().enumerate().find(|(_, a)| a.iter().any(|v| !(0.0..=100.0).contains(v))) {
            return data(format!("accuracy {a:?} of {} outside [0, 100]", Cell::from_index(i).to_arch_string()));
        }
        Ok(AccuracyTable { acc })
    }

    pub fn get(&self, cell: Cell) -> [f64; 3] {
        self.acc[cell.index()]
    }

    pub fn accuracy(&self, cell: Cell, dataset: usize) -> f64 {
        self.acc[cell.index()][dataset]
    }

    /// Tab-separated text, one cell per line in canonical order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(SPACE_SIZE * 80);
        for (i, a) in self.acc.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", Cell::from_index(i).to_arch_string(), a[0], a[1], a[2]);
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<AccuracyTable> {
        let mut acc: Vec<Option<[f64; 3]>> = vec![None; SPACE_SIZE];
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return data(format!("line {row}: expected cell and three accuracies separated by tabs"));
            }
            let cell = Cell::parse(fields[0]).map_err(|e| CoreError::Data(format!("line {row}: {e}")))?;
            let mut a = [0.0; 3];
            for (slot, f) in a.iter_mut().zip(&fields[1..]) {
                *slot = f
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| (0.0..=100.0).contains(v))
                    .ok_or_else(|| CoreError::Data(format!("line {row}: accuracy {f:?} is not a number in [0, 100]")))?;
            }
            let entry = &mut acc[cell.index()];
            if entry.is_some() {
                return data(format!("line {row}: duplicate entry for {}", fields[0]));
            }
            *entry = Some(a);
        }
        let missing: Vec<usize> = (0..SPACE_SIZE).filter(|&i| acc[i].is_none()).collect();
        if let Some(&first) = missing.first() {
            return data(format!(
                "{} of {SPACE_SIZE} cells missing, first {}",
                missing.len(),
                Cell::from_index(first).to_arch_string()
            ));
        }
        Ok(AccuracyTable {
            acc: acc.into_iter().map(|a| a.expect("checked")).collect(),
        })
    }
}

pub fn load_table(path: &Path) -> Result<AccuracyTable> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    AccuracyTable::parse_tsv(&text)
}

pub fn write_table(path: &Path, table: &AccuracyTable) -> Result<()> {
    fs::write(path, table.to_tsv())?;
    Ok(())
}

/// Accuracy 10 per 3×3 convolution edge, identical on all datasets.
pub fn monotone_table() -> AccuracyTable {
    AccuracyTable::from_fn(|c| [10.0 * c.count(CONV3) as f64; 3]).expect("within range")
}

/// Convolutions help most, but skip connections and pooling also help a
/// little; disconnected cells sit at chance. Seeded noise of at most ±1.
pub fn skip_biased_table(seed: u64) -> AccuracyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = [1.0, 0.75, 0.5];
    AccuracyTable::from_fn(|c| {
        let noise: f64 = rng.random_range(-1.0..1.0);
        let base = if c.connected() {
            40.0 + 8.0 * c.count(CONV3) as f64 + 4.0 * c.count(CONV1) as f64 + 2.0 * c.count(SKIP) as f64 + c.count(POOL) as f64 + noise
        } else {
            10.0
        };
        scale.map(|s| (base * s).clamp(0.0, 100.0))
    })
    .expect("within range")
}

/// Arg-max over the full space; ties go to the earlier cell.
pub fn exhaustive_best(table: &AccuracyTable, dataset: usize) -> Cell {
    let mut best = Cell::from_index(0);
    for c in all_cells() {
        if table.accuracy(c, dataset) > table.accuracy(best, dataset) {
            best = c;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Fixed full topology; operators by direct replacement (`gradient =
    /// false`) or by α search with every operator fully trained.
    Ftso { gradient: bool },
    Darts1st,
    Darts2ndProxy,
    Random,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Ftso { gradient: false } => "ftso",
            Policy::Ftso { gradient: true } => "ftso-gradient",
            Policy::Darts1st => "darts1st",
            Policy::Darts2ndProxy => "darts2nd-proxy",
            Policy::Random => "random",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Policy> {
        Ok(match s {
            "ftso" => Policy::Ftso { gradient: false },
            "ftso-gradient" => Policy::Ftso { gradient: true },
            "darts1st" => Policy::Darts1st,
            "darts2nd-proxy" => Policy::Darts2ndProxy,
            "random" => Policy::Random,
            _ => return config(format!("unknown policy {s:?}")),
        })
    }
}

/// Surrogate constants. Chosen once from the mechanism, not fitted to any table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    /// Training progress per step for an operator holding all the mixing weight.
    pub train_rate: f64,
    /// Quality deficit of a completely untrained weighted operator below `none`.
    pub untrained_penalty: f64,
    pub arch_lr: f64,
    /// Standard deviation of per-step quality noise (mini-batch variation).
    pub noise: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self {
            train_rate: 0.05,
            untrained_penalty: 2.0,
            arch_lr: 0.5,
            noise: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub policy: String,
    pub dataset: String,
    pub seed: u64,
    pub cell: String,
    pub accuracy: [f64; 3],
    pub best: String,
    pub regret: f64,
}

/// Marginal accuracy of each operator on each edge, averaged over the space.
pub fn marginals(table: &AccuracyTable, dataset: usize) -> [[f64; 5]; EDGES] {
    let mut sum = [[0.0; 5]; EDGES];
    for c in all_cells() {
        let a = table.accuracy(c, dataset);
        for e in 0..EDGES {
            sum[e][c.0[e] as usize] += a;
        }
    }
    let per = (SPACE_SIZE / 5) as f64;
    sum.map(|row| row.map(|s| s / per))
}

fn has_weights(op: usize) -> bool {
    op == CONV1 as usize || op == CONV3 as usize
}

fn softmax(a: &[f64; 5]) -> [f64; 5] {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = a.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Arg-max α per edge, skipping `none`, ties to the earlier operator.
fn derive(alpha: &[[f64; 5]; EDGES]) -> Cell {
    let mut ops = [0u8; EDGES];
    for (e, row) in alpha.iter().enumerate() {
        let mut best = 1;
        for o in 2..5 {
            if row[o] > row[best] {
                best = o;
            }
        }
        ops[e] = best as u8;
    }
    Cell(ops)
}

/// Joint relaxation on the surrogate for `steps` updates. With `trained`,
/// every weighted operator starts fully trained (operator search on a small
/// fixed topology); `lookahead` evaluates qualities after one virtual
/// training step, a stand-in for the second-order update.
fn relaxation(m: &[[f64; 5]; EDGES], steps: usize, seed: u64, s: &Surrogate, trained: bool, lookahead: bool) -> Cell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-3).expect("valid");
    let noise = Normal::new(0.0, s.noise.max(0.0)).expect("valid");
    let mut alpha = [[0.0; 5]; EDGES];
    for row in alpha.iter_mut() {
        for v in row.iter_mut() {
            *v = init.sample(&mut rng);
        }
    }
    let start = if trained { 1.0 } else { 0.0 };
    let mut progress = [[start; 5]; EDGES];
    for _ in 0..steps {
        for e in 0..EDGES {
            let w = softmax(&alpha[e]);
            let advance = |p: f64, o: usize| p + s.train_rate * w[o] * (1.0 - p);
            let mut q = [0.0; 5];
            for o in 0..5 {
                q[o] = if has_weights(o) {
                    let p = if lookahead { advance(progress[e][o], o) } else { progress[e][o] };
                    let floor = m[e][NONE as usize] - s.untrained_penalty;
                    floor + p * (m[e][o] - floor)
                } else {
                    m[e][o]
                };
                q[o] += noise.sample(&mut rng);
            }
            let mean: f64 = (0..5).map(|o| w[o] * q[o]).sum();
            for o in 0..5 {
                alpha[e][o] += s.arch_lr * w[o] * (q[o] - mean);
                if has_weights(o) {
                    progress[e][o] = advance(progress[e][o], o);
                }
            }
        }
    }
    derive(&alpha)
}

/// Runs one policy and scores the chosen cell against the exhaustive optimum.
pub fn tabular_search(policy: Policy, dataset: &str, table: &AccuracyTable, budget: usize, seed: u64) -> Result<BenchResult> {
    let d = dataset_index(dataset)?;
    let s = Surrogate::default();
    let cell = match policy {
        Policy::Ftso { gradient: false } => Cell::uniform(CONV3),
        Policy::Ftso { gradient: true } => relaxation(&marginals(table, d), budget, seed, &s, true, false),
        Policy::Darts1st => relaxation(&marginals(table, d), budget, seed, &s, false, false),
        Policy::Darts2ndProxy => relaxation(&marginals(table, d), budget, seed, &s, false, true),
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best = Cell::from_index(rng.random_range(0..SPACE_SIZE));
            for _ in 1..budget.max(1) {
                let c = Cell::from_index(rng.random_range(0..SPACE_SIZE));
                if table.accuracy(c, d) > table.accuracy(best, d) {
                    best = c;
                }
            }
            best
        }
    };
    let best = exhaustive_best(table, d);
    Ok(BenchResult {
        policy: policy.name().to_string(),
        dataset: dataset.to_string(),
        seed,
        cell: cell.to_arch_string(),
        accuracy: table.get(cell),
        best: best.to_arch_string(),
        regret: table.accuracy(best, d) - table.accuracy(cell, d),
    })
}

/// Fraction of weight-free operators (skip, pooling, none) in a cell.
pub fn parameter_free_fraction(cell: &str) -> Result<f64> {
    let c = Cell::parse(cell)?;
    Ok(c.0.iter().filter(|&&o| !has_weights(o as usize)).count() as f64 / EDGES as f64)
}

/// Mean regret per policy name.
pub fn summarize(results: &[BenchResult]) -> Vec<(String, f64, usize)> {
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    let mut order = Vec::new();
    for r in results {
        let e = acc.entry(&r.policy).or_insert_with(|| {
            order.push(r.policy.as_str());
            (0.0, 0)
        });
        e.0 += r.regret;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|p| {
            let (sum, n) = acc[p];
            (p.to_string(), sum / n as f64, n)
        })
        .collect()
}
