//! Exit-gate checks. One `[PASS]`/`[FAIL]` line per criterion, written to
//! stdout even when the harness captures test output.
//! Everything runs inside a single test so the timing criterion is not
//! disturbed by sibling tests sharing the CPU.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twophase_core::bench::{monotone_table, parameter_free_fraction, skip_biased_table, tabular_search, Cell, Policy, CONV3};
use twophase_core::config::{ExperimentConfig, Strategy};
use twophase_core::cost::{darts_cost, enumerate_costs, flop_ratio, ftso_cost, param_ratio};
use twophase_core::diag::hessian_max_eigenvalue;
use twophase_core::engine::{
    darts_baseline_search, direct_replace, evaluate_architecture, operator_search, topology_search, EvalConfig, SearchBudget, SearchConfig,
};
use twophase_core::runner::run_experiment;
use twophase_core::supernet::{derive_genotype, ActiveArch, ArchParams, BuildOptions};
use twophase_core::{CellType, GenoEdge, Genotype, OpSpec, OperatorKind, SpaceConfig, SuperNet};
use twophase_tensor::gradcheck::max_relative_error;
use twophase_tensor::{finite_diff_gradient, ConvSpec, PoolSpec, Result as TResult, Tape, Tensor, TensorError, Var};

// Pinned tolerances.
const GRAD_GRAPHS: usize = 200;
const GRAD_EPS: f64 = 1e-6;
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const COST_SECONDS: f64 = 10.0;
const DERIVE_SAMPLES: u64 = 1000;
const SPEEDUP_FLOOR: f64 = 20.0;
const SPEEDUP_TOLERANCE: f64 = 0.5;
const ONE_ITER_SECONDS: f64 = 1.0;
const QUALITY_SEEDS: u64 = 10;
const EIGEN_TOL: f64 = 1e-3;
const BENCH_SEEDS: u64 = 20;
const SKIP_BIASED_MIN_WINS: usize = 16;

type Outcome = (bool, String);

// ---------- criterion 1: random composite graphs ----------

const PRIMITIVES: [&str; 26] = [
    "add", "sub", "mul", "scale", "add_bias", "matmul", "conv2d", "max_pool2d", "avg_pool2d", "global_avg_pool", "relu", "batch_norm",
    "channel_affine", "softmax", "log", "sum", "mean", "concat", "gather_channels", "scatter_channels", "crop", "gather", "scale_rows",
    "weighted_sum", "cross_entropy", "reshape",
];

#[derive(Clone, Debug)]
enum Step {
    Conv { w: usize, b: Option<usize>, spec: ConvSpec },
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    Relu,
    BatchNorm(Option<(usize, usize)>),
    Affine(usize, usize),
    Add(usize),
    Sub(usize),
    Mul(usize),
    Scale(f64),
    /// concat with relu(x), then pick C channels back out
    ConcatPick(Vec<usize>),
    /// split channels, transform one part, scatter both back
    SplitMerge(Vec<usize>, Vec<usize>),
    Crop,
    /// mixed-operator node: softmax(α) rows scaled by softmax(β), one term dropped
    Mixed { alpha: usize, beta: usize },
}

#[derive(Clone, Debug)]
enum Head {
    Linear { w: usize, b: usize, labels: Vec<usize> },
    LogSoftmaxMean { w: usize },
    Weighted(Tensor),
}

struct Program {
    leaves: Vec<Tensor>,
    steps: Vec<Step>,
    head: Head,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

fn step_names(s: &Step) -> &'static [&'static str] {
    match s {
        Step::Conv { .. } => &["conv2d"],
        Step::MaxPool(_) => &["max_pool2d"],
        Step::AvgPool(_) => &["avg_pool2d"],
        Step::Relu => &["relu"],
        Step::BatchNorm(_) => &["batch_norm"],
        Step::Affine(..) => &["channel_affine"],
        Step::Add(_) => &["add"],
        Step::Sub(_) => &["sub"],
        Step::Mul(_) => &["mul"],
        Step::Scale(_) => &["scale"],
        Step::ConcatPick(_) => &["concat", "relu", "gather_channels"],
        Step::SplitMerge(..) => &["gather_channels", "scatter_channels", "avg_pool2d", "add"],
        Step::Crop => &["crop"],
        Step::Mixed { .. } => &["softmax", "scale_rows", "reshape", "gather", "weighted_sum", "max_pool2d", "avg_pool2d"],
    }
}

fn head_names(h: &Head) -> &'static [&'static str] {
    match h {
        Head::Linear { .. } => &["global_avg_pool", "reshape", "matmul", "add_bias", "cross_entropy"],
        Head::LogSoftmaxMean { .. } => &["global_avg_pool", "reshape", "matmul", "softmax", "log", "mean"],
        Head::Weighted(_) => &["mul", "sum"],
    }
}

/// Random program; `forced` picks the step kind for the coverage prefix.
fn random_program(seed: u64, forced: Option<usize>) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + rng.random_range(0..2);
    let mut c = 2 + rng.random_range(0..3);
    let mut h = 5 + rng.random_range(0..3);
    let mut leaves = vec![uniform(&[n, c, h, h], -1.0, 1.0, &mut rng)];
    let mut steps = Vec::new();
    let depth = 2 + rng.random_range(0..3);
    for i in 0..depth {
        let kind = if i == 0 { forced.unwrap_or_else(|| rng.random_range(0..14)) } else { rng.random_range(0..14) };
        let leaf = |t: Tensor, leaves: &mut Vec<Tensor>| {
            leaves.push(t);
            leaves.len() - 1
        };
        let step = match kind {
            0 => {
                let depthwise = rng.random_bool(0.3);
                let k = if rng.random_bool(0.5) { 3 } else { 1 };
                let dil = if k == 3 && rng.random_bool(0.3) { 2 } else { 1 };
                let stride = if h >= 6 && rng.random_bool(0.3) { 2 } else { 1 };
                let pad = dil * (k / 2);
                let groups = if depthwise { c } else { 1 };
                let w = leaf(uniform(&[c, c / groups, k, k], -1.0, 1.0, &mut rng), &mut leaves);
                let b = rng.random_bool(0.5).then(|| leaf(uniform(&[c], -1.0, 1.0, &mut rng), &mut leaves));
                h = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
                Step::Conv { w, b, spec: ConvSpec::new(stride, pad, dil, groups) }
            }
            1 => Step::MaxPool(PoolSpec::new(3, 1, 1)),
            2 => Step::AvgPool(PoolSpec::new(3, 1, 1)),
            3 => Step::Relu,
            4 => {
                let affine = rng
                    .random_bool(0.5)
                    .then(|| (leaf(uniform(&[c], 0.5, 2.0, &mut rng), &mut leaves), leaf(uniform(&[c], -1.0, 1.0, &mut rng), &mut leaves)));
                Step::BatchNorm(affine)
            }
            5 => Step::Affine(leaf(uniform(&[c], -1.0, 1.0, &mut rng), &mut leaves), leaf(uniform(&[c], -1.0, 1.0, &mut rng), &mut leaves)),
            6 => Step::Add(leaf(uniform(&[n, c, h, h], -1.0, 1.0, &mut rng), &mut leaves)),
            7 => Step::Sub(leaf(uniform(&[n, c, h, h], -1.0, 1.0, &mut rng), &mut leaves)),
            8 => Step::Mul(leaf(uniform(&[n, c, h, h], -1.0, 1.0, &mut rng), &mut leaves)),
            9 => Step::Scale(rng.random_range(-2.0..2.0)),
            10 => {
                let mut idx: Vec<usize> = (0..2 * c).collect();
                for i in (1..idx.len()).rev() {
                    idx.swap(i, rng.random_range(0..=i));
                }
                idx.truncate(c);
                Step::ConcatPick(idx)
            }
            11 => {
                c = c.max(2);
                let keep: Vec<usize> = (0..c).filter(|i| i % 2 == 0).collect();
                let rest: Vec<usize> = (0..c).filter(|i| i % 2 == 1).collect();
                Step::SplitMerge(keep, rest)
            }
            12 if h >= 5 => {
                h -= 2;
                Step::Crop
            }
            12 => Step::Relu,
            _ => Step::Mixed {
                alpha: leaf(uniform(&[2, 2], -1.0, 1.0, &mut rng), &mut leaves),
                beta: leaf(uniform(&[2], -1.0, 1.0, &mut rng), &mut leaves),
            },
        };
        steps.push(step);
    }
    let k = 3;
    let head = match rng.random_range(0..3) {
        0 => Head::Linear {
            w: {
                leaves.push(uniform(&[c, k], -1.0, 1.0, &mut rng));
                leaves.len() - 1
            },
            b: {
                leaves.push(uniform(&[k], -1.0, 1.0, &mut rng));
                leaves.len() - 1
            },
            labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
        },
        1 => Head::LogSoftmaxMean {
            w: {
                leaves.push(uniform(&[c, k], -1.0, 1.0, &mut rng));
                leaves.len() - 1
            },
        },
        _ => Head::Weighted(uniform(&[n, c, h, h], -1.0, 1.0, &mut rng)),
    };
    Program { leaves, steps, head }
}

fn run_program(p: &Program, tape: &mut Tape, v: &[Var]) -> TResult<Var> {
    let mut x = v[0];
    for s in &p.steps {
        x = match s {
            Step::Conv { w, b, spec } => tape.conv2d(x, v[*w], b.map(|b| v[b]), *spec)?,
            Step::MaxPool(spec) => tape.max_pool2d(x, *spec)?,
            Step::AvgPool(spec) => tape.avg_pool2d(x, *spec)?,
            Step::Relu => tape.relu(x)?,
            Step::BatchNorm(a) => tape.batch_norm(x, a.map(|a| v[a.0]), a.map(|a| v[a.1]), 1e-5)?.0,
            Step::Affine(s, t) => tape.channel_affine(x, v[*s], v[*t])?,
            Step::Add(o) => tape.add(x, v[*o])?,
            Step::Sub(o) => tape.sub(x, v[*o])?,
            Step::Mul(o) => tape.mul(x, v[*o])?,
            Step::Scale(c) => tape.scale(x, *c)?,
            Step::ConcatPick(idx) => {
                let r = tape.relu(x)?;
                let cat = tape.concat(&[x, r])?;
                tape.gather_channels(cat, idx)?
            }
            Step::SplitMerge(keep, rest) => {
                let c = tape.shape(x)[1];
                let a = tape.gather_channels(x, keep)?;
                let b = tape.gather_channels(x, rest)?;
                let b = tape.avg_pool2d(b, PoolSpec::new(3, 1, 1))?;
                let a = tape.scatter_channels(a, keep, c)?;
                let b = tape.scatter_channels(b, rest, c)?;
                tape.add(a, b)?
            }
            Step::Crop => {
                let h = tape.shape(x)[2];
                tape.crop(x, 1, 1, h - 2, h - 2)?
            }
            Step::Mixed { alpha, beta } => {
                let a = tape.softmax(v[*alpha])?;
                let b = tape.softmax(v[*beta])?;
                let w = tape.scale_rows(a, b)?;
                let w = tape.reshape(w, &[4])?;
                let w = tape.gather(w, &[0, 1, 3])?;
                let m = tape.max_pool2d(x, PoolSpec::new(3, 1, 1))?;
                let s = tape.avg_pool2d(x, PoolSpec::new(3, 1, 1))?;
                tape.weighted_sum(w, &[x, m, s])?
            }
        };
    }
    let features = |tape: &mut Tape, x: Var| -> TResult<Var> {
        let g = tape.global_avg_pool(x)?;
        let s = tape.shape(g).to_vec();
        tape.reshape(g, &[s[0], s[1]])
    };
    match &p.head {
        Head::Linear { w, b, labels } => {
            let f = features(tape, x)?;
            let y = tape.matmul(f, v[*w])?;
            let y = tape.add_bias(y, v[*b])?;
            tape.cross_entropy(y, labels)
        }
        Head::LogSoftmaxMean { w } => {
            let f = features(tape, x)?;
            let y = tape.matmul(f, v[*w])?;
            let y = tape.softmax(y)?;
            let y = tape.log(y)?;
            tape.mean(y)
        }
        Head::Weighted(r) => {
            let r = tape.constant(r.clone());
            let y = tape.mul(x, r)?;
            tape.sum(y)
        }
    }
}

fn eval_program(p: &Program, leaves: &[Tensor]) -> TResult<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = run_program(p, &mut tape, &vars)?;
    let g = tape.backward(loss)?;
    Ok((tape.value(loss).item(), vars.iter().map(|v| g.wrt(*v).into_data()).collect()))
}

fn program_error(p: &Program) -> f64 {
    let (_, analytic) = eval_program(p, &p.leaves).unwrap();
    let mut worst: f64 = 0.0;
    for (k, leaf) in p.leaves.iter().enumerate() {
        let numeric = finite_diff_gradient::<TensorError>(
            |x| {
                let mut l = p.leaves.clone();
                l[k] = Tensor::new(leaf.shape().to_vec(), x.to_vec())?;
                Ok(eval_program(p, &l)?.0)
            },
            leaf.data(),
            GRAD_EPS,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&analytic[k], &numeric, GRAD_FLOOR));
    }
    worst
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut covered = BTreeSet::new();
    let mut worst: f64 = 0.0;
    let mut worst_seed = 0;
    for i in 0..GRAD_GRAPHS as u64 {
        let forced = (i < 14).then_some(i as usize);
        let p = random_program(1000 + i, forced);
        for s in &p.steps {
            covered.extend(step_names(s).iter().copied());
        }
        covered.extend(head_names(&p.head).iter().copied());
        let e = program_error(&p);
        if e > worst {
            worst = e;
            worst_seed = 1000 + i;
        }
    }
    let missing: Vec<&str> = PRIMITIVES.iter().filter(|p| !covered.contains(*p)).copied().collect();
    let secs = started.elapsed().as_secs_f64();
    let ok = worst < GRAD_TOL && missing.is_empty() && secs < 120.0;
    (
        ok,
        format!("{GRAD_GRAPHS} graphs, max rel err {worst:.2e} (seed {worst_seed}) < {GRAD_TOL:.0e}, missing primitives {missing:?}, {secs:.1}s < 120s"),
    )
}

// ---------- criterion 2: cost model ----------

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let (c, h, k) = (3usize, 5usize, 3usize);
    let mut mismatches = Vec::new();
    for n in 4..=9usize {
        for p in 1..=4usize {
            let ops = vec![OpSpec::VanillaConv { kernel: k }; p];
            let mut net = SuperNet::build(&SpaceConfig::new(n, 1, c, 1, 2), &ops, &BuildOptions::seed(0)).unwrap();
            net.set_active(ActiveArch { alpha: true, beta: true });
            let got = enumerate_costs(&net, h, h).unwrap();
            let want = darts_cost(n as u64, p as u64, k as u64, c as u64, c as u64, h as u64, h as u64);
            if !got.same_counts(&want) {
                mismatches.push(format!("darts n={n} p={p}"));
            }
        }
        let net = SuperNet::build(&SpaceConfig::new(n, 1, c, 1, 2), &[OperatorKind::SkipConnect.into()], &BuildOptions::seed(0)).unwrap();
        if !enumerate_costs(&net, h, h).unwrap().same_counts(&ftso_cost(n as u64, c as u64, h as u64, h as u64)) {
            mismatches.push(format!("ftso n={n}"));
        }
    }
    let d = darts_cost(7, 8, 5, 512, 512, 32, 32);
    let f = ftso_cost(7, 512, 32, 32);
    let (pr, fr) = (param_ratio(&d, &f), flop_ratio(&d, &f));
    let pr_s = format!("{pr:.1e}");
    let fr_s = format!("{fr:.1e}");
    let secs = started.elapsed().as_secs_f64();
    let ok = mismatches.is_empty() && pr_s == "1.9e-8" && fr_s == "9.8e-6" && secs < COST_SECONDS;
    (ok, format!("24+6 configs, mismatches {mismatches:?}; params ratio {pr_s}, FLOPs ratio {fr_s}; {secs:.2}s < {COST_SECONDS}s"))
}

// ---------- criterion 3: operation counts ----------

fn criterion_3() -> Outcome {
    let space = SpaceConfig::new(7, 1, 2, 1, 2);
    let all: Vec<OpSpec> = OperatorKind::ALL.iter().map(|&o| o.into()).collect();
    let darts = SuperNet::build(&space, &all, &BuildOptions::seed(0)).unwrap().cells[0].operator_instances();
    let skip = SuperNet::build(&space, &[OperatorKind::SkipConnect.into()], &BuildOptions::seed(0)).unwrap();
    let topo = skip.cells[0].operator_instances();
    let mut opts = BuildOptions::seed(0);
    opts.topology = Some(derive_genotype(&skip.arch_params(), 2).unwrap());
    let op = SuperNet::build(&space, &all, &opts).unwrap().cells[0].operator_instances();
    let (n, p) = (7, 8);
    let ok = (darts, topo, op) == (112, 14, 64) && darts == (n * n - 3 * n) / 2 * p && topo == n * (n - 3) / 2 && op == 2 * (n - 3) * p;
    (ok, format!("instances per cell {darts} / {topo} / {op}, expected 112 / 14 / 64"))
}

// ---------- criterion 4: derivation invariants ----------

fn valid_structure(g: &Genotype, nodes: usize) -> bool {
    [CellType::Normal, CellType::Reduce].iter().all(|&t| {
        let es: &[GenoEdge] = g.edges(t);
        let acyclic = es.iter().all(|e| e.src < e.dst);
        let no_none = es.iter().all(|e| e.op != OperatorKind::Zero);
        let degree = (2..nodes - 1).all(|j| es.iter().filter(|e| e.dst == j).count() == 2);
        acyclic && no_none && degree && es.len() == 2 * (nodes - 3)
    })
}

fn criterion_4() -> Outcome {
    let mut bad = 0;
    let transforms: [fn(f64) -> f64; 3] = [|v| 3.0 * v - 7.0, |v| v.exp(), |v| v * v * v + 0.5 * v];
    for s in 0..DERIVE_SAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let nodes = rng.random_range(4..10);
        let mut arch = ArchParams::zeros(nodes, &OperatorKind::ALL);
        for t in [CellType::Normal, CellType::Reduce] {
            let c = arch.cell_mut(t);
            c.beta.iter_mut().for_each(|b| *b = rng.random_range(-2.0..2.0));
            c.alpha.iter_mut().flatten().for_each(|a| *a = rng.random_range(-2.0..2.0));
        }
        let g = derive_genotype(&arch, 2).unwrap();
        let mut ok = valid_structure(&g, nodes) && g.validate().is_ok();
        for f in transforms {
            let mut w = arch.clone();
            for t in [CellType::Normal, CellType::Reduce] {
                let c = w.cell_mut(t);
                c.beta.iter_mut().for_each(|b| *b = f(*b));
                c.alpha.iter_mut().flatten().for_each(|a| *a = f(*a));
            }
            ok &= derive_genotype(&w, 2).unwrap() == g;
        }
        bad += usize::from(!ok);
    }
    (bad == 0, format!("{DERIVE_SAMPLES} random ArchParams, {bad} violations (validity + 3 monotone transforms)"))
}

// ---------- criterion 5: search efficiency ----------

fn criterion_5() -> Outcome {
    let data = common::blobs(10, 5000, 3, 32, 1.0, 5);
    let space = SpaceConfig::new(7, 1, 4, 3, 10);
    let epoch = SearchConfig::new(space.clone(), SearchBudget::epochs(1, 32), 5);
    let t = Instant::now();
    let topo = topology_search(&data, &epoch, &[OperatorKind::SkipConnect]).unwrap();
    let topo_secs = t.elapsed().as_secs_f64();
    let all: Vec<OpSpec> = OperatorKind::ALL.iter().map(|&o| o.into()).collect();
    let t = Instant::now();
    let darts = darts_baseline_search(&data, &epoch, &all).unwrap();
    let darts_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let one = topology_search(&data, &SearchConfig::new(space, SearchBudget::iterations(1, 32), 5), &[OperatorKind::SkipConnect]).unwrap();
    let one_secs = t.elapsed().as_secs_f64();
    let ratio = darts_secs / topo_secs;
    let floor = SPEEDUP_FLOOR * (1.0 - SPEEDUP_TOLERANCE);
    let ok = topo.steps() == darts.steps() && one.steps() == 1 && ratio >= floor && one_secs < ONE_ITER_SECONDS;
    (
        ok,
        format!(
            "{} steps each: topology {topo_secs:.2}s, joint {darts_secs:.1}s, speed-up {ratio:.1}x (floor {SPEEDUP_FLOOR}x, pass at >= {floor}x); one-iteration topology {one_secs:.3}s < {ONE_ITER_SECONDS}s",
            topo.steps()
        ),
    )
}

// ---------- criterion 6: end-to-end quality ----------

fn random_topology(nodes: usize, seed: u64) -> Genotype {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA5E);
    let mut section = || {
        let mut es = Vec::new();
        for dst in 2..nodes - 1 {
            let a = rng.random_range(0..dst);
            let mut b = rng.random_range(0..dst - 1);
            if b >= a {
                b += 1;
            }
            for src in [a.min(b), a.max(b)] {
                es.push(GenoEdge { src, dst, op: OperatorKind::SepConv3x3 });
            }
        }
        es
    };
    let normal = section();
    let reduce = section();
    Genotype { normal, reduce }
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let mut ftso = Vec::new();
    let mut baseline = Vec::new();
    for seed in 0..QUALITY_SEEDS {
        let data = common::blobs(2, 400, 1, 8, 1.0, seed);
        let cfg = SearchConfig::new(SpaceConfig::new(7, 3, 4, 1, 2), SearchBudget::epochs(1, 32), seed);
        let topo = topology_search(&data, &cfg, &[OperatorKind::SkipConnect]).unwrap().genotype;
        let g = direct_replace(&topo, OperatorKind::SepConv3x3).unwrap();
        let eval = EvalConfig { cells: 3, init_channels: 4, epochs: 20, seed, ..EvalConfig::default() };
        ftso.push(evaluate_architecture(&g, &data, &eval).unwrap().test_acc);
        baseline.push(evaluate_architecture(&random_topology(7, seed), &data, &eval).unwrap().test_acc);
    }
    let n = QUALITY_SEEDS as f64;
    let diffs: Vec<f64> = ftso.iter().zip(&baseline).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let (mf, mb) = (ftso.iter().sum::<f64>() / n, baseline.iter().sum::<f64>() / n);
    let secs = started.elapsed().as_secs_f64();
    let ok = mf >= mb - se && mean + se >= 0.0 && secs < 1800.0;
    (
        ok,
        format!("{QUALITY_SEEDS} seeds: mean test acc two-phase {mf:.4} vs random topology {mb:.4}; paired diff {mean:+.4} ± {se:.4} (1 SE); {secs:.0}s"),
    )
}

// ---------- criterion 7: Hessian diagnostic ----------

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, seed) in [(2, 0), (10, 1), (20, 2), (35, 3), (50, 4)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = nalgebra::DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let a = (&a + a.transpose()) * 0.5;
        let want = a.clone().symmetric_eigen().eigenvalues.iter().fold(0.0f64, |x: f64, v: &f64| x.max(v.abs()));
        let grad = |t: &[f64]| Ok((&a * nalgebra::DVector::from_column_slice(t)).as_slice().to_vec());
        let got = hessian_max_eigenvalue(grad, &vec![0.1; m], 5000, 1e-12, seed).unwrap().value;
        worst = worst.max((got - want).abs());
    }
    let data = common::small();
    let mut cfg = SearchConfig::new(SpaceConfig::new(5, 3, 4, 1, 2), SearchBudget::epochs(2, 16), 1);
    cfg.eigen_every = 1;
    cfg.eigen_iters = 10;
    cfg.hyper.arch_lr = 0.01;
    let r = topology_search(&data, &cfg, &[OperatorKind::SkipConnect]).unwrap();
    let finite = r.eigen.iter().all(|e| e.value.is_finite());
    let ok = worst < EIGEN_TOL && finite && r.eigen.len() == r.steps();
    let (first, last) = (r.eigen.first().map_or(f64::NAN, |e| e.value), r.eigen.last().map_or(f64::NAN, |e| e.value));
    (
        ok,
        format!(
            "quadratics m<=50 max |err| {worst:.1e} < {EIGEN_TOL:.0e}; search trace {} checkpoints all finite={finite} (first {first:.3e}, last {last:.3e}, trend reported only)",
            r.eigen.len()
        ),
    )
}

// ---------- criterion 8: tabular harness ----------

fn criterion_8() -> Outcome {
    let mono = monotone_table();
    let exact = (0..BENCH_SEEDS)
        .filter(|&s| tabular_search(Policy::Ftso { gradient: false }, "cifar10", &mono, 100, s).unwrap().regret == 0.0)
        .count();
    let mut wins = 0;
    let mut free_darts = 0.0;
    let mut free_ftso = 0.0;
    for s in 0..BENCH_SEEDS {
        let t = skip_biased_table(s);
        let darts = tabular_search(Policy::Darts1st, "cifar10", &t, 100, s).unwrap();
        let ftso = tabular_search(Policy::Ftso { gradient: false }, "cifar10", &t, 100, s).unwrap();
        let ftso_g = tabular_search(Policy::Ftso { gradient: true }, "cifar10", &t, 100, s).unwrap();
        wins += usize::from(darts.regret >= ftso.regret);
        free_darts += parameter_free_fraction(&darts.cell).unwrap();
        free_ftso += parameter_free_fraction(&ftso_g.cell).unwrap();
    }
    let n = BENCH_SEEDS as f64;
    let ok = exact == BENCH_SEEDS as usize && wins >= SKIP_BIASED_MIN_WINS;
    assert_eq!(Cell::uniform(CONV3), twophase_core::bench::exhaustive_best(&mono, 0));
    (
        ok,
        format!(
            "monotone table regret 0 in {exact}/{BENCH_SEEDS}; skip-biased: joint regret >= two-phase in {wins}/{BENCH_SEEDS} (need {SKIP_BIASED_MIN_WINS}); parameter-free share joint {:.2} vs two-phase gradient {:.2} (reported)",
            free_darts / n,
            free_ftso / n
        ),
    )
}

// ---------- criterion 9: determinism ----------

fn criterion_9() -> Outcome {
    let cfg = ExperimentConfig::parse(
        "seed = 11\ndata.samples = 160\ndata.size = 8\nspace.nodes = 5\nspace.cells = 3\nspace.init_channels = 4\n\
         topology.budget_unit = iter\ntopology.budget = 3\noperator.budget_unit = iter\noperator.budget = 2\nsearch.batch_size = 16\n\
         search.eigen_every = 1\nsearch.eigen_iters = 3\nstrategy = gradient\neval.cells = 3\neval.init_channels = 4\neval.epochs = 2\neval.batch_size = 16\n",
    )
    .unwrap();
    assert_eq!(cfg.strategy, Strategy::Gradient);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".genotype") || name.ends_with(".jsonl") {
            compared += 1;
            if std::fs::read(a.path().join(&name)).unwrap() != std::fs::read(b.path().join(&name)).unwrap() {
                differing.push(name);
            }
        }
    }
    let bench_same = (0..3).all(|s| {
        let t = skip_biased_table(s);
        tabular_search(Policy::Darts2ndProxy, "cifar100", &t, 50, s).unwrap() == tabular_search(Policy::Darts2ndProxy, "cifar100", &t, 50, s).unwrap()
    });
    let ok = differing.is_empty() && compared >= 6 && bench_same;
    (ok, format!("{compared} genotype/JSONL files compared across two runs, differing {differing:?}; bench replay identical={bench_same}"))
}

/// Matthew-effect observable on the real engine: share of parameter-free
/// operators picked by a short joint search vs operator search on its
/// pruned topology, equal seeds. Printed only.
fn matthew_effect() -> String {
    let data = common::small();
    let all: Vec<OpSpec> = OperatorKind::ALL.iter().map(|&o| o.into()).collect();
    let free = |g: &Genotype| {
        let es: Vec<&GenoEdge> = g.normal.iter().chain(&g.reduce).collect();
        es.iter().filter(|e| !e.op.has_weights(1)).count() as f64 / es.len() as f64
    };
    let (mut joint, mut two) = (0.0, 0.0);
    for seed in 0..5 {
        let cfg = SearchConfig::new(SpaceConfig::new(5, 1, 4, 1, 2), SearchBudget::iterations(4, 16), seed);
        let mut c = cfg.clone();
        c.hyper.arch_lr = 0.05;
        joint += free(&darts_baseline_search(&data, &c, &all).unwrap().genotype);
        let topo = topology_search(&data, &c, &[OperatorKind::SkipConnect]).unwrap().genotype;
        two += free(&operator_search(&topo, &data, &c, &all).unwrap().genotype);
    }
    format!("info: parameter-free share over 5 seeds, joint search {:.2} vs operator search on pruned topology {:.2}", joint / 5.0, two / 5.0)
}

/// Writes past the test harness's output capture, so the lines show up in a
/// plain `cargo test` log too.
fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", criterion_1),
        ("cost-model oracle equivalence", criterion_2),
        ("operation-count laws", criterion_3),
        ("derivation invariants", criterion_4),
        ("two-phase search efficiency", criterion_5),
        ("end-to-end quality", criterion_6),
        ("Hessian diagnostic", criterion_7),
        ("tabular harness", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        report(&format!("[{}] criterion {}: {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1));
        if !ok {
            failed.push(i + 1);
        }
    }
    report(&matthew_effect());
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
