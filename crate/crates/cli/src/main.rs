//! `twophase`: command-line front end for the two-phase architecture search.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use twophase_core::bench::{self, dataset_index, load_table, monotone_table, skip_biased_table, tabular_search, write_table, AccuracyTable, Policy};
use twophase_core::config::ExperimentConfig;
use twophase_core::cost::{darts_cost, enumerate_costs, flop_ratio, ftso_cost, param_ratio, CostReport};
use twophase_core::data::load_dataset;
use twophase_core::runner::{self, read_genotype, write_genotype, GENOTYPE_FILE, TOPOLOGY_FILE};
use twophase_core::supernet::{derive_genotype, ActiveArch, BuildOptions};
use twophase_core::{ArchParams, CoreError, ErrorClass, OpSpec, OperatorKind, Result, SpaceConfig, SuperNet};

#[derive(Parser)]
#[command(name = "twophase", version, about = "Two-phase differentiable architecture search: topology first, operators second")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the cell topology with the topology operator set.
    SearchTopology(Common),
    /// Assign operators to a searched topology (replace or gradient search).
    SearchOperators {
        #[command(flatten)]
        common: Common,
        /// Topology genotype; defaults to <out>/topology.genotype.
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Derive a genotype from saved architecture parameters.
    Derive {
        /// `*.arch.json` written by a search phase.
        #[arg(long)]
        arch: PathBuf,
        /// In-edges kept per intermediate node.
        #[arg(long, default_value_t = 2)]
        retain: usize,
        /// Relabel every edge with this operator.
        #[arg(long)]
        replace_op: Option<String>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a genotype from scratch and report accuracies.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Genotype to evaluate; defaults to <out>/genotype.genotype.
        #[arg(long)]
        genotype: Option<PathBuf>,
    },
    /// Full pipeline: topology, operators, evaluation.
    Run {
        #[command(flatten)]
        common: Common,
        /// Independent runs with consecutive seeds, each in <out>/seed-<s>.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Analytic vs enumerated search cost of the joint and the topology-only super-net.
    Cost(CostArgs),
    /// Search policies on a tabular accuracy benchmark.
    Bench(BenchArgs),
    /// Eigenvalue and accuracy CSVs from a run directory.
    Diag {
        run_dir: PathBuf,
    },
}

/// Flags shared by the commands that execute searches.
#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Unit of --budget for both search phases.
    #[arg(long, value_enum)]
    budget_unit: Option<Unit>,
    #[arg(long)]
    budget: Option<usize>,
    /// `replace` or `gradient`.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated topology operator set, e.g. `skip_connect`.
    #[arg(long)]
    topo_ops: Option<String>,
    /// Operator used by the replace strategy.
    #[arg(long)]
    replace_op: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Iter,
    Epoch,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 7)]
    nodes: u64,
    /// Candidate operators per edge in the joint super-net.
    #[arg(long, default_value_t = 8)]
    ops: u64,
    #[arg(long, default_value_t = 5)]
    kernel: u64,
    #[arg(long, default_value_t = 512)]
    channels: u64,
    #[arg(long, default_value_t = 32)]
    size: u64,
    /// Channels of the super-nets built for the enumerated column.
    #[arg(long, default_value_t = 4)]
    enum_channels: usize,
    #[arg(long, default_value_t = 8)]
    enum_size: usize,
    /// JSON report path.
    #[arg(long, default_value = "cost.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Monotone,
    SkipBiased,
}

#[derive(Args)]
struct BenchArgs {
    /// Accuracy table (`cell<TAB>acc1<TAB>acc2<TAB>acc3`); a synthetic table is used when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Synthetic table kind; skip-biased tables are drawn per seed.
    #[arg(long, value_enum, default_value = "skip-biased")]
    synthetic: Synthetic,
    /// Comma-separated policies, or `all`.
    #[arg(long, default_value = "all")]
    policy: String,
    #[arg(long, default_value = "cifar10")]
    dataset: String,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Search steps (relaxation policies) or samples (random).
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// JSONL output, one line per (policy, seed).
    #[arg(long, default_value = "bench.jsonl")]
    out: PathBuf,
    /// Also write the table used for the first seed.
    #[arg(long)]
    write_table: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(u) = self.budget_unit {
            let u = match u {
                Unit::Iter => "iter",
                Unit::Epoch => "epoch",
            };
            cfg.set("topology.budget_unit", u)?;
            cfg.set("operator.budget_unit", u)?;
        }
        if let Some(b) = self.budget {
            cfg.set("topology.budget", &b.to_string())?;
            cfg.set("operator.budget", &b.to_string())?;
        }
        if let Some(s) = &self.strategy {
            cfg.set("strategy", s)?;
        }
        if let Some(o) = &self.topo_ops {
            cfg.set("topology.ops", o)?;
        }
        if let Some(o) = &self.replace_op {
            cfg.set("replace_op", o)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| CoreError::Config(format!("--set {kv:?}: expected key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(format!("runs/seed-{}", cfg.seed)))
    }
}

fn snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(runner::CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

fn search_topology(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let dir = c.out_dir(&cfg);
    let data = load_dataset(&cfg.dataset_spec()?)?;
    snapshot(&cfg, &dir)?;
    let r = runner::run_topology(&cfg, &data, &dir)?;
    print!("{}", r.genotype.serialize());
    println!("# {} steps in {:.3}s, written to {}", r.steps(), r.seconds, dir.join(TOPOLOGY_FILE).display());
    Ok(())
}

fn search_operators(c: &Common, topology: Option<&Path>) -> Result<()> {
    let cfg = c.config()?;
    let dir = c.out_dir(&cfg);
    let topo = read_genotype(&topology.map_or_else(|| dir.join(TOPOLOGY_FILE), Path::to_path_buf))?;
    let data = load_dataset(&cfg.dataset_spec()?)?;
    snapshot(&cfg, &dir)?;
    let (g, phase) = runner::run_operator(&cfg, &topo, &data, &dir)?;
    print!("{}", g.serialize());
    match phase {
        Some(p) => println!("# gradient operator search, {} steps in {:.3}s", p.steps(), p.seconds),
        None => println!("# replaced every edge with {}", cfg.replace_op),
    }
    Ok(())
}

fn derive(arch: &Path, retain: usize, replace_op: Option<&str>, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(arch).map_err(|e| CoreError::Data(format!("{}: {e}", arch.display())))?;
    let params: ArchParams = serde_json::from_str(&text).map_err(|e| CoreError::Data(format!("{}: {e}", arch.display())))?;
    let mut g = derive_genotype(&params, retain)?;
    if let Some(op) = replace_op {
        g = g.relabel(op.parse()?);
    }
    match out {
        Some(p) => write_genotype(p, &g)?,
        None => print!("{}", g.serialize()),
    }
    Ok(())
}

fn eval(c: &Common, genotype: Option<&Path>) -> Result<()> {
    let cfg = c.config()?;
    let dir = c.out_dir(&cfg);
    let g = read_genotype(&genotype.map_or_else(|| dir.join(GENOTYPE_FILE), Path::to_path_buf))?;
    let data = load_dataset(&cfg.dataset_spec()?)?;
    snapshot(&cfg, &dir)?;
    let r = runner::run_eval(&cfg, &g, &data, &dir)?;
    let report = json!({
        "genotype": g.serialize(),
        "params": r.params,
        "train_acc": r.train_acc,
        "val_acc": r.val_acc,
        "test_acc": r.test_acc,
        "epochs": r.epochs.len(),
    });
    fs::write(dir.join("eval.json"), format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    println!("params {}  train {:.4}  val {:.4}  test {:.4}  ({:.1}s)", r.params, r.train_acc, r.val_acc, r.test_acc, r.seconds);
    Ok(())
}

fn run(c: &Common, seeds: usize) -> Result<()> {
    let cfg = c.config()?;
    let dir = c.out_dir(&cfg);
    let results = if seeds <= 1 {
        vec![runner::run_experiment(&cfg, &dir)]
    } else {
        runner::run_seeds(&cfg, &dir, seeds)
    };
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => {
                let acc = rec.eval.as_ref().map_or("-".to_string(), |e| format!("{:.4}", e.test_acc));
                let secs: Vec<String> = rec.timing.iter().map(|(p, s)| format!("{p} {}", s.map_or("resumed".into(), |s| format!("{s:.2}s")))).collect();
                println!("{}: test {acc}  [{}]", rec.dir.display(), secs.join(", "));
            }
            Err(e) => {
                eprintln!("run failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn enumerated(n: usize, ops: &[OpSpec], c: usize, size: usize, joint: bool) -> Result<CostReport> {
    let mut net = SuperNet::build(&SpaceConfig::new(n, 1, c, 1, 2), ops, &BuildOptions::seed(0))?;
    if joint {
        net.set_active(ActiveArch { alpha: true, beta: true });
    }
    enumerate_costs(&net, size, size)
}

fn cost(a: &CostArgs) -> Result<()> {
    let (n, p, k) = (a.nodes, a.ops, a.kernel);
    let (ec, es) = (a.enum_channels as u64, a.enum_size as u64);
    let small_darts = darts_cost(n, p, k, ec, ec, es, es);
    let small_ftso = ftso_cost(n, ec, es, es);
    let ops = vec![OpSpec::VanillaConv { kernel: k as usize }; p as usize];
    let enum_darts = enumerated(n as usize, &ops, a.enum_channels, a.enum_size, true)?;
    let enum_ftso = enumerated(n as usize, &[OperatorKind::SkipConnect.into()], a.enum_channels, a.enum_size, false)?;
    let full_darts = darts_cost(n, p, k, a.channels, a.channels, a.size, a.size);
    let full_ftso = ftso_cost(n, a.channels, a.size, a.size);

    let mut t = String::new();
    let _ = writeln!(t, "n={n} p={p} k={k}; enumerated on built cells with C={ec}, H=W={es}");
    let _ = writeln!(t, "{:<6} {:<10} {:>14} {:>14}  match", "model", "metric", "analytic", "enumerated");
    for (name, an, en) in [("joint", &small_darts, &enum_darts), ("ftso", &small_ftso, &enum_ftso)] {
        for (metric, x, y) in [
            ("params", an.trainable_params(), en.trainable_params()),
            ("flops", an.flops, en.flops),
            ("instances", an.operator_instances, en.operator_instances),
        ] {
            let _ = writeln!(t, "{name:<6} {metric:<10} {x:>14} {y:>14}  {}", if x == y { "yes" } else { "NO" });
        }
    }
    let (pr, fr) = (param_ratio(&full_darts, &full_ftso), flop_ratio(&full_darts, &full_ftso));
    let _ = writeln!(t, "ratio ftso/joint at C={}, H=W={}: params {pr:.1e}  flops {fr:.1e}", a.channels, a.size);
    print!("{t}");

    let report = json!({
        "nodes": n, "ops": p, "kernel": k,
        "channels": a.channels, "size": a.size,
        "analytic": {"joint": full_darts, "ftso": full_ftso},
        "param_ratio": pr,
        "flop_ratio": fr,
        "check": {
            "channels": ec, "size": es,
            "analytic": {"joint": small_darts, "ftso": small_ftso},
            "enumerated": {"joint": enum_darts, "ftso": enum_ftso},
            "match": small_darts.same_counts(&enum_darts) && small_ftso.same_counts(&enum_ftso),
        },
    });
    fs::write(&a.out, format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    Ok(())
}

fn parse_policies(s: &str) -> Result<Vec<Policy>> {
    if s == "all" {
        return Ok(vec![Policy::Ftso { gradient: false }, Policy::Ftso { gradient: true }, Policy::Darts1st, Policy::Darts2ndProxy, Policy::Random]);
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let policies = parse_policies(&a.policy)?;
    let d = dataset_index(&a.dataset)?;
    let loaded = a.table.as_deref().map(load_table).transpose()?;
    let table_for = |seed: u64| -> AccuracyTable {
        match (&loaded, a.synthetic) {
            (Some(t), _) => t.clone(),
            (None, Synthetic::Monotone) => monotone_table(),
            (None, Synthetic::SkipBiased) => skip_biased_table(seed),
        }
    };
    if let Some(p) = &a.write_table {
        write_table(p, &table_for(0))?;
    }
    let mut results = Vec::new();
    let mut lines = String::new();
    for seed in 0..a.seeds {
        let table = table_for(seed);
        for &p in &policies {
            let r = tabular_search(p, &a.dataset, &table, a.budget, seed)?;
            lines.push_str(&serde_json::to_string(&r)?);
            lines.push('\n');
            results.push(r);
        }
    }
    fs::write(&a.out, lines)?;
    println!("{:<16} {:>10} {:>10} {:>10} {:>6}", "policy", "accuracy", "regret", "param-free", "runs");
    for (policy, regret, n) in bench::summarize(&results) {
        let mine: Vec<_> = results.iter().filter(|r| r.policy == policy).collect();
        let acc = mine.iter().map(|r| r.accuracy[d]).sum::<f64>() / n as f64;
        let free = mine.iter().map(|r| bench::parameter_free_fraction(&r.cell)).sum::<Result<f64>>()? / n as f64;
        println!("{policy:<16} {acc:>10.3} {regret:>10.3} {free:>10.2} {n:>6}");
    }
    Ok(())
}

fn diag(dir: &Path) -> Result<()> {
    let s = runner::diag_run(dir)?;
    let r = s.val_test_pearson.map_or("undefined".to_string(), |r| format!("{r:.3}"));
    println!("{} eigenvalue checkpoints -> eigen.csv; {} epochs -> accuracy.csv; val/test pearson {r}", s.eigen_points, s.epochs);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SearchTopology(c) => search_topology(&c),
        Command::SearchOperators { common, topology } => search_operators(&common, topology.as_deref()),
        Command::Derive { arch, retain, replace_op, out } => derive(&arch, retain, replace_op.as_deref(), out.as_deref()),
        Command::Eval { common, genotype } => eval(&common, genotype.as_deref()),
        Command::Run { common, seeds } => run(&common, seeds),
        Command::Cost(a) => cost(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::Diag { run_dir } => diag(&run_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
