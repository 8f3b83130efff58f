//! Persisted runs: each phase writes its artifacts into a run directory and
//! a finished phase is picked up again instead of re-run.
//!
//! ```text
//! config.txt          snapshot of the experiment config
//! topology.genotype   pruned topology
//! topology.jsonl      per-step losses of the topology phase
//! topology.arch.json  final α/β
//! genotype.genotype   searched or replaced genotype
//! operator.jsonl      per-step losses of gradient operator search (if run)
//! eval.jsonl          per-epoch accuracies
//! eigen.jsonl         Hessian eigenvalue checkpoints (if enabled)
//! trace.jsonl         all of the above traces, in phase order
//! report.json         final accuracies, genotype and cost counters
//! timing.json         wall-clock seconds per phase
//! ```
//!
//! Everything except `timing.json` is a deterministic function of the
//! config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Strategy};
use crate::data::{load_dataset, Dataset};
use crate::diag::pearson;
use crate::engine::{direct_replace, evaluate_architecture, operator_search, topology_search, EigenRecord, EpochRecord, EvalReport, PhaseResult, StepRecord};
use crate::error::{CoreError, Result};
use crate::genotype::Genotype;

pub const CONFIG_FILE: &str = "config.txt";
pub const TOPOLOGY_FILE: &str = "topology.genotype";
pub const GENOTYPE_FILE: &str = "genotype.genotype";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const EIGEN_FILE: &str = "eigen.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub topology: Genotype,
    pub genotype: Genotype,
    pub eval: Option<EvalReport>,
    /// Phase name and wall-clock seconds, `None` for phases resumed from disk.
    pub timing: Vec<(String, Option<f64>)>,
}

fn run_id(cfg: &ExperimentConfig) -> String {
    format!("seed-{}", cfg.seed)
}

fn write_jsonl<T: Serialize>(path: &Path, run: &str, phase: &str, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let mut v = serde_json::to_value(r)?;
        if let Value::Object(m) = &mut v {
            m.insert("run".into(), json!(run));
            m.insert("phase".into(), json!(phase));
        }
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_genotype(path: &Path) -> Result<Genotype> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    Genotype::parse(&text)
}

pub fn write_genotype(path: &Path, g: &Genotype) -> Result<()> {
    fs::write(path, g.serialize())?;
    Ok(())
}

/// Writes a failed phase's partial trace before handing the error back.
fn record_failure(dir: &Path, run: &str, phase: &str, err: CoreError) -> CoreError {
    if let CoreError::Divergence { trace, .. } = &err {
        let _ = write_jsonl(&dir.join(format!("{phase}.partial.jsonl")), run, phase, trace);
    }
    let _ = fs::write(dir.join(format!("{phase}.failed")), format!("{err}\n"));
    err
}

fn persist_phase(dir: &Path, run: &str, r: &PhaseResult) -> Result<()> {
    write_jsonl(&dir.join(format!("{}.jsonl", r.phase)), run, &r.phase, &r.trace)?;
    write_json(&dir.join(format!("{}.arch.json", r.phase)), &r.arch)?;
    if !r.eigen.is_empty() {
        write_jsonl(&dir.join(format!("{}.eigen.jsonl", r.phase)), run, &r.phase, &r.eigen)?;
    }
    Ok(())
}

/// Topology phase; artifacts go into `dir`.
pub fn run_topology(cfg: &ExperimentConfig, data: &Dataset, dir: &Path) -> Result<PhaseResult> {
    fs::create_dir_all(dir)?;
    let (c, _, _) = data.image_shape();
    let scfg = cfg.topology_search(c, data.classes);
    let run = run_id(cfg);
    let r = topology_search(data, &scfg, &cfg.topology_ops).map_err(|e| record_failure(dir, &run, "topology", e))?;
    persist_phase(dir, &run, &r)?;
    write_genotype(&dir.join(TOPOLOGY_FILE), &r.genotype)?;
    Ok(r)
}

/// Operator phase on `topology` by the configured strategy.
pub fn run_operator(cfg: &ExperimentConfig, topology: &Genotype, data: &Dataset, dir: &Path) -> Result<(Genotype, Option<PhaseResult>)> {
    fs::create_dir_all(dir)?;
    let run = run_id(cfg);
    let (g, phase) = match cfg.strategy {
        Strategy::Replace => (direct_replace(topology, cfg.replace_op)?, None),
        Strategy::Gradient => {
            let (c, _, _) = data.image_shape();
            let scfg = cfg.operator_search(c, data.classes);
            let r = operator_search(topology, data, &scfg, &cfg.operator_specs()).map_err(|e| record_failure(dir, &run, "operator", e))?;
            persist_phase(dir, &run, &r)?;
            (r.genotype.clone(), Some(r))
        }
    };
    write_genotype(&dir.join(GENOTYPE_FILE), &g)?;
    Ok((g, phase))
}

pub fn run_eval(cfg: &ExperimentConfig, g: &Genotype, data: &Dataset, dir: &Path) -> Result<EvalReport> {
    fs::create_dir_all(dir)?;
    let run = run_id(cfg);
    let report = evaluate_architecture(g, data, &cfg.eval_config()).map_err(|e| record_failure(dir, &run, "eval", e))?;
    write_jsonl(&dir.join(EVAL_FILE), &run, "eval", &report.epochs)?;
    Ok(report)
}

fn concat_files(dir: &Path, names: &[&str], out: &str) -> Result<()> {
    let mut all = String::new();
    for n in names {
        if let Ok(s) = fs::read_to_string(dir.join(n)) {
            all.push_str(&s);
        }
    }
    fs::write(dir.join(out), all)?;
    Ok(())
}

/// Topology search, operator assignment and evaluation, resuming any phase
/// whose output genotype already exists in `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    let data = load_dataset(&cfg.dataset_spec()?)?;
    let mut timing = Vec::new();

    let topo_path = dir.join(TOPOLOGY_FILE);
    let topology = if topo_path.exists() {
        timing.push(("topology".to_string(), None));
        read_genotype(&topo_path)?
    } else {
        let r = run_topology(cfg, &data, dir)?;
        timing.push(("topology".to_string(), Some(r.seconds)));
        r.genotype
    };

    let geno_path = dir.join(GENOTYPE_FILE);
    let genotype = if geno_path.exists() {
        timing.push(("operator".to_string(), None));
        read_genotype(&geno_path)?
    } else {
        let t = Instant::now();
        let (g, phase) = run_operator(cfg, &topology, &data, dir)?;
        let secs = phase.map_or_else(|| t.elapsed().as_secs_f64(), |p| p.seconds);
        timing.push(("operator".to_string(), Some(secs)));
        g
    };

    let report_path = dir.join(REPORT_FILE);
    let eval = if report_path.exists() {
        timing.push(("eval".to_string(), None));
        let v: Value = serde_json::from_str(&fs::read_to_string(&report_path)?)?;
        serde_json::from_value(v["eval"].clone()).ok()
    } else {
        let report = run_eval(cfg, &genotype, &data, dir)?;
        timing.push(("eval".to_string(), Some(report.seconds)));
        let mut body = json!({
            "run": run_id(cfg),
            "topology": topology.serialize(),
            "genotype": genotype.serialize(),
            "test_acc": report.test_acc,
            "val_acc": report.val_acc,
            "train_acc": report.train_acc,
            "params": report.params,
            "eval": report,
        });
        if let Value::Object(m) = &mut body {
            if let Some(Value::Object(e)) = m.get_mut("eval") {
                e.remove("seconds");
            }
        }
        write_json(&report_path, &body)?;
        Some(report)
    };

    concat_files(dir, &["topology.jsonl", "operator.jsonl", EVAL_FILE], TRACE_FILE)?;
    concat_files(dir, &["topology.eigen.jsonl", "operator.eigen.jsonl"], EIGEN_FILE)?;
    let times: serde_json::Map<String, Value> = timing.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    write_json(&dir.join(TIMING_FILE), &Value::Object(times))?;
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        topology,
        genotype,
        eval,
        timing,
    })
}

/// Runs seeds `cfg.seed .. cfg.seed + n` in parallel, each in `dir/seed-<s>`.
pub fn run_seeds(cfg: &ExperimentConfig, dir: &Path, n: usize) -> Vec<Result<RunRecord>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n as u64)
            .map(|i| {
                let mut c = cfg.clone();
                c.seed = cfg.seed + i;
                let d = dir.join(format!("seed-{}", c.seed));
                scope.spawn(move || run_experiment(&c, &d))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CoreError::Numerical("run thread panicked".into()))))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagSummary {
    pub eigen_points: usize,
    pub epochs: usize,
    /// Correlation of validation and test accuracy across epochs, when defined.
    pub val_test_pearson: Option<f64>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Turns a run directory's traces into `eigen.csv` and `accuracy.csv`.
pub fn diag_run(dir: &Path) -> Result<DiagSummary> {
    if !dir.join(CONFIG_FILE).exists() && !dir.join(TOPOLOGY_FILE).exists() {
        return Err(CoreError::Data(format!("{} is not a run directory", dir.display())));
    }
    #[derive(Deserialize)]
    struct Eig {
        phase: String,
        #[serde(flatten)]
        rec: EigenRecord,
    }
    let mut eig: Vec<Eig> = read_jsonl(&dir.join(EIGEN_FILE))?;
    if eig.is_empty() {
        for phase in ["topology", "operator"] {
            eig.extend(read_jsonl::<Eig>(&dir.join(format!("{phase}.eigen.jsonl")))?);
        }
    }
    let mut csv = String::from("phase,step,epoch,eigenvalue,iterations,converged\n");
    for e in &eig {
        let r = &e.rec;
        csv.push_str(&format!("{},{},{},{},{},{}\n", e.phase, r.step, r.epoch, r.value, r.iterations, r.converged));
    }
    fs::write(dir.join("eigen.csv"), csv)?;

    let epochs: Vec<EpochRecord> = read_jsonl(&dir.join(EVAL_FILE))?;
    let mut csv = String::from("epoch,train_loss,train_acc,val_acc,test_acc\n");
    for e in &epochs {
        csv.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_acc, e.test_acc));
    }
    fs::write(dir.join("accuracy.csv"), csv)?;
    let val: Vec<f64> = epochs.iter().map(|e| e.val_acc).collect();
    let test: Vec<f64> = epochs.iter().map(|e| e.test_acc).collect();
    Ok(DiagSummary {
        eigen_points: eig.len(),
        epochs: epochs.len(),
        val_test_pearson: pearson(&val, &test).ok(),
    })
}

/// Loss trace of a persisted phase.
pub fn read_trace(dir: &Path, phase: &str) -> Result<Vec<StepRecord>> {
    read_jsonl(&dir.join(format!("{phase}.jsonl")))
}
