mod common;

use std::time::Instant;

use common::{blobs, linear_probe_accuracy, small};
use twophase_core::data::{epoch_batches, Split};
use twophase_core::engine::{
    darts_baseline_search, direct_replace, evaluate_architecture, forward_loss, operator_search, topology_search, EvalConfig, Hyper,
    SearchBudget, SearchConfig, Searcher,
};
use twophase_core::supernet::{build_supernet, BuildOptions};
use twophase_core::{CellType, CoreError, Genotype, OpSpec, OperatorKind, SpaceConfig, SuperNet};

fn space() -> SpaceConfig {
    SpaceConfig::new(5, 1, 4, 1, 2)
}

fn cfg(budget: SearchBudget) -> SearchConfig {
    SearchConfig::new(space(), budget, 7)
}

fn all_ops() -> Vec<OpSpec> {
    OperatorKind::ALL.iter().map(|&k| k.into()).collect()
}

#[test]
fn skip_only_topology_search_touches_no_kernel_weights() {
    let data = small();
    // three cells put reduction (factorized-reduce skip) edges in the stack
    let mut c = SearchConfig::new(SpaceConfig::new(5, 3, 4, 1, 2), SearchBudget::iterations(3, 16), 3);
    c.hyper.arch_lr = 0.01;
    let r = topology_search(&data, &c, &[OperatorKind::SkipConnect]).unwrap();
    assert_eq!(r.kernel_params, 0);
    assert!(r.trace.iter().all(|s| !s.weight_step));
    assert!(!r.active.alpha && r.active.beta);
    let moved = r.arch.normal.beta.iter().chain(&r.arch.reduce.beta).any(|b| *b != 0.0);
    assert!(moved, "β should receive updates");
    assert!(r.arch.normal.alpha.iter().chain(&r.arch.reduce.alpha).flatten().all(|a| *a == 0.0));
}

#[test]
fn one_iteration_budget_runs_one_step() {
    let r = topology_search(&small(), &cfg(SearchBudget::iterations(1, 16)), &[OperatorKind::SkipConnect]).unwrap();
    assert_eq!(r.steps(), 1);
    assert_eq!(r.trace.len(), 1);
}

#[test]
fn epoch_budget_counts_whole_passes() {
    let data = small();
    // 50 search-train and 50 search-val images at batch 16: three full batches plus a remainder of 2
    let r = topology_search(&data, &cfg(SearchBudget::epochs(2, 16)), &[OperatorKind::SkipConnect]).unwrap();
    assert_eq!(data.split(Split::SearchTrain).len(), 50);
    assert_eq!(r.steps(), 8);
    assert_eq!(r.trace.last().unwrap().epoch, 1);
}

#[test]
fn zero_budget_and_empty_data_are_errors() {
    let data = small();
    assert!(matches!(
        topology_search(&data, &cfg(SearchBudget::iterations(0, 16)), &[OperatorKind::SkipConnect]),
        Err(CoreError::Config(_))
    ));
    let tiny = blobs(2, 4, 1, 8, 1.0, 0);
    assert!(matches!(
        topology_search(&tiny, &cfg(SearchBudget::iterations(1, 16)), &[OperatorKind::SkipConnect]),
        Err(CoreError::Data(_))
    ));
}

#[test]
fn topology_search_is_deterministic() {
    let data = small();
    let mut c = cfg(SearchBudget::epochs(1, 16));
    c.hyper.arch_lr = 0.05;
    let a = topology_search(&data, &c, &[OperatorKind::SkipConnect]).unwrap();
    let b = topology_search(&data, &c, &[OperatorKind::SkipConnect]).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.arch, b.arch);
}

#[test]
fn other_topology_operators_are_supported() {
    let data = small();
    let c = cfg(SearchBudget::iterations(2, 16));
    let pool = topology_search(&data, &c, &[OperatorKind::MaxPool3x3]).unwrap();
    assert!(pool.trace.iter().all(|s| !s.weight_step));
    let sep = topology_search(&data, &c, &[OperatorKind::SepConv3x3]).unwrap();
    assert!(sep.trace.iter().all(|s| s.weight_step));
    assert!(sep.kernel_params > 0);
    pool.genotype.validate().unwrap();
    sep.genotype.validate().unwrap();
}

fn topology() -> Genotype {
    topology_search(&small(), &cfg(SearchBudget::iterations(2, 16)), &[OperatorKind::SkipConnect]).unwrap().genotype
}

#[test]
fn single_candidate_operator_search_assigns_it_everywhere() {
    let topo = topology();
    let r = operator_search(&topo, &small(), &cfg(SearchBudget::iterations(2, 16)), &[OperatorKind::AvgPool3x3.into()]).unwrap();
    assert_eq!(r.genotype, topo.relabel(OperatorKind::AvgPool3x3));
}

#[test]
fn operator_search_instance_count() {
    let topo = SuperNet::build(&SpaceConfig::new(7, 1, 4, 1, 2), &[OperatorKind::SkipConnect.into()], &BuildOptions::seed(0))
        .map(|n| twophase_core::supernet::derive_genotype(&n.arch_params(), 2).unwrap())
        .unwrap();
    let mut opts = BuildOptions::seed(0);
    opts.topology = Some(topo);
    let net = SuperNet::build(&SpaceConfig::new(7, 1, 4, 1, 2), &all_ops(), &opts).unwrap();
    let per_cell: usize = net.cells[0].edges.iter().map(|e| e.ops.len()).sum();
    assert_eq!(per_cell, 64);
    assert_eq!(per_cell, 2 * (7 - 3) * 8);
}

#[test]
fn frozen_alpha_picks_first_real_operator() {
    let topo = topology();
    let mut c = cfg(SearchBudget::iterations(2, 16));
    c.hyper.arch_lr = 0.0;
    let r = operator_search(&topo, &small(), &c, &all_ops()).unwrap();
    assert_eq!(r.genotype, topo.relabel(OperatorKind::ALL[0]));
    assert!(r.active.alpha && r.active.beta);
}

#[test]
fn operator_search_rejects_malformed_topology() {
    let mut topo = topology();
    topo.normal.pop();
    assert!(operator_search(&topo, &small(), &cfg(SearchBudget::iterations(1, 16)), &all_ops()).is_err());
    assert!(direct_replace(&topo, OperatorKind::SepConv3x3).is_err());
}

#[test]
fn direct_replace_examples() {
    let topo = topology();
    let g = direct_replace(&topo, OperatorKind::SepConv3x3).unwrap();
    assert_eq!(g.normal.len() + g.reduce.len(), 8);
    assert!(g.normal.iter().chain(&g.reduce).all(|e| e.op == OperatorKind::SepConv3x3));
    assert_eq!(direct_replace(&topo, OperatorKind::SkipConnect).unwrap(), topo);
    assert!(direct_replace(&topo, OperatorKind::Zero).is_err());

    let big = SuperNet::build(&SpaceConfig::new(7, 1, 4, 1, 2), &[OperatorKind::SkipConnect.into()], &BuildOptions::seed(0)).unwrap();
    let big = twophase_core::supernet::derive_genotype(&big.arch_params(), 2).unwrap();
    let t = Instant::now();
    let g = direct_replace(&big, OperatorKind::SepConv3x3).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1e-3);
    assert_eq!(g.normal.len(), 8);
}

#[test]
fn darts_baseline_counts_and_single_step() {
    let net = build_supernet(&SpaceConfig::new(7, 1, 4, 1, 2), &OperatorKind::ALL).unwrap();
    assert_eq!(net.operator_instances(), 112);
    assert_eq!(net.operator_instances(), (7 * 7 - 3 * 7) / 2 * 8);

    let r = darts_baseline_search(&small(), &cfg(SearchBudget::iterations(1, 16)), &all_ops()).unwrap();
    assert_eq!(r.trace.len(), 1);
    assert!(r.trace[0].weight_step);
    assert!(r.active.alpha && r.active.beta);
    assert!(r.arch.normal.alpha.iter().flatten().any(|a| *a != 0.0));
    assert!(r.arch.normal.beta.iter().any(|b| *b != 0.0));
}

#[test]
fn darts_with_skip_only_reduces_to_topology_search() {
    let data = small();
    let mut c = cfg(SearchBudget::epochs(1, 16));
    c.hyper.arch_lr = 0.05;
    let topo = topology_search(&data, &c, &[OperatorKind::SkipConnect]).unwrap();
    let darts = darts_baseline_search(&data, &c, &[OperatorKind::SkipConnect.into()]).unwrap();
    assert_eq!(topo.trace, darts.trace);
    assert_eq!(topo.genotype, darts.genotype);
    assert_eq!(topo.arch, darts.arch);
}

fn searcher(hyper: Hyper) -> (Searcher, twophase_core::data::Batch, twophase_core::data::Batch) {
    let data = small();
    let net = SuperNet::build(&space(), &all_ops(), &BuildOptions::seed(2)).unwrap();
    let tb = data.batch(&epoch_batches(data.split(Split::SearchTrain), 16, 0, 0)[0]);
    let vb = data.batch(&epoch_batches(data.split(Split::SearchVal), 16, 0, 0)[0]);
    (Searcher::new(net, hyper, 10), tb, vb)
}

#[test]
fn zero_learning_rates_leave_parameters_unchanged() {
    let hyper = Hyper {
        arch_lr: 0.0,
        w_lr: 0.0,
        w_lr_min: 0.0,
        ..Hyper::default()
    };
    let (mut s, tb, vb) = searcher(hyper);
    let (w0, a0) = (s.net.weights.clone(), s.net.arch.clone());
    let r = s.bilevel_step(&tb, &vb).unwrap();
    assert!(r.val_loss.is_finite() && r.train_loss.is_finite() && r.weight_step);
    for ((_, a), (_, b)) in s.net.weights.iter().zip(w0.iter()) {
        assert_eq!(a.value, b.value);
    }
    for ((_, a), (_, b)) in s.net.arch.iter().zip(a0.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn small_architecture_step_descends_validation_loss() {
    let hyper = Hyper {
        arch_lr: 1e-4,
        arch_wd: 0.0,
        w_lr: 0.0,
        w_lr_min: 0.0,
        ..Hyper::default()
    };
    let (mut s, _, vb) = searcher(hyper);
    let before = forward_loss(&s.net, &s.net.arch, &vb).unwrap();
    let r = s.bilevel_step(&vb, &vb).unwrap();
    assert_eq!(r.val_loss, before);
    let after = forward_loss(&s.net, &s.net.arch, &vb).unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn skip_only_step_leaves_weights_untouched() {
    let data = small();
    let net = SuperNet::build(&SpaceConfig::new(5, 1, 4, 1, 2), &[OperatorKind::SkipConnect.into()], &BuildOptions::seed(1)).unwrap();
    let w0 = net.weights.clone();
    let mut s = Searcher::new(net, Hyper::default(), 4);
    let b = data.batch(&data.split(Split::SearchVal)[..8]);
    let r = s.bilevel_step(&b, &b).unwrap();
    assert!(!r.weight_step);
    for ((_, a), (_, z)) in s.net.weights.iter().zip(w0.iter()) {
        assert_eq!(a.value, z.value);
    }
    assert!(s.net.arch.value(s.net.beta_id(CellType::Normal)).data().iter().any(|v| *v != 0.0));
}

fn sep_genotype() -> Genotype {
    direct_replace(&topology(), OperatorKind::SepConv3x3).unwrap()
}

fn eval_cfg(epochs: usize) -> EvalConfig {
    EvalConfig {
        cells: 3,
        init_channels: 4,
        epochs,
        seed: 5,
        ..EvalConfig::default()
    }
}

#[test]
fn untrained_network_is_at_chance() {
    let data = blobs(2, 400, 1, 8, 1.0, 1);
    let r = evaluate_architecture(&sep_genotype(), &data, &eval_cfg(0)).unwrap();
    assert!(r.epochs.is_empty());
    assert!((r.test_acc - 0.5).abs() <= 0.1, "{}", r.test_acc);
}

#[test]
fn separable_data_is_learned() {
    let data = blobs(2, 400, 1, 8, 1.0, 1);
    let linear = linear_probe_accuracy(&data, 200, 0.5);
    assert!(linear >= 0.95, "linear probe {linear}");
    let r = evaluate_architecture(&sep_genotype(), &data, &eval_cfg(20)).unwrap();
    assert_eq!(r.epochs.len(), 20);
    assert!(r.test_acc >= 0.95, "{}", r.test_acc);
}

#[test]
fn evaluation_is_deterministic() {
    let data = blobs(2, 200, 1, 8, 1.0, 2);
    let a = evaluate_architecture(&sep_genotype(), &data, &eval_cfg(3)).unwrap();
    let b = evaluate_architecture(&sep_genotype(), &data, &eval_cfg(3)).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.test_acc, b.test_acc);
}

#[test]
fn class_count_mismatch_is_rejected() {
    let data = small();
    let c = EvalConfig {
        classes: Some(10),
        ..eval_cfg(1)
    };
    assert!(evaluate_architecture(&sep_genotype(), &data, &c).is_err());
    let mut s = cfg(SearchBudget::iterations(1, 16));
    s.space.classes = 3;
    assert!(topology_search(&data, &s, &[OperatorKind::SkipConnect]).is_err());
}
