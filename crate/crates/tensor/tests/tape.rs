use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twophase_tensor::{Binding, ConvSpec, ParamSet, PoolSpec, Tape, Tensor, TensorError};

#[test]
fn identity_graph() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), false);
    assert_eq!(tape.value(x).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn softmax_of_equal_logits() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn one_by_one_convolution_scales() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, Some(b), ConvSpec::default()).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0; 4]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![0.3, -1.0, 4.0]), true);
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn square_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.backward(y).unwrap().wrt(x).item(), 6.0);
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    assert!(matches!(
        tape.backward(twophase_tensor::Tape::new().leaf(Tensor::scalar(1.0), true)),
        Err(TensorError::EmptyTape)
    ));
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
}

#[test]
fn unreachable_parameters_get_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let unused = tape.leaf(Tensor::from_vec(vec![1.0, 1.0]), true);
    let y = tape.scale(x, 3.0).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
}

#[test]
fn shape_errors_name_the_primitive() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let err = tape.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
    let err = tape.conv2d(x, w, None, ConvSpec::default()).unwrap_err().to_string();
    assert!(err.contains("conv2d"), "{err}");
    let err = tape.matmul(a, a).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
}

#[test]
fn max_pool_of_constant_is_constant() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 2, 4, 4], 1.5));
    let y = tape.max_pool2d(x, PoolSpec::new(3, 1, 1)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
    let z = tape.avg_pool2d(x, PoolSpec::new(3, 1, 1)).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
}

#[test]
fn flop_counter_counts_feature_maps_only() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::ones(&[2, 2, 3, 3]));
    let y = tape.conv2d(x, w, None, ConvSpec::new(1, 1, 1, 1)).unwrap();
    assert_eq!(tape.flops(), 9 * 2 * 16 * 2);
    tape.add(y, y).unwrap();
    assert_eq!(tape.flops(), 576 + 32);
    let v = tape.constant(Tensor::ones(&[8]));
    tape.add(v, v).unwrap();
    assert_eq!(tape.flops(), 608);
}

#[test]
fn binding_reuses_leaves_and_reports_zero_for_unused() {
    let mut set = ParamSet::new();
    let a = set.add("a", Tensor::scalar(2.0));
    let b = set.add("b", Tensor::from_vec(vec![1.0, 2.0]));
    let mut tape = Tape::new();
    let mut bind = Binding::new(&set);
    let va = bind.var(&mut tape, a);
    assert_eq!(bind.var(&mut tape, a), va);
    let y = tape.mul(va, va).unwrap();
    let grads = bind.gradients(&tape.backward(y).unwrap());
    assert_eq!(grads[0].item(), 4.0);
    assert_eq!(grads[1].data(), &[0.0, 0.0]);
    assert!(!bind.is_bound(b));
}

fn random_graph_value(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut rng);
    let w0 = Tensor::uniform(&[3, 1, 3, 3], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(x0, true);
    let w = tape.leaf(w0, true);
    let y = tape.conv2d(x, w, None, ConvSpec::new(1, 1, 1, 3)).unwrap();
    let (y, _) = tape.batch_norm(y, None, None, 1e-5).unwrap();
    let y = tape.relu(y).unwrap();
    let y = tape.max_pool2d(y, PoolSpec::new(3, 2, 1)).unwrap();
    let y = tape.global_avg_pool(y).unwrap();
    let l = tape.cross_entropy(y, &[0, 2]).unwrap();
    let g = tape.backward(l).unwrap();
    let mut out = tape.value(y).data().to_vec();
    out.push(tape.value(l).item());
    let mut grads = g.wrt(x).into_data();
    grads.extend(g.wrt(w).into_data());
    (out, grads)
}

#[test]
fn identical_inputs_give_bit_identical_results() {
    let (a, ga) = random_graph_value(17);
    let (b, gb) = random_graph_value(17);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ga.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), gb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// grad(a·f + b·g) = a·grad(f) + b·grad(g).
    #[test]
    fn backward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let w0 = Tensor::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);

        let run = |ca: f64, cb: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone(), true);
            let w = tape.leaf(w0.clone(), true);
            let c = tape.conv2d(x, w, None, ConvSpec::new(1, 1, 1, 1)).unwrap();
            let r = tape.relu(c).unwrap();
            let f = tape.sum(r).unwrap();
            let sq = tape.mul(c, c).unwrap();
            let g = tape.mean(sq).unwrap();
            let fa = tape.scale(f, ca).unwrap();
            let gb = tape.scale(g, cb).unwrap();
            let l = tape.add(fa, gb).unwrap();
            let grads = tape.backward(l).unwrap();
            let mut v = grads.wrt(x).into_data();
            v.extend(grads.wrt(w).into_data());
            v
        };
        let combined = run(a, b);
        let f_only = run(1.0, 0.0);
        let g_only = run(0.0, 1.0);
        for i in 0..combined.len() {
            let expect = a * f_only[i] + b * g_only[i];
            prop_assert!((combined[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn weighted_sum_with_unit_weight_selects_term(k in 0usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let terms: Vec<_> = (0..4).map(|_| tape.constant(Tensor::uniform(&[1, 2, 2, 2], -1.0, 1.0, &mut rng))).collect();
        let mut w = vec![0.0; 4];
        w[k] = 1.0;
        let wv = tape.constant(Tensor::from_vec(w));
        let y = tape.weighted_sum(wv, &terms).unwrap();
        prop_assert_eq!(tape.value(y), tape.value(terms[k]));
    }
}
