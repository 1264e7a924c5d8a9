use super::*;
use crate::nn::relative_error;
use crate::traffic::{gen_topology, gen_traces, TopologyConfig, TraceParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(head: HeadMode) -> TwinConfig {
    TwinConfig {
        window: 8,
        conv_channels: 3,
        features: 5,
        graph_dim: 4,
        attention_dim: 3,
        output_dim: 4,
        beta: 1.5,
        head,
        ..TwinConfig::default()
    }
}

fn random_inputs(v: usize, l: usize, rng: &mut ChaCha8Rng) -> Window {
    Window {
        t_end: rng.gen_range(l..500),
        nodes: (0..v).map(|_| (0..l).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
    }
}

/// Five-point finite differences of `c . raw_output` against the analytic
/// gradient; returns the worst relative error.
fn max_gradient_error(model: &TwinModel, inputs: &Window) -> f64 {
    let out = model.raw_output(inputs).unwrap();
    let c: Vec<f64> = (0..out.len()).map(|i| (i + 1) as f64 / out.len() as f64 - 0.3).collect();
    let analytic = model.raw_gradient(inputs, &c).unwrap();
    let base = model.params();
    let mut probe = model.clone();
    let h = 1e-4;
    let mut eval = |i: usize, offset: f64| {
        let mut p = base.clone();
        p.values_mut()[i] += offset;
        probe.set_params(&p).unwrap();
        probe.raw_output(inputs).unwrap().iter().zip(&c).map(|(y, w)| y * w).sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let numeric = (eval(i, -2.0 * h) - 8.0 * eval(i, -h) + 8.0 * eval(i, h) - eval(i, 2.0 * h)) / (12.0 * h);
        worst = worst.max(relative_error(analytic.values()[i], numeric));
    }
    worst
}

#[test]
fn end_to_end_gradient_linear_head() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = TwinModel::new(small_config(HeadMode::Linear), 4, 1, &mut rng).unwrap();
        let inputs = random_inputs(4, 8, &mut rng);
        let err = max_gradient_error(&model, &inputs);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn end_to_end_gradient_softmax_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = TwinModel::new(small_config(HeadMode::Softmax), 4, 1, &mut rng).unwrap();
    let inputs = random_inputs(4, 8, &mut rng);
    let err = max_gradient_error(&model, &inputs);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn learned_graph_is_used() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = TwinModel::new(small_config(HeadMode::Linear), 6, 1, &mut rng).unwrap();
    let inputs = random_inputs(6, 8, &mut rng);
    let snap = model.graph_snapshot(&inputs).unwrap();
    snap.check().unwrap();
    assert!(snap.adjacency.data().iter().any(|&a| a > 0.0));
}

#[test]
fn features_follow_node_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = TwinModel::new(small_config(HeadMode::Linear), 3, 1, &mut rng).unwrap();
    let inputs = random_inputs(3, 8, &mut rng);
    let b = model.extract_features(&inputs).unwrap();
    let n = &inputs.nodes;
    let permuted = Window {
        t_end: inputs.t_end,
        nodes: vec![n[2].clone(), n[0].clone(), n[1].clone()],
    };
    let bp = model.extract_features(&permuted).unwrap();
    assert_eq!(bp.row(0), b.row(2));
    assert_eq!(bp.row(1), b.row(0));
    assert_eq!(bp.row(2), b.row(1));

    let twins = Window {
        t_end: inputs.t_end,
        nodes: vec![n[0].clone(), n[0].clone(), n[1].clone()],
    };
    let bt = model.extract_features(&twins).unwrap();
    assert_eq!(bt.row(0), bt.row(1));
    assert_eq!(bt.rows(), 3);
    assert_eq!(bt.cols(), 5);
}

#[test]
fn window_shorter_than_expected_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = TwinModel::new(small_config(HeadMode::Linear), 2, 1, &mut rng).unwrap();
    let short = Window {
        t_end: 40,
        nodes: vec![vec![1.0; 2], vec![1.0; 2]],
    };
    let err = model.predict(&short).unwrap_err();
    assert!(matches!(err, TwinError::ShortWindow { .. }));
    assert!(TwinConfig {
        window: 2,
        ..TwinConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn constant_head_predicts_clipped_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = TwinModel::new(small_config(HeadMode::Linear), 1, 1, &mut rng).unwrap();
    let inputs = random_inputs(1, 8, &mut rng);
    let mut params = model.params();
    let n = params.len();
    // head is the last block: H weights then one bias
    for c in [2.5, -1.0] {
        for x in &mut params.values_mut()[n - 5..n - 1] {
            *x = 0.0;
        }
        params.values_mut()[n - 1] = c;
        model.set_params(&params).unwrap();
        assert_eq!(model.predict(&inputs).unwrap().aggregate, f64::max(c, 0.0));
    }
}

#[test]
fn softmax_shares_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = TwinModel::new(small_config(HeadMode::Softmax), 5, 1, &mut rng).unwrap();
    let inputs = random_inputs(5, 8, &mut rng);
    let shares = model.raw_output(&inputs).unwrap();
    assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let f = model.predict(&inputs).unwrap();
    let nodes = f.nodes.unwrap();
    assert!((nodes.iter().sum::<f64>() - f.aggregate).abs() < 1e-9);
}

#[test]
fn mae_examples() {
    assert_eq!(mae(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
    assert_eq!(mae(&[4.0], &[4.0]).unwrap(), 0.0);
}

#[test]
fn perfect_prediction_has_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut model = TwinModel::new(small_config(HeadMode::Linear), 3, 1, &mut rng).unwrap();
    let inputs = random_inputs(3, 8, &mut rng);
    let predicted = model.predict(&inputs).unwrap().aggregate;
    let next = vec![predicted / 3.0; 3];
    let before = model.params();
    let loss = model.train_step(&inputs, &next).unwrap();
    assert!(loss < 1e-12);
    assert_eq!(model.params(), before);
}

#[test]
fn training_reduces_loss() {
    let mut wins = 0;
    for seed in 0..5 {
        let radio = crate::radio::RadioConfig::default();
        let topo = gen_topology(6, &TopologyConfig::default(), &radio, seed).unwrap();
        let traces = gen_traces(&topo, 300, &TraceParams::default(), 0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = TwinModel::new(TwinConfig::default(), 6, 1, &mut rng).unwrap();
        model.set_normalizer(Normalizer::fit(&traces.node_series(0)));
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..200 {
            let t = 11 + (step % 280);
            let inputs = Window::from_tensor(&traces, t, 12).unwrap();
            let loss = model.train_step(&inputs, traces.at(t + 1)).unwrap();
            if step < 20 {
                first += loss;
            }
            if step >= 180 {
                last += loss;
            }
        }
        if last < first {
            wins += 1;
        }
    }
    assert!(wins >= 3, "loss decreased in {wins}/5 seeds");
}
