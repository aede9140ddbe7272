use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointBuilder};
use super::*;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, loss: Loss) -> Batch {
    let inputs = Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-1.0..1.0));
    match loss {
        Loss::BinaryCrossEntropy => {
            let targets = (0..rows).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
            Batch::pointwise(inputs, targets)
        }
        Loss::SquaredError => {
            let targets = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            Batch::pointwise(inputs, targets)
        }
        Loss::ListwiseSoftmax => {
            let half = rows / 2;
            let groups = vec![0..half, half..rows];
            let mut targets = vec![0.0; rows];
            for g in &groups {
                let raw: Vec<f64> = g.clone().map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                for (i, r) in g.clone().zip(raw) {
                    targets[i] = r / s;
                }
            }
            Batch {
                inputs,
                targets,
                groups,
            }
        }
    }
}

#[test]
fn zero_network_outputs_zero() {
    let net = DenseNet::zeros(&[3, 4, 1]).unwrap();
    assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0]);
}

#[test]
fn identity_layer_passes_input_through() {
    let net = DenseNet::new(vec![Layer {
        weights: Array2::eye(3),
        bias: Array1::zeros(3),
        activation: Activation::Identity,
    }])
    .unwrap();
    assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
}

#[test]
fn two_layer_net_matches_hand_evaluation() {
    let net = DenseNet::new(vec![
        Layer {
            weights: array![[1.0, -2.0], [0.5, 0.25], [-1.0, 1.0]],
            bias: array![0.1, -0.2, 0.3],
            activation: Activation::Relu,
        },
        Layer {
            weights: array![[2.0, -1.0, 0.5]],
            bias: array![0.05],
            activation: Activation::Identity,
        },
    ])
    .unwrap();
    let x = [0.3, -0.7];
    // Straight-line evaluation of the same arithmetic.
    let h0 = (1.0 * 0.3 + -2.0 * -0.7 + 0.1f64).max(0.0);
    let h1 = (0.5 * 0.3 + 0.25 * -0.7 - 0.2f64).max(0.0);
    let h2 = (-0.3 + 1.0 * -0.7 + 0.3f64).max(0.0);
    let expected = 2.0 * h0 - 1.0 * h1 + 0.5 * h2 + 0.05;
    let got = net.forward(&x).unwrap()[0];
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn forward_rejects_wrong_dimension() {
    let net = DenseNet::zeros(&[3, 1]).unwrap();
    assert!(matches!(net.forward(&[1.0]), Err(Error::Validation(_))));
    assert!(DenseNet::zeros(&[3]).is_err());
}

#[test]
fn balanced_bce_at_zero_logit_has_zero_output_bias_gradient() {
    let net = DenseNet::zeros(&[2, 3, 1]).unwrap();
    let batch = Batch::pointwise(
        array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [-2.0, 1.0]],
        vec![1.0, 0.0, 1.0, 0.0],
    );
    let (grads, loss) = backward(&net, &batch, Loss::BinaryCrossEntropy).unwrap();
    assert_eq!(grads.layers[1].1[0], 0.0);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn squared_error_at_target_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = DenseNet::glorot(&[3, 5, 1], &mut rng).unwrap();
    let inputs = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
    let targets = net.forward_batch(inputs.view()).unwrap().column(0).to_vec();
    let (grads, loss) = backward(&net, &Batch::pointwise(inputs, targets), Loss::SquaredError).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.flat().iter().all(|g| *g == 0.0));
}

#[test]
fn equal_listwise_targets_are_stationary_at_equal_scores() {
    let net = DenseNet::zeros(&[2, 1]).unwrap();
    let batch = Batch {
        inputs: array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]],
        targets: vec![1.0 / 3.0; 3],
        groups: vec![0..3],
    };
    let (grads, _) = backward(&net, &batch, Loss::ListwiseSoftmax).unwrap();
    assert!(grads.flat().iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn non_finite_loss_is_a_training_error() {
    let net = DenseNet::zeros(&[1, 1]).unwrap();
    let batch = Batch::pointwise(array![[1.0]], vec![f64::INFINITY]);
    assert!(matches!(
        backward(&net, &batch, Loss::SquaredError),
        Err(Error::Training { .. })
    ));
}

#[test]
fn gradients_match_finite_differences_for_every_loss() {
    for loss in [Loss::BinaryCrossEntropy, Loss::SquaredError, Loss::ListwiseSoftmax] {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::glorot(&[4, 6, 5, 1], &mut rng).unwrap();
            let batch = random_batch(&mut rng, 8, 4, loss);
            let err = finite_diff_check(&net, &batch, loss, 1e-5).unwrap();
            assert!(err <= 1e-4, "{loss:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn single_input_network_gradients_are_row_major() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = DenseNet::glorot(&[1, 4, 3, 1], &mut rng).unwrap();
    let batch = random_batch(&mut rng, 5, 1, Loss::SquaredError);
    let (grads, _) = backward(&net, &batch, Loss::SquaredError).unwrap();
    assert!(grads.layers.iter().all(|(w, _)| w.is_standard_layout()));
    assert!(finite_diff_check(&net, &batch, Loss::SquaredError, 1e-5).unwrap() <= 1e-4);
}

#[test]
fn linear_squared_error_check_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = DenseNet::glorot(&[5, 1], &mut rng).unwrap();
    let batch = random_batch(&mut rng, 10, 5, Loss::SquaredError);
    let err = finite_diff_check(&net, &batch, Loss::SquaredError, 1e-5).unwrap();
    assert!(err <= 1e-7, "{err}");
}

#[test]
fn default_width_network_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = DenseNet::glorot(&[4, 256, 256, 1], &mut rng).unwrap();
    let batch = random_batch(&mut rng, 4, 4, Loss::BinaryCrossEntropy);
    let err = finite_diff_check(&net, &batch, Loss::BinaryCrossEntropy, 1e-5).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::glorot(&[3, 4, 1], &mut rng).unwrap();
    let batch = random_batch(&mut rng, 6, 3, Loss::SquaredError);
    let (mut grads, _) = backward(&net, &batch, Loss::SquaredError).unwrap();
    grads.layers[1].1[0] *= 2.0;
    let err = finite_diff_check_against(&net, &batch, Loss::SquaredError, 1e-5, &grads).unwrap();
    assert!(err > 0.1, "{err}");
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = DenseNet::glorot(&[3, 2, 1], &mut rng).unwrap();
    let before = net.clone();
    let mut state = AdamState::new(net.param_count(), AdamConfig::default());
    adam_step(&mut net, &Gradients::zeros_like(&before), &mut state).unwrap();
    assert_eq!(net, before);
    assert_eq!(state.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut params = vec![1.0, -2.0, 0.5];
    let grads = vec![0.3, -4.0, 1e-3];
    let cfg = AdamConfig::default();
    let mut state = AdamState::new(3, cfg);
    state.step([params.as_mut_slice()], [grads.as_slice()]).unwrap();
    // m_hat = g and v_hat = g^2 at t = 1, so the step is -lr * g / (|g| + eps).
    for ((p, p0), g) in params.iter().zip([1.0, -2.0, 0.5]).zip(&grads) {
        let expected = p0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
        assert!((p - expected).abs() < 1e-15);
        assert!((p - (p0 - cfg.learning_rate * g.signum())).abs() < 1e-7);
    }
}

#[test]
fn adam_is_deterministic_and_rejects_bad_gradients() {
    let run = || {
        let mut p = vec![0.1, 0.2];
        let mut s = AdamState::new(2, AdamConfig::default());
        for k in 0..5 {
            let g = [0.1 * k as f64, -0.3];
            s.step([p.as_mut_slice()], [g.as_slice()]).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
    let mut p = vec![0.0];
    let mut s = AdamState::new(1, AdamConfig::default());
    assert!(matches!(
        s.step([p.as_mut_slice()], [[f64::NAN].as_slice()]),
        Err(Error::Training { .. })
    ));
    assert_eq!(s.steps(), 0);
    assert_eq!(p, vec![0.0]);
}

#[test]
fn dropout_identity_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = [1.0, -2.0, 3.5];
    for training in [true, false] {
        let spec = DropoutSpec::new(0.0, training).unwrap();
        assert_eq!(dropout_apply(&v, &spec, &mut rng), v.to_vec());
    }
    let spec = DropoutSpec::new(0.7, false).unwrap();
    assert_eq!(dropout_apply(&v, &spec, &mut rng), v.to_vec());
    assert!(DropoutSpec::new(1.0, true).is_err());
}

#[test]
fn dropout_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = DropoutSpec::new(0.3, true).unwrap();
    let n = 100_000;
    let out = dropout_apply(&vec![1.0; n], &spec, &mut rng);
    let mean = out.iter().sum::<f64>() / n as f64;
    let tol = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt() / 0.7;
    assert!((mean - 1.0).abs() <= tol, "{mean}");
    assert!(out.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-15));
}

fn train_regression(seed: u64) -> (DenseNet, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DenseNet::glorot(&[2, 16, 1], &mut rng).unwrap();
    let mut state = AdamState::new(net.param_count(), AdamConfig::default());
    let mut losses = Vec::new();
    for _ in 0..200 {
        let inputs = Array2::from_shape_simple_fn((16, 2), || rng.random_range(-1.0..1.0));
        let targets = inputs.rows().into_iter().map(|r| 2.0 * r[0] - r[1]).collect();
        let (g, l) = backward(&net, &Batch::pointwise(inputs, targets), Loss::SquaredError).unwrap();
        adam_step(&mut net, &g, &mut state).unwrap();
        losses.push(l);
    }
    (net, losses)
}

#[test]
fn training_is_deterministic_and_loss_decreases() {
    let (a, losses) = train_regression(9);
    let (b, _) = train_regression(9);
    assert_eq!(a, b);
    let half = losses.len() / 2;
    let first: f64 = losses[..half].iter().sum::<f64>() / half as f64;
    let second: f64 = losses[half..].iter().sum::<f64>() / half as f64;
    assert!(second < first, "{first} -> {second}");
}

#[test]
fn embedding_has_penultimate_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = DenseNet::glorot(&[3, 7, 5, 1], &mut rng).unwrap();
    let e = net.embed_batch(array![[0.1, 0.2, 0.3]].view()).unwrap();
    assert_eq!(e.ncols(), 5);
    assert_eq!(net.embedding_dim(), 5);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = DenseNet::glorot(&[3, 4, 1], &mut rng).unwrap();
    let ckpt = CheckpointBuilder::new("test", serde_json::json!({"seed": 5}))
        .net("relevance", &net)
        .vector("extra", &[1.0 / 3.0, -0.0, f64::MIN_POSITIVE])
        .finish();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.net("relevance").unwrap(), net);
    let extra = back.vector("extra").unwrap();
    assert_eq!(extra[1].to_bits(), (-0.0f64).to_bits());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
}
