use super::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dueling_topo(horizons: Vec<usize>, n_actions: usize) -> NetTopology {
    NetTopology::new(1, vec![1], HeadSpec::DuelingQ { horizons, n_actions }).unwrap()
}

// Single hidden unit pinned to activation 1, so head biases become the head
// outputs directly.
fn pinned_params(topo: &NetTopology, head_a_bias: &[f64], head_b_bias: &[f64]) -> ParamVector {
    let mut params = init_params(topo, 0).unwrap();
    for v in &mut params.data {
        *v = 0.0;
    }
    let layers = topo.layers();
    params.data[layers[0].b_off] = 1.0; // hidden activation = relu(0*x + 1) = 1
    let a = &layers[topo.hidden.len()];
    params.data[a.b_off..a.b_off + a.out].copy_from_slice(head_a_bias);
    let b = &layers[topo.hidden.len() + 1];
    params.data[b.b_off..b.b_off + b.out].copy_from_slice(head_b_bias);
    params
}

#[test]
fn dueling_hand_example() {
    // E = 1, A = [2, 0] -> centered A = [1, -1] -> Q = [2, 0]
    let topo = dueling_topo(vec![1], 2);
    let params = pinned_params(&topo, &[1.0], &[2.0, 0.0]);
    let q = forward_q(&params, &[0.0]).unwrap();
    assert_eq!(q, vec![vec![2.0, 0.0]]);
}

#[test]
fn dueling_constant_advantage_collapses_to_expectation() {
    let topo = dueling_topo(vec![1, 2], 3);
    let params = pinned_params(&topo, &[1.5, -0.5], &[7.0; 6]);
    let q = forward_q(&params, &[0.0]).unwrap();
    assert_eq!(q[0], vec![1.5, 1.5, 1.5]);
    assert_eq!(q[1], vec![-0.5, -0.5, -0.5]);
}

#[test]
fn dueling_shift_invariance() {
    let topo = dueling_topo(vec![1], 3);
    let a = pinned_params(&topo, &[0.25], &[1.0, -2.0, 0.5]);
    let b = pinned_params(&topo, &[0.25], &[11.0, 8.0, 10.5]);
    let qa = forward_q(&a, &[0.0]).unwrap();
    let qb = forward_q(&b, &[0.0]).unwrap();
    for (x, y) in qa[0].iter().zip(&qb[0]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn dueling_centered_advantage_mean_zero() {
    let topo = NetTopology::new(
        5,
        vec![16, 16],
        HeadSpec::DuelingQ {
            horizons: vec![1, 2, 4],
            n_actions: 5,
        },
    )
    .unwrap();
    let params = init_params(&topo, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = forward_cache(&params, &obs).unwrap();
        let q = dueling_q_from_heads(&topo, &cache.head_a, &cache.head_b).unwrap();
        for (k, row) in q.iter().enumerate() {
            let centered_mean: f64 =
                row.iter().map(|qv| qv - cache.head_a[k]).sum::<f64>() / row.len() as f64;
            assert!(centered_mean.abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_hand_example() {
    let topo = NetTopology::new(1, vec![1], HeadSpec::PolicyValue { n_actions: 2 }).unwrap();
    let params = pinned_params(&topo, &[3.0f64.ln(), 0.0], &[0.0]);
    let (pi, v) = forward_policy_value(&params, &[0.0]).unwrap();
    assert!((pi[0] - 0.75).abs() < 1e-12);
    assert!((pi[1] - 0.25).abs() < 1e-12);
    assert_eq!(v, 0.0);
}

#[test]
fn softmax_uniform_on_equal_logits() {
    let topo = NetTopology::new(1, vec![1], HeadSpec::PolicyValue { n_actions: 4 }).unwrap();
    let params = pinned_params(&topo, &[0.7; 4], &[1.0]);
    let (pi, _) = forward_policy_value(&params, &[0.0]).unwrap();
    for p in &pi {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn softmax_normalized_for_random_nets() {
    let topo = NetTopology::new(4, vec![8], HeadSpec::PolicyValue { n_actions: 5 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..1000 {
        let params = init_params(&topo, seed % 13).unwrap();
        let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (pi, _) = forward_policy_value(&params, &obs).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pi.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn huber_examples() {
    assert_eq!(huber(0.0, 1.0), 0.0);
    assert_eq!(huber(0.5, 1.0), 0.125);
    assert_eq!(huber(2.0, 1.0), 1.5);
    assert_eq!(huber(-2.0, 1.0), 1.5);
}

#[test]
fn forward_is_deterministic() {
    let topo = NetTopology::new(
        10,
        vec![32, 32],
        HeadSpec::DuelingQ {
            horizons: vec![1, 2, 4, 8, 16, 32],
            n_actions: 5,
        },
    )
    .unwrap();
    let params = init_params(&topo, 99).unwrap();
    let obs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(
        forward_q(&params, &obs).unwrap(),
        forward_q(&params, &obs).unwrap()
    );
}

#[test]
fn shape_error_on_bad_obs() {
    let topo = dueling_topo(vec![1], 2);
    let params = init_params(&topo, 0).unwrap();
    assert!(matches!(
        forward_q(&params, &[0.0, 1.0]),
        Err(NeuralError::Shape(_))
    ));
}

#[test]
fn zero_loss_gives_zero_gradient() {
    let topo = dueling_topo(vec![1], 2);
    let params = pinned_params(&topo, &[1.0], &[2.0, 0.0]); // Q = [2, 0]
    let spec = LossSpec::MaskedMultiHorizon {
        samples: vec![QmcSample {
            obs: vec![0.0],
            action: 0,
            targets: vec![(2.0, false)],
        }],
    };
    let out = backward(&params, &spec, None).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grads.data.iter().all(|&g| g == 0.0));
}

#[test]
fn masked_terms_contribute_nothing() {
    let topo = dueling_topo(vec![1, 2], 2);
    let params = init_params(&topo, 7).unwrap();
    let masked = LossSpec::MaskedMultiHorizon {
        samples: vec![QmcSample {
            obs: vec![0.3],
            action: 1,
            targets: vec![(100.0, true), (-50.0, true)],
        }],
    };
    let out = backward(&params, &masked, None).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grads.data.iter().all(|&g| g == 0.0));
}

#[test]
fn frozen_layer_gets_zero_gradient() {
    let topo = NetTopology::new(
        3,
        vec![8, 8],
        HeadSpec::DuelingQ {
            horizons: vec![1],
            n_actions: 2,
        },
    )
    .unwrap();
    let params = init_params(&topo, 1).unwrap();
    let mask = FreezeMask::new(vec![false, true, false, false], &topo).unwrap();
    let spec = LossSpec::ScalarHuber {
        samples: vec![ScalarSample {
            obs: vec![0.1, -0.2, 0.4],
            action: 0,
            target: 3.0,
        }],
    };
    let out = backward(&params, &spec, Some(&mask)).unwrap();
    let layers = topo.layers();
    let l1 = &layers[1];
    assert!(out.grads.data[l1.w_off..l1.b_off + l1.out]
        .iter()
        .all(|&g| g == 0.0));
    // unfrozen layers actually moved
    let l0 = &layers[0];
    assert!(out.grads.data[l0.w_off..l0.b_off + l0.out]
        .iter()
        .any(|&g| g != 0.0));
}

#[test]
fn freeze_mask_rejects_all_frozen() {
    let topo = dueling_topo(vec![1], 2);
    assert!(FreezeMask::new(vec![true, true, true], &topo).is_err());
    assert!(FreezeMask::new(vec![true], &topo).is_err());
}

// Central finite differences against the analytic gradient for each of the
// three loss families. The acceptance suite runs the full-size version; this
// is a fast smoke version on one small net per family.
#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for loss_kind in 0..3 {
        let (params, spec) = random_instance(loss_kind, &mut rng);
        let out = backward(&params, &spec, None).unwrap();
        let max_rel = max_fd_error(&params, &spec, &out.grads);
        assert!(
            max_rel < 1e-4,
            "loss kind {loss_kind}: max relative error {max_rel}"
        );
    }
}

pub(crate) fn random_instance(loss_kind: usize, rng: &mut ChaCha8Rng) -> (ParamVector, LossSpec) {
    'outer: loop {
        let input_dim = 4;
        let hidden = vec![12, 12];
        let n_actions = 3;
        let topo = match loss_kind {
            0 => NetTopology::new(
                input_dim,
                hidden,
                HeadSpec::DuelingQ {
                    horizons: vec![1, 2, 4],
                    n_actions,
                },
            ),
            1 => NetTopology::new(
                input_dim,
                hidden,
                HeadSpec::DuelingQ {
                    horizons: vec![1],
                    n_actions,
                },
            ),
            _ => NetTopology::new(input_dim, hidden, HeadSpec::PolicyValue { n_actions }),
        }
        .unwrap();
        let params = init_params(&topo, rng.random::<u64>()).unwrap();
        let batch = 4;
        let mut obs_batch = Vec::new();
        for _ in 0..batch {
            let obs: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            // keep finite differences away from the rectifier kink
            let z = hidden_preactivations(&params, &obs).unwrap();
            if z.iter().flatten().any(|v| v.abs() < 1e-4) {
                continue 'outer;
            }
            obs_batch.push(obs);
        }
        let spec = match loss_kind {
            0 => {
                let mut samples = Vec::new();
                for obs in &obs_batch {
                    let q = forward_q(&params, obs).unwrap();
                    let action = rng.random_range(0..n_actions);
                    let mut targets = Vec::new();
                    for row in &q {
                        let masked = rng.random_bool(0.2);
                        let target = row[action] + rng.random_range(-2.0..2.0);
                        // keep away from the Huber knee
                        if ((row[action] - target).abs() - HUBER_DELTA).abs() < 1e-3 {
                            continue 'outer;
                        }
                        targets.push((target, masked));
                    }
                    samples.push(QmcSample {
                        obs: obs.clone(),
                        action,
                        targets,
                    });
                }
                LossSpec::MaskedMultiHorizon { samples }
            }
            1 => {
                let mut samples = Vec::new();
                for obs in &obs_batch {
                    let q = forward_q(&params, obs).unwrap();
                    let action = rng.random_range(0..n_actions);
                    let target = q[0][action] + rng.random_range(-2.0..2.0);
                    if ((q[0][action] - target).abs() - HUBER_DELTA).abs() < 1e-3 {
                        continue 'outer;
                    }
                    samples.push(ScalarSample {
                        obs: obs.clone(),
                        action,
                        target,
                    });
                }
                LossSpec::ScalarHuber { samples }
            }
            _ => {
                let samples = obs_batch
                    .iter()
                    .map(|obs| {
                        let (_, v) = forward_policy_value(&params, obs).unwrap();
                        let target = rng.random_range(-2.0..2.0);
                        PolicySample {
                            obs: obs.clone(),
                            action: rng.random_range(0..n_actions),
                            target,
                            advantage: target - v,
                        }
                    })
                    .collect();
                LossSpec::ActorCritic {
                    samples,
                    entropy_beta: 0.01,
                }
            }
        };
        return (params, spec);
    }
}

pub(crate) fn max_fd_error(params: &ParamVector, spec: &LossSpec, grads: &GradVector) -> f64 {
    let h = 1e-5;
    let mut perturbed = params.clone();
    let mut max_rel: f64 = 0.0;
    for i in 0..params.data.len() {
        perturbed.data[i] = params.data[i] + h;
        let plus = backward(&perturbed, spec, None).unwrap().loss;
        perturbed.data[i] = params.data[i] - h;
        let minus = backward(&perturbed, spec, None).unwrap().loss;
        perturbed.data[i] = params.data[i];
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[test]
fn rmsprop_zero_grad_is_noop() {
    let topo = dueling_topo(vec![1], 2);
    let mut params = init_params(&topo, 8).unwrap();
    let before = params.data.clone();
    let mut opt = RMSPropState::new(params.data.len());
    opt.g.fill(0.5);
    let grads = GradVector::zeros(params.data.len());
    rmsprop_apply(&mut opt, &mut params, &grads, 0.1).unwrap();
    assert_eq!(params.data, before);
    assert!(opt.g.iter().all(|&g| (g - 0.495).abs() < 1e-15));
}

#[test]
fn rmsprop_hand_example() {
    let topo = dueling_topo(vec![1], 2);
    let mut params = init_params(&topo, 8).unwrap();
    let p0 = params.data[0];
    let mut opt = RMSPropState::new(params.data.len());
    let mut grads = GradVector::zeros(params.data.len());
    grads.data[0] = 1.0;
    rmsprop_apply(&mut opt, &mut params, &grads, 0.1).unwrap();
    assert!((opt.g[0] - 0.01).abs() < 1e-15);
    let step = p0 - params.data[0];
    assert!((step - 0.1 / 0.11f64.sqrt()).abs() < 1e-12);
}

#[test]
fn rmsprop_converges_to_fixed_point_scale() {
    let topo = dueling_topo(vec![1], 2);
    let mut params = init_params(&topo, 8).unwrap();
    let mut opt = RMSPropState::new(params.data.len());
    let mut grads = GradVector::zeros(params.data.len());
    let grad = 0.7;
    grads.data[0] = grad;
    let lr = 0.01;
    let mut last_step = 0.0;
    for _ in 0..2000 {
        let before = params.data[0];
        rmsprop_apply(&mut opt, &mut params, &grads, lr).unwrap();
        last_step = before - params.data[0];
    }
    let expected = lr * grad / (grad * grad + opt.epsilon).sqrt();
    assert!((last_step - expected).abs() / expected < 1e-3);
}

#[test]
fn frozen_params_survive_many_updates_bit_identical() {
    let topo = NetTopology::new(
        3,
        vec![8, 8],
        HeadSpec::DuelingQ {
            horizons: vec![1],
            n_actions: 2,
        },
    )
    .unwrap();
    let mut params = init_params(&topo, 2).unwrap();
    let mask = FreezeMask::new(vec![true, false, false, false], &topo).unwrap();
    let layers = topo.layers();
    let frozen_range = layers[0].w_off..layers[0].b_off + layers[0].out;
    let before = params.data[frozen_range.clone()].to_vec();
    let mut opt = RMSPropState::new(params.data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..25 {
        let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = LossSpec::ScalarHuber {
            samples: vec![ScalarSample {
                obs,
                action: rng.random_range(0..2),
                target: rng.random_range(-3.0..3.0),
            }],
        };
        let out = backward(&params, &spec, Some(&mask)).unwrap();
        rmsprop_apply(&mut opt, &mut params, &out.grads, 0.01).unwrap();
    }
    assert_eq!(params.data[frozen_range], before[..]);
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let topo = NetTopology::new(
        10,
        vec![64, 64],
        HeadSpec::DuelingQ {
            horizons: vec![1, 2],
            n_actions: 5,
        },
    )
    .unwrap();
    let a = init_params(&topo, 31).unwrap();
    let b = init_params(&topo, 31).unwrap();
    assert_eq!(a.data, b.data);
    for layer in topo.layers() {
        assert!(a.data[layer.b_off..layer.b_off + layer.out]
            .iter()
            .all(|&bv| bv == 0.0));
    }
}

#[test]
fn init_weight_mean_near_zero() {
    let topo = NetTopology::new(
        64,
        vec![512, 512],
        HeadSpec::DuelingQ {
            horizons: vec![1],
            n_actions: 5,
        },
    )
    .unwrap();
    let params = init_params(&topo, 12).unwrap();
    let layers = topo.layers();
    let w = &params.data[layers[1].w_off..layers[1].b_off];
    assert!(w.len() >= 100_000);
    let bound = (6.0 / 1024.0f64).sqrt();
    let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
    assert!(mean.abs() < 0.01);
    assert!(w.iter().all(|&x| x.abs() < bound));
}

#[test]
fn clip_global_norm_caps_scale() {
    let mut g = GradVector {
        data: vec![3.0, 4.0],
    };
    g.clip_global_norm(40.0);
    assert_eq!(g.data, vec![3.0, 4.0]);
    g.clip_global_norm(1.0);
    assert!((g.global_norm() - 1.0).abs() < 1e-12);
}

#[test]
fn snapshot_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let topo = NetTopology::new(
        10,
        vec![16, 16],
        HeadSpec::DuelingQ {
            horizons: vec![1, 2, 4, 8, 16, 32],
            n_actions: 5,
        },
    )
    .unwrap();
    let mut params = init_params(&topo, 77).unwrap();
    params.version = 42;
    let path = dir.path().join("snap.bin");
    save_params(&path, &params).unwrap();
    let loaded = load_params(&path).unwrap();
    assert_eq!(loaded, params);

    let pv_topo = NetTopology::new(4, vec![8], HeadSpec::PolicyValue { n_actions: 3 }).unwrap();
    let pv = init_params(&pv_topo, 1).unwrap();
    let path2 = dir.path().join("snap2.bin");
    save_params(&path2, &pv).unwrap();
    assert_eq!(load_params(&path2).unwrap(), pv);
}

#[test]
fn snapshot_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"not a snapshot at all").unwrap();
    assert!(matches!(load_params(&path), Err(SnapshotError::BadMagic)));
}
