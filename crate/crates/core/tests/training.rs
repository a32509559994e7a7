mod common;

use common::{random_mask, random_net};
use srl_core::attack::{evaluate, AttackConfig};
use srl_core::data::{gen_blobs, gen_two_moons, Example};
use srl_core::net::{Gradients, Mask};
use srl_core::rng::rng_from_seed;
use srl_core::training::{
    adversarial_train, lr_schedule_stop_e, stop_c_controller, Sgd, StopCAction, StopMode,
    TrainConfig,
};
use srl_core::Error;

#[test]
fn stop_e_closed_form_exhaustive() {
    for total in 1..=1000usize {
        let first = total.div_ceil(3);
        let second = (2 * total).div_ceil(3);
        for epoch in 0..total {
            let decays = usize::from(epoch >= first) + usize::from(epoch >= second);
            assert_eq!(
                lr_schedule_stop_e(total, 0.1, epoch),
                0.1 / 10f64.powi(decays as i32),
                "total {total} epoch {epoch}"
            );
        }
    }
    assert_eq!(lr_schedule_stop_e(240, 0.1, 79), 0.1);
    assert_eq!(lr_schedule_stop_e(240, 0.1, 80), 0.1 / 10.0);
    assert_eq!(lr_schedule_stop_e(240, 0.1, 159), 0.1 / 10.0);
    assert_eq!(lr_schedule_stop_e(240, 0.1, 160), 0.1 / 100.0);
    assert_eq!(lr_schedule_stop_e(240, 0.1, 239), 0.1 / 100.0);
}

fn decay_and_stop_epochs(actions: &[StopCAction]) -> (Vec<usize>, Option<usize>) {
    let decays = actions
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == StopCAction::DecayLr)
        .map(|(i, _)| i)
        .collect();
    let stop = actions.iter().position(|a| *a == StopCAction::Stop);
    (decays, stop)
}

#[test]
fn stop_c_constant_trace() {
    // epoch 0 improves on +inf; every later epoch is stagnant
    let actions = stop_c_controller(&[1.0; 50], 3, 1e-3, 2);
    assert_eq!(decay_and_stop_epochs(&actions), (vec![3, 6], Some(9)));
    assert_eq!(actions.len(), 10);
    let actions = stop_c_controller(&[2.0; 50], 10, 1e-3, 2);
    assert_eq!(decay_and_stop_epochs(&actions), (vec![10, 20], Some(30)));
}

#[test]
fn stop_c_steady_one_percent_improvement_never_decays() {
    let losses: Vec<f64> = (0..200).map(|i| 0.99f64.powi(i)).collect();
    let actions = stop_c_controller(&losses, 5, 1e-3, 2);
    assert_eq!(actions.len(), 200);
    assert!(actions.iter().all(|a| *a == StopCAction::Continue));
}

#[test]
fn stop_c_boundary_threshold_is_not_improvement() {
    // threshold 0.5: halving exactly equals best·(1 − θ) and so stagnates
    let losses = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];
    let actions = stop_c_controller(&losses, 2, 0.5, 2);
    assert_eq!(decay_and_stop_epochs(&actions), (vec![2, 4], Some(6)));
    // just below the boundary counts
    let losses = [1.0, 0.499, 0.249, 0.124];
    let actions = stop_c_controller(&losses, 2, 0.5, 2);
    assert!(actions.iter().all(|a| *a == StopCAction::Continue));
}

#[test]
fn stop_c_resets_after_improvement() {
    let losses = [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5];
    let actions = stop_c_controller(&losses, 3, 1e-3, 1);
    assert_eq!(decay_and_stop_epochs(&actions), (vec![6], None));
}

#[test]
fn momentum_two_step_recurrence() {
    let mut rng = rng_from_seed(81);
    let net = random_net(&mut rng, &[3, 4, 2]);
    let mut grads = Gradients::zeros_like(&net);
    for w in &mut grads.weights {
        w.as_mut_slice().iter_mut().for_each(|v| *v = 0.3);
    }
    for g in grads.scaling.iter_mut().flatten() {
        *g = -0.2;
    }
    let (mu, lambda, lr) = (0.9, 5e-4, 0.1);
    let mut opt = Sgd::new(&net, mu, lambda, 0.0);
    let mut stepped = net.clone();
    opt.step(&mut stepped, None, &grads, lr).unwrap();
    opt.step(&mut stepped, None, &grads, lr).unwrap();
    for (w0, w2) in net.weights().iter().zip(stepped.weights()) {
        for (&a, &b) in w0.as_slice().iter().zip(w2.as_slice()) {
            let v1 = 0.3 + lambda * a;
            let w1 = a - lr * v1;
            let v2 = mu * v1 + 0.3 + lambda * w1;
            assert_eq!(b, w1 - lr * v2);
        }
    }
    for (g0, g2) in net
        .scaling()
        .iter()
        .flatten()
        .zip(stepped.scaling().iter().flatten())
    {
        let v1 = -0.2;
        let v2 = mu * v1 - 0.2;
        assert_eq!(*g2, (g0 - lr * v1) - lr * v2);
    }
}

fn toy_data(n: usize, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let ds = gen_two_moons(n, 0.1, seed).unwrap();
    (ds.train(), ds.val())
}

#[test]
fn masked_weights_stay_zero_for_a_hundred_steps() {
    let mut rng = rng_from_seed(82);
    let net = random_net(&mut rng, &[2, 8, 8, 2]);
    let mask = random_mask(&mut rng, &net, 0.5);
    let (train, val) = toy_data(200, 1);
    let cfg = TrainConfig {
        batch_size: Some(10),
        ..TrainConfig::standard(
            StopMode::Fixed { epochs: 10 },
            AttackConfig::new(0.1, 0.025, 3),
            4,
        )
    };
    assert_eq!(train.len() / 10 * 10, 100);
    let (out, record) = adversarial_train(&net, Some(&mask), &train, &val, &cfg).unwrap();
    assert_eq!(record.rows.len(), 10);
    for (l, w) in out.weights().iter().enumerate() {
        for (i, v) in w.as_slice().iter().enumerate() {
            if !mask.layer(l).bits()[i] {
                assert_eq!(v.to_bits(), 0);
            }
        }
    }
    assert_ne!(
        out.weights()[0],
        net.apply_mask(&mask).unwrap().weights()[0]
    );
}

#[test]
fn natural_training_on_blobs() {
    let ds = gen_blobs(600, 3, 0.3, 2).unwrap();
    let net = random_net(&mut rng_from_seed(83), &[2, 16, 3]);
    let cfg = TrainConfig::standard(
        StopMode::StopE { total_epochs: 20 },
        AttackConfig::new(1e-12, 1e-12, 1),
        0,
    );
    let (trained, record) = adversarial_train(&net, None, &ds.train(), &ds.val(), &cfg).unwrap();
    let ev = evaluate(
        &trained,
        None,
        &ds.test(),
        &AttackConfig::new(1e-12, 1e-12, 1),
        0,
    )
    .unwrap();
    assert!(
        ev.clean_accuracy >= 0.95,
        "clean accuracy {}",
        ev.clean_accuracy
    );
    assert!(record.last().unwrap().train_adv_loss < record.rows[0].train_adv_loss);
}

#[test]
fn training_is_deterministic() {
    let net = random_net(&mut rng_from_seed(84), &[2, 8, 2]);
    let (train, val) = toy_data(120, 2);
    let cfg = TrainConfig {
        attack: AttackConfig {
            random_start: true,
            ..AttackConfig::new(0.1, 0.025, 3)
        },
        ..TrainConfig::standard(
            StopMode::StopE { total_epochs: 4 },
            AttackConfig::new(0.1, 0.025, 3),
            9,
        )
    };
    let a = adversarial_train(&net, None, &train, &val, &cfg).unwrap();
    let b = adversarial_train(&net, None, &train, &val, &cfg).unwrap();
    assert_eq!(a, b);
    let other =
        adversarial_train(&net, None, &train, &val, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.0, other.0);
}

#[test]
fn record_schema_and_schedule() {
    let net = random_net(&mut rng_from_seed(85), &[2, 6, 2]);
    let (train, val) = toy_data(80, 3);
    let cfg = TrainConfig::standard(
        StopMode::StopE { total_epochs: 6 },
        AttackConfig::new(0.1, 0.025, 2),
        0,
    );
    let (_, record) = adversarial_train(&net, None, &train, &val, &cfg).unwrap();
    let lrs: Vec<f64> = record.rows.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![0.1, 0.1, 0.01, 0.01, 0.001, 0.001]);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(record.best_sum_epoch.is_some());
    let csv = record.to_csv();
    assert!(csv.starts_with("epoch,lr,train_adv_loss,val_loss,clean_acc,adv_acc\n"));
    assert_eq!(csv.lines().count(), 7);
    let summary = record.summary.unwrap();
    assert_eq!(summary.layers.len(), 2);
}

#[test]
fn stop_c_training_halts_within_cap() {
    let net = random_net(&mut rng_from_seed(86), &[2, 6, 2]);
    let (train, val) = toy_data(80, 4);
    let mode = StopMode::StopC {
        patience: 2,
        relative_threshold: 0.5,
        max_decays: 1,
        max_epochs: 40,
    };
    let cfg = TrainConfig::standard(mode, AttackConfig::new(0.1, 0.025, 2), 0);
    let (_, record) = adversarial_train(&net, None, &train, &val, &cfg).unwrap();
    // a 50% relative improvement per epoch cannot be sustained for long
    assert!(record.rows.len() < 40);
    let decayed = record.rows.iter().filter(|r| r.lr < 0.1).count();
    assert!(decayed >= 1);
}

#[test]
fn divergence_is_reported_with_partial_record() {
    let net = random_net(&mut rng_from_seed(87), &[2, 8, 8, 2]);
    let (train, val) = toy_data(80, 5);
    let cfg = TrainConfig {
        initial_lr: 1e200,
        momentum: 0.0,
        ..TrainConfig::standard(
            StopMode::Fixed { epochs: 5 },
            AttackConfig::new(0.1, 0.025, 2),
            0,
        )
    };
    match adversarial_train(&net, None, &train, &val, &cfg) {
        Err(Error::Diverged { epoch, record }) => assert_eq!(record.rows.len(), epoch),
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|r| r.1.rows.len())
        ),
    }
}

#[test]
fn invalid_inputs_rejected() {
    let net = random_net(&mut rng_from_seed(88), &[2, 4, 2]);
    let (train, val) = toy_data(40, 6);
    let good = TrainConfig::standard(
        StopMode::Fixed { epochs: 1 },
        AttackConfig::new(0.1, 0.025, 1),
        0,
    );
    assert!(adversarial_train(&net, None, &[], &val, &good).is_err());
    assert!(adversarial_train(&net, None, &train, &[], &good).is_err());
    let bad = TrainConfig {
        mode: StopMode::StopE { total_epochs: 2 },
        ..good.clone()
    };
    assert!(matches!(
        adversarial_train(&net, None, &train, &val, &bad),
        Err(Error::InvalidConfig(_))
    ));
    let wrong = Mask::ones(&[2, 5, 2]);
    assert!(adversarial_train(&net, Some(&wrong), &train, &val, &good).is_err());
}
