mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cts_core::agent::{
    loss_with_targets, munchausen_target, Checkpoint, LossConfig, MunchausenParams, NetworkConfig, QNetwork,
    ReplayBuffer, Trainer, TrainerConfig, Transition,
};
use cts_core::simulator::{Action, DialogMode};

fn tiny_config(dim: usize) -> NetworkConfig {
    NetworkConfig {
        embedding_dim: dim,
        hidden1: 6,
        hidden2: 5,
        action_dim: 3,
        head_hidden: 4,
    }
}

/// Random-policy transitions from the toy tree.
fn rollout(dim: usize, n: usize, seed: u64) -> Vec<Transition<f64>> {
    let factory = common::factory::<f64>("toy15", dim);
    let mut env = factory.train_env(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (mut obs, goal) = env.reset().unwrap();
    let mut mode = goal.mode;
    while out.len() < n {
        let action = rng.gen_range(0..obs.num_actions());
        let step = env.step(Action::from_index(action)).unwrap();
        out.push(Transition {
            obs: obs.clone(),
            action,
            reward: step.reward * 0.1,
            next: step.observation.clone(),
            done: step.done,
            mode,
        });
        match step.observation {
            Some(next) if !step.done => obs = next,
            _ => {
                let (o, g) = env.reset().unwrap();
                obs = o;
                mode = g.mode;
            }
        }
    }
    out
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net: QNetwork<f64> = QNetwork::new(tiny_config(dim), &mut rng);
    // nonzero biases so that no unit sits exactly at the ReLU kink
    for t in net.params.iter_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    let batch_owned = rollout(dim, 12, 3);
    let batch: Vec<&Transition<f64>> = batch_owned.iter().collect();
    let targets: Vec<f64> = (0..batch.len()).map(|i| [-0.4, 0.3, 2.5, -1.7][i % 4]).collect();
    let config = LossConfig::default();

    let mut grads = net.zero_grads();
    loss_with_targets(&net, &batch, &targets, &config, Some(&mut grads)).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..net.params.len() {
        for i in 0..net.params[p].data.len() {
            let orig = net.params[p].data[i];
            net.params[p].data[i] = orig + h;
            let up = loss_with_targets(&net, &batch, &targets, &config, None).unwrap();
            net.params[p].data[i] = orig - h;
            let down = loss_with_targets(&net, &batch, &targets, &config, None).unwrap();
            net.params[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p][i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

/// Direct transcription of the target formula with explicit probabilities.
fn oracle_target(q_s: &[f64], a: usize, r: f64, q_next: &[f64], done: bool, p: &MunchausenParams) -> f64 {
    let policy = |q: &[f64]| -> Vec<f64> {
        let m = q.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = q.iter().map(|v| ((v - m) / p.tau).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    };
    let pi_s = policy(q_s);
    let bonus = (p.tau * pi_s[a].ln()).clamp(p.log_policy_clip, 0.0);
    let mut y = r + p.alpha * bonus;
    if !done {
        let pi_n = policy(q_next);
        let mut v = 0.0;
        for (q, pr) in q_next.iter().zip(&pi_n) {
            if *pr > 0.0 {
                v += pr * (q - p.tau * pr.ln());
            }
        }
        y += p.gamma * v;
    }
    y.clamp(-p.q_clip, p.q_clip)
}

#[test]
fn munchausen_matches_oracle_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let p = MunchausenParams {
        tau: 0.5,
        ..MunchausenParams::default()
    };
    for _ in 0..50 {
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=5);
        let q_s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q_next: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = rng.gen_range(0..n);
        let r = rng.gen_range(-2.0..2.0);
        let done = rng.gen_bool(0.3);
        let got = munchausen_target(&q_s, a, r, &q_next, done, &p).unwrap();
        assert_abs_diff_eq!(got, oracle_target(&q_s, a, r, &q_next, done, &p), epsilon = 1e-9);
    }
}

#[test]
fn vanishing_temperature_without_bonus_is_max_backup() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = MunchausenParams {
        alpha: 0.0,
        tau: 1e-6,
        ..MunchausenParams::default()
    };
    for _ in 0..50 {
        let q_next: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let r = rng.gen_range(-1.0..1.0);
        let max = q_next.iter().cloned().fold(f64::MIN, f64::max);
        let got = munchausen_target(&[0.0, 1.0], 0, r, &q_next, false, &p).unwrap();
        assert_abs_diff_eq!(got, r + 0.99 * max, epsilon = 1e-5);
    }
}

#[test]
fn replay_evicts_oldest_first() {
    let mut buffer = ReplayBuffer::new(3);
    for t in rollout(16, 5, 1) {
        buffer.push(t);
    }
    assert_eq!(buffer.len(), 3);
    let kept: Vec<usize> = buffer.iter().map(|t| t.obs.turn).collect();
    let all: Vec<usize> = rollout(16, 5, 1).iter().map(|t| t.obs.turn).collect();
    assert_eq!(kept, all[2..].to_vec());
}

fn small_trainer_config(total: u64) -> TrainerConfig {
    TrainerConfig {
        total_turns: total,
        batch_size: 8,
        learning_starts: 64,
        train_frequency: 2,
        learning_rate: 1e-3,
        eval_frequency: 500,
        eval_dialogs: 10,
        replay_capacity: 400,
        network: NetworkConfig {
            hidden1: 12,
            hidden2: 10,
            action_dim: 6,
            head_hidden: 8,
            ..tiny_config(32)
        },
        ..TrainerConfig::default()
    }
}

#[test]
fn target_network_only_changes_on_copy() {
    let mut trainer = Trainer::new(small_trainer_config(400), common::factory::<f64>("toy15", 32), 1).unwrap();
    let mut frozen = trainer.target().clone();
    let mut copies = 0;
    while trainer.turn() < 400 {
        let before = trainer.train_steps();
        trainer.step().unwrap();
        if trainer.train_steps() != before && trainer.train_steps() % 15 == 0 {
            assert_eq!(trainer.target().params, trainer.online().params);
            frozen = trainer.target().clone();
            copies += 1;
        } else {
            assert_eq!(trainer.target().params, frozen.params);
        }
    }
    assert!(copies >= 3);
    assert_ne!(trainer.online().params, frozen.params);
}

#[test]
fn same_seed_same_parameters() {
    let run = |seed| {
        let mut t = Trainer::new(small_trainer_config(600), common::factory::<f32>("toy15", 32), seed).unwrap();
        t.run().unwrap();
        (t.online().clone(), t.curve().to_vec())
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a.0, run(10).0);
}

#[test]
fn checkpoint_resume_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let config = small_trainer_config(1200);

    let mut straight = Trainer::new(config.clone(), common::factory::<f32>("toy15", 32), 4).unwrap();
    straight.run_until(1200).unwrap();

    let mut first = Trainer::new(config, common::factory::<f32>("toy15", 32), 4).unwrap();
    first.run_until(733).unwrap();
    first.checkpoint().save(&path).unwrap();
    drop(first);
    let ckpt = Checkpoint::<f32>::load(&path).unwrap();
    let mut resumed = Trainer::from_checkpoint(ckpt, common::factory::<f32>("toy15", 32)).unwrap();
    assert_eq!(resumed.turn(), 733);
    resumed.run_until(1200).unwrap();

    assert_eq!(resumed.online().params, straight.online().params);
    assert_eq!(resumed.target().params, straight.target().params);
    assert_eq!(resumed.curve(), straight.curve());
    assert_eq!(resumed.replay().len(), straight.replay().len());
}

#[test]
fn invalid_config_names_field() {
    let config = TrainerConfig {
        batch_size: 0,
        ..TrainerConfig::default()
    };
    let problems = config.validate();
    assert_eq!(problems[0].0, "batch_size");
    assert!(Trainer::new(config, common::factory::<f32>("toy15", 256), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bonus_term_stays_in_unit_interval(
        q in prop::collection::vec(-20.0f64..20.0, 1..6),
        pick in 0usize..6,
        tau in 1e-3f64..5.0,
    ) {
        let p = MunchausenParams { tau, gamma: 0.0, q_clip: 1e9, ..MunchausenParams::default() };
        let a = pick % q.len();
        let y = munchausen_target(&q, a, 0.0, &[], true, &p).unwrap();
        prop_assert!(y <= 0.0 && y >= p.alpha * -1.0 - 1e-12);
    }

    #[test]
    fn greedy_action_ignores_constant_shift(seed in 0u64..200, shift in -5.0f64..5.0) {
        let t = &rollout(16, 1, seed)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net: QNetwork<f64> = QNetwork::new(tiny_config(16), &mut rng);
        let before = net.act_greedy(&t.obs).unwrap().0;
        // the output bias shifts every action value equally
        net.params.last_mut().unwrap().data[0] += shift;
        prop_assert_eq!(net.act_greedy(&t.obs).unwrap().0, before);
    }
}

#[test]
fn mode_labels_follow_episode_mode() {
    let batch = rollout(16, 200, 8);
    assert!(batch.iter().any(|t| t.mode == DialogMode::Guided));
    assert!(batch.iter().any(|t| t.mode == DialogMode::Free));
}
