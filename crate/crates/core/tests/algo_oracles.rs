mod common;

use common::*;
use s2o_core::algo::{ActMode, Agent, AgentConfig, Algo, UpdateSchedule};
use s2o_core::diffcore::{LayerSpec, Network, OptState, Rng};
use s2o_core::replay::{AlphaSchedule, DualSampler, EndFlag, ReplayBuffer, TransitionRecord};

#[test]
fn target_matches_direct_formula() {
    let mut ag = agent(Algo::Sac, 1);
    ag.cfg.gamma = 0.9;
    constant(&mut ag.target_a, 2.0);
    constant(&mut ag.target_b, 2.0);
    ag.log_temp.fill(-1000.0);
    assert_eq!(ag.temperature(), 0.0);
    let mut rng = Rng::from_seed(2);
    let b = single([0.1, 0.2, 0.3], [0.0, 0.5], 1.0, [0.3, 0.2, 0.1], false);
    let y = ag.critic_target(&b, &mut rng).unwrap();
    assert!((y[0] - 2.8).abs() < 1e-12, "{}", y[0]);
    let term = single([0.1, 0.2, 0.3], [0.0, 0.5], 1.0, [0.3, 0.2, 0.1], true);
    assert_eq!(ag.critic_target(&term, &mut rng).unwrap()[0], 1.0);
    ag.cfg.gamma = 0.0;
    let mut rb = random_batch(16, &mut rng);
    rb.terminal.fill(false);
    let y = ag.critic_target(&rb, &mut rng).unwrap();
    for (y, r) in y.iter().zip(&rb.reward) {
        assert_eq!(*y, *r as f64);
    }
}

#[test]
fn critic_loss_matches_recomputation() {
    for algo in [Algo::Sac, Algo::Td3] {
        let mut ag = agent(algo, 3);
        let mut data_rng = Rng::from_seed(4);
        let batch = random_batch(32, &mut data_rng);
        let before = ag.clone();
        let mut rng = Rng::from_seed(5);
        let mut replay_rng = rng.clone();
        let stats = ag.critic_update(&batch, &mut rng).unwrap();

        let y: Vec<f64> = match algo {
            Algo::Sac => {
                let raw = before.actor.forward(&rows(3, &batch.next_obs)).unwrap().to_f64_vec();
                let (a2, lp) = draw(&raw, &mut replay_rng);
                let qa = q(&before.target_a, &batch.next_obs, &a2);
                let qb = q(&before.target_b, &batch.next_obs, &a2);
                (0..32)
                    .map(|i| {
                        let cont = if batch.terminal[i] { 0.0 } else { 1.0 };
                        batch.reward[i] as f64
                            + 0.99 * cont * (qa[i].min(qb[i]) - before.temperature() * lp[i])
                    })
                    .collect()
            }
            Algo::Td3 => {
                let ta = before.target_actor.as_ref().unwrap();
                let raw = ta.forward(&rows(3, &batch.next_obs)).unwrap().to_f64_vec();
                let a2: Vec<f64> = raw
                    .iter()
                    .map(|m| (m.tanh() + (0.2 * replay_rng.normal()).clamp(-0.5, 0.5)).clamp(-1.0, 1.0))
                    .collect();
                let qa = q(&before.target_a, &batch.next_obs, &a2);
                let qb = q(&before.target_b, &batch.next_obs, &a2);
                (0..32)
                    .map(|i| {
                        let cont = if batch.terminal[i] { 0.0 } else { 1.0 };
                        batch.reward[i] as f64 + 0.99 * cont * qa[i].min(qb[i])
                    })
                    .collect()
            }
        };
        let act: Vec<f64> = batch.action.iter().map(|&v| v as f64).collect();
        let half_sq = |net: &Network<f64>| {
            let qs = q(net, &batch.obs, &act);
            qs.iter().zip(&y).map(|(q, y)| 0.5 * (q - y).powi(2)).sum::<f64>() / 32.0
        };
        let expected = 0.5 * (half_sq(&before.critic_a) + half_sq(&before.critic_b));
        assert!(
            (stats.loss - expected).abs() <= 1e-6 * expected.abs(),
            "{algo}: {} vs {expected}",
            stats.loss
        );
    }
}

#[test]
fn actor_loss_and_gradient_match_recomputation() {
    for algo in [Algo::Sac, Algo::Td3] {
        let mut ag = agent(algo, 6);
        // push some log-std rows outside the clamp so the masked path is exercised
        let n = ag.actor.params().len();
        if algo == Algo::Sac {
            ag.actor.params_mut()[n - 1].data_mut()[2] = 2.5;
        }
        ag.log_temp.fill(0.3f64.ln());
        let batch = random_batch(24, &mut Rng::from_seed(7));
        let before = ag.clone();
        let rng = Rng::from_seed(8);
        let objective = |a: &Agent<f64>| match algo {
            Algo::Sac => sac_actor_objective(a, &batch, &mut rng.clone()),
            Algo::Td3 => td3_actor_objective(a, &batch),
        };
        let stats = ag.actor_update(&batch, &mut rng.clone()).unwrap();
        let expected = objective(&before);
        assert!((stats.loss - expected).abs() <= 1e-6 * expected.abs(), "{algo}: {} vs {expected}", stats.loss);

        let grads: Vec<Vec<f64>> = ag.actor.grads().iter().map(|g| g.data().to_vec()).collect();
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(3) {
                let mut up = before.clone();
                up.actor.params_mut()[pi].data_mut()[j] += h;
                let mut down = before.clone();
                down.actor.params_mut()[pi].data_mut()[j] -= h;
                let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
                let tol = 1e-4 * g[j].abs().max(numeric.abs()) + 1e-7;
                assert!((g[j] - numeric).abs() <= tol, "{algo} param {pi}[{j}]: {} vs {numeric}", g[j]);
            }
        }
    }
}

#[test]
fn temperature_loss_and_sign() {
    let mut ag = agent(Algo::Sac, 9);
    let batch = random_batch(16, &mut Rng::from_seed(10));
    // collapse the policy: entropy far below the target
    let n = ag.actor.params().len();
    let head = ag.actor.params_mut()[n - 1].data_mut();
    head[2] = -5.0;
    head[3] = -5.0;
    for w in ag.actor.params_mut()[n - 2].data_mut().iter_mut() {
        *w = 0.0;
    }
    let rng = Rng::from_seed(11);
    let raw = ag.actor.forward(&rows(3, &batch.obs)).unwrap().to_f64_vec();
    let (_, lp) = draw(&raw, &mut rng.clone());
    let gap = lp.iter().sum::<f64>() / 16.0 - 2.0;
    assert!(gap > 0.0);
    let log_temp = ag.log_temp.data()[0];
    let loss = ag.temperature_update(&batch, &mut rng.clone()).unwrap();
    assert!((loss - (-log_temp * gap)).abs() <= 1e-9 * loss.abs());
    assert!(ag.log_temp.data()[0] > log_temp);
    assert!(ag.temperature() > 0.0);

    // unit-variance pre-squash policy: entropy above the target
    let mut wide = agent(Algo::Sac, 9);
    let n = wide.actor.params().len();
    wide.actor.params_mut()[n - 1].fill(0.0);
    for w in wide.actor.params_mut()[n - 2].data_mut().iter_mut() {
        *w = 0.0;
    }
    let before = wide.log_temp.data()[0];
    wide.temperature_update(&batch, &mut rng.clone()).unwrap();
    assert!(wide.log_temp.data()[0] < before);
}

#[test]
fn flat_objective_leaves_actor_unchanged() {
    let mut ag = agent(Algo::Sac, 12);
    constant(&mut ag.critic_a, 1.0);
    constant(&mut ag.critic_b, 1.0);
    ag.log_temp.fill(-1000.0);
    let before = Agent::hash_network(&ag.actor);
    let batch = random_batch(8, &mut Rng::from_seed(13));
    ag.actor_update(&batch, &mut Rng::from_seed(14)).unwrap();
    assert!(ag.actor.grads().iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    assert_eq!(Agent::hash_network(&ag.actor), before);
}

#[test]
fn linear_critic_pulls_mean_up() {
    let mut ag = agent(Algo::Sac, 15);
    let linear = |rng: &mut Rng| {
        let mut net = Network::<f64>::new(5, &[LayerSpec::Linear { inputs: 5, outputs: 1 }], rng).unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        // Q(s, a) = a_1
        net.params_mut()[0].data_mut()[3] = 1.0;
        net
    };
    let mut rng = Rng::from_seed(16);
    ag.critic_a = linear(&mut rng);
    ag.critic_b = linear(&mut rng);
    ag.critic_a_opt = OptState::new(ag.critic_a.params(), 3e-4);
    ag.critic_b_opt = OptState::new(ag.critic_b.params(), 3e-4);
    ag.log_temp.fill(-6.0);
    let batch = random_batch(32, &mut rng);
    let probe = [0.2, -0.4, 0.6];
    let start = ag.act(&probe, ActMode::Deterministic, &mut rng).unwrap()[0];
    let mut prev = start;
    for _ in 0..100 {
        ag.actor_update(&batch, &mut rng).unwrap();
        let now = ag.act(&probe, ActMode::Deterministic, &mut rng).unwrap()[0];
        assert!(now > prev, "{now} <= {prev}");
        prev = now;
    }
}

#[test]
fn critic_fixed_points() {
    let mut ag = agent(Algo::Sac, 17);
    ag.cfg.gamma = 0.0;
    constant(&mut ag.critic_a, 2.0);
    constant(&mut ag.critic_b, 2.0);
    let b = single([0.5, -0.5, 0.1], [0.3, -0.2], 2.0, [0.0, 0.0, 0.0], false);
    let ha = Agent::hash_network(&ag.critic_a);
    let stats = ag.critic_update(&b, &mut Rng::from_seed(18)).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert_eq!(Agent::hash_network(&ag.critic_a), ha);

    let mut ag = agent(Algo::Sac, 19);
    let b = single([0.5, -0.5, 0.1], [0.3, -0.2], 1.5, [0.2, 0.1, 0.0], false);
    ag.cfg.gamma = 0.0;
    let mut rng = Rng::from_seed(20);
    let mut converged_at = None;
    for step in 1..=5000 {
        ag.critic_update(&b, &mut rng).unwrap();
        let qa = q(&ag.critic_a, &b.obs, &[0.3, -0.2])[0];
        let qb = q(&ag.critic_b, &b.obs, &[0.3, -0.2])[0];
        if (qa - 1.5).abs() < 1e-2 && (qb - 1.5).abs() < 1e-2 {
            converged_at = Some(step);
            break;
        }
    }
    assert!(converged_at.is_some());
}

#[test]
fn updates_touch_only_their_own_parameters() {
    for algo in [Algo::Sac, Algo::Td3] {
        let mut ag = agent(algo, 21);
        let batch = random_batch(16, &mut Rng::from_seed(22));
        let mut rng = Rng::from_seed(23);
        let actor = Agent::hash_network(&ag.actor);
        let targets = (Agent::hash_network(&ag.target_a), Agent::hash_network(&ag.target_b));
        for _ in 0..25 {
            ag.critic_update(&batch, &mut rng).unwrap();
        }
        assert_eq!(Agent::hash_network(&ag.actor), actor);
        assert_eq!((Agent::hash_network(&ag.target_a), Agent::hash_network(&ag.target_b)), targets);

        let critics = (Agent::hash_network(&ag.critic_a), Agent::hash_network(&ag.critic_b));
        ag.actor_update(&batch, &mut rng).unwrap();
        ag.temperature_update(&batch, &mut rng).unwrap();
        assert_eq!((Agent::hash_network(&ag.critic_a), Agent::hash_network(&ag.critic_b)), critics);
        assert_eq!((Agent::hash_network(&ag.target_a), Agent::hash_network(&ag.target_b)), targets);
        assert_ne!(Agent::hash_network(&ag.actor), actor);
    }
}

#[test]
fn polyak_arithmetic() {
    let mut ag = agent(Algo::Td3, 24);
    for net in [&mut ag.target_a, &mut ag.target_b] {
        for p in net.params_mut() {
            p.fill(1.0);
        }
    }
    for net in [&mut ag.critic_a, &mut ag.critic_b] {
        for p in net.params_mut() {
            p.fill(3.0);
        }
    }
    ag.polyak().unwrap();
    for p in ag.target_a.params().iter().chain(ag.target_b.params()) {
        assert!(p.data().iter().all(|&v| (v - 1.01).abs() < 1e-12));
    }
    for (t, a) in ag.target_actor.as_ref().unwrap().params().iter().zip(ag.actor.params()) {
        assert!(t.data().iter().zip(a.data()).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    ag.cfg.tau = 1.0;
    ag.polyak().unwrap();
    assert_eq!(ag.target_a.params(), ag.critic_a.params());
    let frozen = ag.target_b.clone();
    ag.target_b.polyak_from(&ag.critic_a, 0.0).unwrap();
    assert_eq!(ag.target_b, frozen);
}

fn tiny_sampler(rng: &mut Rng) -> DualSampler {
    let mut online = ReplayBuffer::unbounded(3, 2);
    for _ in 0..200 {
        let v = |n: usize, rng: &mut Rng| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>();
        let (o, a, n) = (v(3, rng), v(2, rng), v(3, rng));
        online
            .push(&TransitionRecord::from_f64(&o, &a, rng.uniform(-1.0, 1.0), &n, EndFlag::None))
            .unwrap();
    }
    DualSampler::new(ReplayBuffer::unbounded(3, 2), online, AlphaSchedule::default()).unwrap()
}

#[test]
fn actor_update_counts() {
    let mut rng = Rng::from_seed(25);
    let sampler = tiny_sampler(&mut rng);
    let mut ag = Agent::<f32>::new(
        AgentConfig {
            actor_hidden: 4,
            critic_hidden: 4,
            critic_blocks: 0,
            ..small(Algo::Sac)
        },
        &mut rng,
    )
    .unwrap();
    for (period, expected) in [(20, 62), (1, 1250)] {
        let sched = UpdateSchedule {
            actor_period: period,
            batch_size: 4,
            ..UpdateSchedule::default()
        };
        assert_eq!(sched.actor_updates(), expected);
        let steps_before = ag.actor_opt.step;
        let mut count = 0;
        for k in 1..=sched.updates {
            if ag.update_step(&sampler, &sched, k, &mut rng).unwrap().actor_loss.is_some() {
                count += 1;
            }
        }
        assert_eq!(count, expected);
        assert_eq!(ag.actor_opt.step - steps_before, expected);
    }
    let sched = UpdateSchedule::default();
    assert_eq!(sched.utd(), 5.0);
    assert!(ag.update_step(&sampler, &sched, 0, &mut rng).is_err());
    assert!(ag.update_step(&sampler, &sched, 1251, &mut rng).is_err());
}

#[test]
fn identical_inputs_give_identical_state() {
    for algo in [Algo::Sac, Algo::Td3] {
        let mut rng = Rng::from_seed(26);
        let sampler = tiny_sampler(&mut rng);
        let base = Agent::<f32>::new(small(algo), &mut rng).unwrap();
        let sched = UpdateSchedule {
            actor_period: 2,
            batch_size: 16,
            ..UpdateSchedule::default()
        };
        let run = || {
            let mut ag = base.clone();
            let mut r = Rng::from_seed(27);
            for k in 1..=40 {
                ag.update_step(&sampler, &sched, k, &mut r).unwrap();
            }
            (ag.state_hash(), r)
        };
        assert_eq!(run(), run());
        assert_ne!(run().0, base.state_hash());
    }
}

#[test]
fn acting() {
    let mut ag = agent(Algo::Sac, 28);
    let n = ag.actor.params().len();
    for i in [n - 2, n - 1] {
        ag.actor.params_mut()[i].fill(0.0);
    }
    let mut rng = Rng::from_seed(29);
    let obs = [0.3, -0.1, 0.7];
    assert_eq!(ag.act(&obs, ActMode::Deterministic, &mut rng).unwrap(), vec![0.0, 0.0]);
    let many: Vec<f64> = (0..50_000).flat_map(|_| obs).collect();
    let acts = ag.act(&many, ActMode::Stochastic, &mut rng).unwrap();
    assert_eq!(acts.len(), 100_000);
    assert!(acts.iter().all(|a| a.abs() < 1.0));
    let snapshot = rng.clone();
    let a1 = ag.act(&obs, ActMode::Stochastic, &mut rng).unwrap();
    let a2 = ag.act(&obs, ActMode::Stochastic, &mut snapshot.clone()).unwrap();
    assert_eq!(a1, a2);
    assert!(ag.act(&[f64::NAN, 0.0, 0.0], ActMode::Deterministic, &mut rng).is_err());

    let td3 = agent(Algo::Td3, 30);
    let acts = td3.act(&many, ActMode::Stochastic, &mut rng).unwrap();
    assert!(acts.iter().all(|a| a.abs() <= 1.0));
}
