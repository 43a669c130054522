//! Independent reference implementations shared by the oracle suites.
#![allow(dead_code)]

use s2o_core::algo::{Agent, AgentConfig, Algo};
use s2o_core::diffcore::{GradMode, Network, Rng, Tensor};
use s2o_core::envs::{CarParams, CarState};
use s2o_core::replay::Batch;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// loss = sum(c * y) + 0.5 * sum(y^2)
fn loss(net: &Network<f64>, x: &Tensor<f64>, c: &[f64]) -> f64 {
    let y = net.forward(x).unwrap();
    y.data().iter().zip(c).map(|(y, c)| c * y + 0.5 * y * y).sum()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + 1e-8
}

/// Compares parameter and input gradients of `instances` random networks
/// with central differences; the first mismatch is returned as an error.
pub fn check_with(
    label: &str,
    seed: u64,
    instances: usize,
    build: impl Fn(&mut Rng) -> Network<f64>,
) -> Result<(), String> {
    let mut rng = Rng::from_seed(seed);
    for instance in 0..instances {
        let mut net = build(&mut rng);
        let in_dim = net.in_dim();
        // perturb norm gains/biases away from their (1, 0) init
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.uniform(-0.3, 0.3);
            }
        }
        let batch = 1 + rng.index(4);
        let x = Tensor::from_f64(
            &[batch, in_dim],
            &(0..batch * in_dim).map(|_| rng.uniform(-1.5, 1.5)).collect::<Vec<_>>(),
        )
        .unwrap();
        let out_dim = net.out_dim();
        let c: Vec<f64> = (0..batch * out_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let (y, trace) = net.forward_traced(&x).unwrap();
        let d_out: Vec<f64> = y.data().iter().zip(&c).map(|(y, c)| c + y).collect();
        net.zero_grad();
        let d_in = net
            .backward(
                &trace,
                &Tensor::from_f64(&[batch, out_dim], &d_out).unwrap(),
                GradMode::Params,
            )
            .unwrap();
        let grads: Vec<Vec<f64>> = net.grads().iter().map(|g| g.data().to_vec()).collect();

        for (pi, g) in grads.iter().enumerate() {
            for (j, &analytic) in g.iter().enumerate() {
                let orig = net.params()[pi].data()[j];
                net.params_mut()[pi].data_mut()[j] = orig + STEP;
                let up = loss(&net, &x, &c);
                net.params_mut()[pi].data_mut()[j] = orig - STEP;
                let down = loss(&net, &x, &c);
                net.params_mut()[pi].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                if !close(analytic, numeric) {
                    return Err(format!(
                        "{label} instance {instance}: param {} [{j}] analytic {analytic} numeric {numeric}",
                        net.param_names()[pi]
                    ));
                }
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[j] += STEP;
            let mut xm = x.clone();
            xm.data_mut()[j] -= STEP;
            let numeric = (loss(&net, &xp, &c) - loss(&net, &xm, &c)) / (2.0 * STEP);
            let analytic = d_in.data()[j];
            if !close(analytic, numeric) {
                return Err(format!(
                    "{label} instance {instance}: input [{j}] analytic {analytic} numeric {numeric}"
                ));
            }
        }
    }
    Ok(())
}

/// Written from the model equations without reusing library code.
/// Valid away from standstill (|vx| above the rolling-resistance ramp).
pub fn reference_derivative(s: [f64; 6], steer: f64, throttle: f64, p: &CarParams) -> [f64; 6] {
    let (x_dot, y_dot) = (
        s[3] * s[2].cos() - s[4] * s[2].sin(),
        s[3] * s[2].sin() + s[4] * s[2].cos(),
    );
    let (vx, vy, r) = (s[3], s[4], s[5]);
    let rolling = if vx > 0.0 {
        p.cr0
    } else if vx < 0.0 {
        -p.cr0
    } else {
        0.0
    };
    let fx = (p.cm1 - p.cm2 * vx) * throttle - rolling - p.cd * vx * vx.abs();
    let alpha_front = steer - ((vy + r * p.lf) / vx).atan();
    let alpha_rear = ((r * p.lr - vy) / vx).atan();
    let pacejka = |d: f64, c: f64, b: f64, a: f64| d * (c * (b * a).atan()).sin();
    let f_front = pacejka(p.df, p.cf, p.bf, alpha_front);
    let f_rear = pacejka(p.dr, p.cr, p.br, alpha_rear);
    let dyn_ = [
        (fx - f_front * steer.sin()) / p.mass + vy * r,
        (f_rear + f_front * steer.cos()) / p.mass - vx * r,
        (p.lf * f_front * steer.cos() - p.lr * f_rear) / p.inertia_z,
    ];
    let kin_accel = fx / p.mass;
    let kin_r_dot = kin_accel * steer.tan() / (p.lf + p.lr);
    let kin = [kin_accel, p.lr * kin_r_dot, kin_r_dot];
    let w = (vx.abs() / p.blend_speed).min(1.0);
    [
        x_dot,
        y_dot,
        r,
        w * dyn_[0] + (1.0 - w) * kin[0],
        w * dyn_[1] + (1.0 - w) * kin[1],
        w * dyn_[2] + (1.0 - w) * kin[2],
    ]
}

pub fn euler_reference(state: &CarState, action: [f64; 2], p: &CarParams, dt: f64, h: f64) -> [f64; 6] {
    let mut s = [state.px, state.py, state.yaw, state.vx, state.vy, state.yaw_rate];
    let steps = (dt / h).ceil() as usize;
    let h = dt / steps as f64;
    for _ in 0..steps {
        let d = reference_derivative(s, action[0] * p.max_steer, action[1], p);
        for i in 0..6 {
            s[i] += h * d[i];
        }
    }
    s
}

pub fn as_array(s: &CarState) -> [f64; 6] {
    [s.px, s.py, s.yaw, s.vx, s.vy, s.yaw_rate]
}

pub fn small(algo: Algo) -> AgentConfig {
    AgentConfig {
        algo,
        obs_dim: 3,
        act_dim: 2,
        actor_hidden: 8,
        critic_hidden: 8,
        critic_blocks: 1,
        ..AgentConfig::default()
    }
}

pub fn agent(algo: Algo, seed: u64) -> Agent<f64> {
    Agent::new(small(algo), &mut Rng::from_seed(seed)).unwrap()
}

pub fn random_batch(rows: usize, rng: &mut Rng) -> Batch {
    let mut b = Batch::with_dims(3, 2, rows);
    for i in 0..rows {
        b.obs.extend((0..3).map(|_| rng.uniform(-1.0, 1.0) as f32));
        b.action.extend((0..2).map(|_| rng.uniform(-0.9, 0.9) as f32));
        b.reward.push(rng.uniform(-1.0, 1.0) as f32);
        b.next_obs.extend((0..3).map(|_| rng.uniform(-1.0, 1.0) as f32));
        b.terminal.push(i % 5 == 4);
        b.offline.push(false);
    }
    b
}

pub fn single(obs: [f32; 3], action: [f32; 2], reward: f32, next: [f32; 3], terminal: bool) -> Batch {
    Batch {
        obs_dim: 3,
        act_dim: 2,
        obs: obs.to_vec(),
        action: action.to_vec(),
        reward: vec![reward],
        next_obs: next.to_vec(),
        terminal: vec![terminal],
        offline: vec![false],
    }
}

/// Zeroes a network and sets the bias of its last layer.
pub fn constant(net: &mut Network<f64>, value: f64) {
    for p in net.params_mut() {
        p.fill(0.0);
    }
    let last = net.params_mut().last_mut().unwrap();
    last.fill(value);
}

pub fn rows(cols: usize, v: &[f32]) -> Tensor<f64> {
    Tensor::from_f64(
        &[v.len() / cols, cols],
        &v.iter().map(|&x| x as f64).collect::<Vec<_>>(),
    )
    .unwrap()
}

pub fn q(net: &Network<f64>, obs: &[f32], act: &[f64]) -> Vec<f64> {
    let s = rows(3, obs);
    let a = Tensor::from_f64(&[act.len() / 2, 2], act).unwrap();
    net.forward(&Tensor::concat_cols(&s, &a).unwrap()).unwrap().to_f64_vec()
}

/// Independent tanh-Gaussian draw using the log-cosh form of the Jacobian.
pub fn draw(raw: &[f64], rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut actions = Vec::new();
    let mut logps = Vec::new();
    for row in raw.chunks(4) {
        let mut lp = 0.0;
        for i in 0..2 {
            let ls = row[2 + i].clamp(-5.0, 2.0);
            let eps = rng.normal();
            let u = row[i] + ls.exp() * eps;
            // log(1 - tanh^2 u) = -2 log cosh u
            let log_cosh = u.abs() + (-2.0 * u.abs()).exp().ln_1p() - std::f64::consts::LN_2;
            lp += -0.5 * eps * eps - ls - HALF_LOG_TWO_PI + 2.0 * log_cosh;
            actions.push(u.tanh());
        }
        logps.push(lp);
    }
    (actions, logps)
}

pub fn sac_actor_objective(ag: &Agent<f64>, batch: &Batch, rng: &mut Rng) -> f64 {
    let raw = ag.actor.forward(&rows(3, &batch.obs)).unwrap().to_f64_vec();
    let (act, lp) = draw(&raw, rng);
    let qa = q(&ag.critic_a, &batch.obs, &act);
    let qb = q(&ag.critic_b, &batch.obs, &act);
    let temp = ag.temperature();
    (0..batch.len()).map(|i| temp * lp[i] - qa[i].min(qb[i])).sum::<f64>() / batch.len() as f64
}

pub fn td3_actor_objective(ag: &Agent<f64>, batch: &Batch) -> f64 {
    let raw = ag.actor.forward(&rows(3, &batch.obs)).unwrap().to_f64_vec();
    let act: Vec<f64> = raw.iter().map(|m| m.tanh()).collect();
    -q(&ag.critic_a, &batch.obs, &act).iter().sum::<f64>() / batch.len() as f64
}
