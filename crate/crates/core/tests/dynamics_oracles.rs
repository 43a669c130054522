//! Car dynamics against independent references: a separately written
//! fine-step Euler integrator, closed-form turning geometry, and
//! distributional checks on resets.

mod common;

use common::{as_array, euler_reference};
use s2o_core::diffcore::Rng;
use s2o_core::envs::car::{self, CONTROL_DT};
use s2o_core::envs::{
    reset, reward, step_dynamic, step_kinematic, vec_step, Backend, CarParams, CarState, RandomizationSpec,
    RewardParams,
};

#[test]
fn rk4_matches_fine_euler() {
    let p = CarParams::default();
    let start = CarState {
        vx: 1.0,
        ..CarState::at_rest(0.0, 0.0, 0.0, [2.0, 2.0])
    };
    let action = [0.2, 0.5];
    let rk = step_dynamic(&start, action, &p, CONTROL_DT).unwrap();
    let euler = euler_reference(&start, action, &p, CONTROL_DT, 1e-5);
    for (i, (a, b)) in as_array(&rk).iter().zip(&euler).enumerate() {
        assert!((a - b).abs() <= 1e-4, "component {i}: rk4 {a} euler {b}");
    }

    // a second, more aggressive state: sliding with yaw rate at speed
    let start = CarState {
        vx: 3.0,
        vy: -0.4,
        yaw_rate: 1.5,
        ..CarState::at_rest(1.0, -1.0, 0.8, [0.0, 0.0])
    };
    let action = [-0.7, 1.0];
    let rk = step_dynamic(&start, action, &p, CONTROL_DT).unwrap();
    let euler = euler_reference(&start, action, &p, CONTROL_DT, 1e-5);
    for (i, (a, b)) in as_array(&rk).iter().zip(&euler).enumerate() {
        assert!((a - b).abs() <= 1e-4, "component {i}: rk4 {a} euler {b}");
    }
}

fn substep_gap(s: &CarState, action: [f64; 2], coarse: usize, fine: usize) -> f64 {
    let p = CarParams::default();
    let a = car::step_dynamic_substeps(s, action, &p, CONTROL_DT, coarse).unwrap();
    let b = car::step_dynamic_substeps(s, action, &p, CONTROL_DT, fine).unwrap();
    as_array(&a)
        .iter()
        .zip(&as_array(&b))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn moving(vx: f64, vy: f64, w: f64) -> CarState {
    CarState {
        vx,
        vy,
        yaw_rate: w,
        ..CarState::at_rest(0.0, 0.0, 0.3, [0.0, 0.0])
    }
}

#[test]
fn halving_substep_changes_little() {
    for (vx, vy, w, action) in [
        (3.0, 0.1, 0.5, [-0.5, 0.8]),
        (3.0, -0.1, -0.5, [0.6, -0.3]),
        (4.0, 0.0, 0.0, [0.2, 0.5]),
    ] {
        let gap = substep_gap(&moving(vx, vy, w), action, 4, 8);
        assert!(gap < 1e-6, "vx {vx}: gap {gap}");
    }
}

#[test]
fn low_speed_substep_error_stays_bounded() {
    // lateral modes stiffen as 1/vx, so the slow end is checked against the
    // per-step dynamics oracle bound instead
    for vx in [1.0, 1.5, 2.0] {
        for action in [[0.2, 0.5], [0.5, -1.0], [-0.3, 1.0]] {
            let gap = substep_gap(&moving(vx, 0.0, 0.0), action, 4, 256);
            assert!(gap < 1e-4, "vx {vx} action {action:?}: gap {gap}");
        }
    }
}

#[test]
fn kinematic_constant_steer_traces_circle() {
    // no drivetrain or resistance: speed is exactly conserved
    let p = CarParams {
        cm1: 0.0,
        cm2: 0.0,
        cr0: 0.0,
        cd: 0.0,
        ..CarParams::default()
    };
    let action = [0.5, 0.0];
    let delta = action[0] * p.max_steer;
    let beta = (p.lr * delta.tan() / (p.lf + p.lr)).atan();
    let radius = p.lr / beta.sin();
    let speed = 1.2;
    let yaw0: f64 = 0.4;
    let mut s = CarState {
        vx: speed * beta.cos(),
        vy: speed * beta.sin(),
        yaw_rate: speed * beta.sin() / p.lr,
        ..CarState::at_rest(0.5, -0.5, yaw0, [0.0, 0.0])
    };
    // center lies a radius to the left of the velocity direction
    let heading = yaw0 + beta;
    let center = (s.px - radius * heading.sin(), s.py + radius * heading.cos());
    for _ in 0..600 {
        s = step_kinematic(&s, action, &p, CONTROL_DT).unwrap();
        let r = (s.px - center.0).hypot(s.py - center.1);
        assert!((r - radius).abs() < 1e-6, "radius {r} vs {radius}");
        assert!((s.speed() - speed).abs() < 1e-12);
    }
}

#[test]
fn backends_agree_at_low_speed() {
    let p = CarParams::default();
    let speed = 0.3 * p.blend_speed;
    for steer_action in [-0.05, 0.02, 0.05] {
        let delta = steer_action * p.max_steer;
        let beta = car::slip_angle(delta, &p);
        let s = CarState {
            vx: speed * beta.cos(),
            vy: speed * beta.sin(),
            yaw_rate: speed * beta.sin() / p.lr,
            ..CarState::at_rest(0.0, 0.0, 0.2, [0.0, 0.0])
        };
        for throttle in [0.0, 0.2] {
            let a = [steer_action, throttle];
            let k = step_kinematic(&s, a, &p, CONTROL_DT).unwrap();
            let d = step_dynamic(&s, a, &p, CONTROL_DT).unwrap();
            let dk: Vec<f64> = as_array(&k).iter().zip(&as_array(&s)).map(|(a, b)| a - b).collect();
            let dd: Vec<f64> = as_array(&d).iter().zip(&as_array(&s)).map(|(a, b)| a - b).collect();
            let diff = dk.iter().zip(&dd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = dk.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 0.05 * scale, "steer {steer_action} throttle {throttle}: {diff} vs {scale}");
        }
    }
}

#[test]
fn coasting_never_gains_speed() {
    let p = CarParams::default();
    for backend in [Backend::Kinematic, Backend::Dynamic] {
        for steer in [0.0, 0.3, -1.0] {
            let mut s = CarState {
                vx: 5.0,
                ..CarState::at_rest(0.0, 0.0, 0.0, [0.0, 0.0])
            };
            let mut prev = s.speed();
            for _ in 0..600 {
                s = car::step(backend, &s, [steer, 0.0], &p, CONTROL_DT).unwrap();
                let v = s.speed();
                assert!(v <= prev + 1e-12, "{backend:?} steer {steer}: {prev} -> {v}");
                prev = v;
            }
        }
    }
}

#[test]
fn progress_terms_telescope() {
    let rp = RewardParams::default();
    let p = CarParams::default();
    let mut s = CarState {
        vx: 2.0,
        yaw_rate: 0.5,
        ..CarState::at_rest(-1.0, 2.0, 1.0, [1.5, -0.5])
    };
    let d0 = s.goal_distance();
    let mut sum = 0.0;
    for _ in 0..250 {
        let next = step_dynamic(&s, [0.0, 0.0], &p, CONTROL_DT).unwrap();
        let d_prev = s.goal_distance();
        let d_t = next.goal_distance();
        let bonus = if d_t <= rp.goal_radius { 1.0 } else { 0.0 };
        sum += reward(d_prev, d_t, [0.0; 2], s.prev_action, &rp) - bonus;
        s = next;
    }
    assert!((sum - (d0 - s.goal_distance())).abs() < 1e-12);
}

#[test]
fn reset_parameter_means() {
    let spec = RandomizationSpec::default();
    let mut rng = Rng::from_seed(2024);
    let n = 10_000;
    let mut sums = [0.0; 5];
    for _ in 0..n {
        let (_, p, _) = reset(&mut rng, &spec, Backend::Kinematic).unwrap();
        for (acc, v) in sums.iter_mut().zip([p.cm1, p.cm2, p.df, p.dr, p.mass]) {
            *acc += v;
        }
    }
    for (sum, (lo, hi)) in sums.iter().zip([spec.cm1, spec.cm2, spec.df, spec.dr, spec.mass]) {
        let mean = sum / n as f64;
        let mid = 0.5 * (lo + hi);
        let se = (hi - lo) / (12.0 * n as f64).sqrt();
        assert!((mean - mid).abs() <= 3.0 * se, "mean {mean} vs midpoint {mid} (se {se})");
    }
}

#[test]
fn vec_step_is_elementwise() {
    let p = CarParams::default();
    let rp = RewardParams::default();
    let mut rng = Rng::from_seed(8);
    let n = 40;
    let states: Vec<CarState> = (0..n)
        .map(|_| CarState {
            vx: rng.uniform(-1.0, 4.0),
            vy: rng.uniform(-0.3, 0.3),
            yaw_rate: rng.uniform(-1.0, 1.0),
            ..CarState::at_rest(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), [0.0, 1.0])
        })
        .collect();
    let actions: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
    let params = vec![p; n];
    for backend in [Backend::Kinematic, Backend::Dynamic] {
        let all = vec_step(&states, &actions, &params, &rp, backend, CONTROL_DT).unwrap();
        // singleton batches equal the scalar step
        for i in 0..n {
            let one = vec_step(&states[i..=i], &actions[i..=i], &params[i..=i], &rp, backend, CONTROL_DT).unwrap();
            assert_eq!(one[0], all[i]);
            let scalar = car::transition(backend, &states[i], actions[i], &p, &rp, CONTROL_DT).unwrap();
            assert_eq!(scalar, all[i]);
        }
        // permutation commutes with stepping
        let perm: Vec<usize> = (0..n).rev().collect();
        let ps: Vec<_> = perm.iter().map(|&i| states[i]).collect();
        let pa: Vec<_> = perm.iter().map(|&i| actions[i]).collect();
        let permuted = vec_step(&ps, &pa, &params, &rp, backend, CONTROL_DT).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(permuted[k], all[i]);
        }
    }
}

#[test]
fn replicated_batch_gives_replicated_output() {
    let p = CarParams::default();
    let rp = RewardParams::default();
    let s = CarState {
        vx: 2.0,
        ..CarState::at_rest(0.0, 0.0, 0.0, [1.0, 1.0])
    };
    let out = vec_step(&vec![s; 512], &vec![[0.3, 0.7]; 512], &vec![p; 512], &rp, Backend::Dynamic, CONTROL_DT).unwrap();
    assert_eq!(out.len(), 512);
    assert!(out.iter().all(|o| *o == out[0]));
}

#[test]
fn observation_is_pure_function_of_state() {
    let s = CarState {
        vx: 1.0,
        vy: 0.1,
        yaw_rate: -0.2,
        prev_action: [0.3, -0.4],
        ..CarState::at_rest(2.0, -1.0, 0.5, [1.0, 1.0])
    };
    let o = s.observation();
    assert_eq!(o, s.observation());
    assert_eq!(o.0, [1.0, -2.0, 0.5f64.sin(), 0.5f64.cos(), 1.0, 0.1, -0.2, 0.3, -0.4]);
}
