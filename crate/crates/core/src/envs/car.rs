//! Race-car dynamics: a slip-free kinematic bicycle used as the cheap prior
//! and a dynamic bicycle with Pacejka lateral tire forces used as the target.

use serde::{Deserialize, Serialize};

use super::{Backend, EnvError};
use crate::diffcore::Rng;

/// Half width of the square arena, metres.
pub const ARENA_HALF_WIDTH: f64 = 4.0;
/// Minimum start-to-goal distance at reset, metres.
pub const MIN_GOAL_DISTANCE: f64 = 1.0;
pub const OBS_DIM: usize = 9;
pub const ACT_DIM: usize = 2;
/// Control period of the car, seconds (60 Hz).
pub const CONTROL_DT: f64 = 1.0 / 60.0;
pub const RK4_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub px: f64,
    pub py: f64,
    pub yaw: f64,
    /// Body-frame longitudinal velocity.
    pub vx: f64,
    /// Body-frame lateral velocity.
    pub vy: f64,
    pub yaw_rate: f64,
    pub prev_action: [f64; 2],
    pub goal: [f64; 2],
}

impl CarState {
    pub fn at_rest(px: f64, py: f64, yaw: f64, goal: [f64; 2]) -> Self {
        Self {
            px,
            py,
            yaw,
            vx: 0.0,
            vy: 0.0,
            yaw_rate: 0.0,
            prev_action: [0.0; 2],
            goal,
        }
    }

    pub fn goal_distance(&self) -> f64 {
        (self.px - self.goal[0]).hypot(self.py - self.goal[1])
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    fn is_finite(&self) -> bool {
        [self.px, self.py, self.yaw, self.vx, self.vy, self.yaw_rate]
            .iter()
            .chain(&self.prev_action)
            .chain(&self.goal)
            .all(|v| v.is_finite())
    }

    /// Policy input: goal-relative position, heading as (sin, cos), body
    /// velocities, yaw rate and the previous action.
    pub fn observation(&self) -> Observation {
        Observation([
            self.px - self.goal[0],
            self.py - self.goal[1],
            self.yaw.sin(),
            self.yaw.cos(),
            self.vx,
            self.vy,
            self.yaw_rate,
            self.prev_action[0],
            self.prev_action[1],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarParams {
    pub mass: f64,
    pub lf: f64,
    pub lr: f64,
    pub inertia_z: f64,
    pub bf: f64,
    pub cf: f64,
    pub df: f64,
    pub br: f64,
    pub cr: f64,
    pub dr: f64,
    pub cm1: f64,
    pub cm2: f64,
    pub cr0: f64,
    pub cd: f64,
    pub max_steer: f64,
    pub blend_speed: f64,
}

impl Default for CarParams {
    /// RC-scale nominal car.
    fn default() -> Self {
        Self {
            mass: 3.0,
            lf: 0.15,
            lr: 0.15,
            inertia_z: 0.05,
            bf: 8.0,
            cf: 1.4,
            df: 10.0,
            br: 8.0,
            cr: 1.4,
            dr: 10.0,
            cm1: 10.0,
            cm2: 0.5,
            cr0: 0.5,
            cd: 0.1,
            max_steer: 0.4,
            blend_speed: 0.5,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("mass", self.mass),
            ("inertia_z", self.inertia_z),
            ("lf", self.lf),
            ("lr", self.lr),
            ("max_steer", self.max_steer),
            ("blend_speed", self.blend_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.df < 0.0 || self.dr < 0.0 {
            return Err(EnvError::InvalidParams("peak tire forces must be non-negative".into()));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Drivetrain force: motor term minus rolling resistance and drag, both of
    /// which oppose the direction of travel and vanish at rest.
    pub fn drive_force(&self, v: f64, throttle: f64) -> f64 {
        (self.cm1 - self.cm2 * v) * throttle - self.cr0 * rolling_sign(v) - self.cd * v * v.abs()
    }
}

/// Speed below which rolling resistance ramps linearly to zero.
const ROLLING_RAMP: f64 = 0.01;

/// Sign of `v`, saturated over [`ROLLING_RAMP`] so a coasting car settles at
/// rest instead of chattering across zero.
fn rolling_sign(v: f64) -> f64 {
    (v / ROLLING_RAMP).clamp(-1.0, 1.0)
}

/// Uniform ranges for the domain-randomized parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSpec {
    pub cm1: (f64, f64),
    pub cm2: (f64, f64),
    pub df: (f64, f64),
    pub dr: (f64, f64),
    pub mass: (f64, f64),
}

impl Default for RandomizationSpec {
    /// +-20% around nominal.
    fn default() -> Self {
        let n = CarParams::default();
        let around = |v: f64| (0.8 * v, 1.2 * v);
        Self {
            cm1: around(n.cm1),
            cm2: around(n.cm2),
            df: around(n.df),
            dr: around(n.dr),
            mass: around(n.mass),
        }
    }
}

impl RandomizationSpec {
    /// Every range collapsed onto the nominal value.
    pub fn nominal() -> Self {
        let n = CarParams::default();
        Self {
            cm1: (n.cm1, n.cm1),
            cm2: (n.cm2, n.cm2),
            df: (n.df, n.df),
            dr: (n.dr, n.dr),
            mass: (n.mass, n.mass),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ranges = [
            ("cm1", self.cm1),
            ("cm2", self.cm2),
            ("df", self.df),
            ("dr", self.dr),
            ("mass", self.mass),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(EnvError::InvalidSpec(format!("{name}: [{lo}, {hi}]")));
            }
        }
        if self.mass.0 <= 0.0 || self.df.0 < 0.0 || self.dr.0 < 0.0 {
            return Err(EnvError::InvalidSpec(
                "mass must stay positive and tire peaks non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> CarParams {
        CarParams {
            cm1: rng.uniform(self.cm1.0, self.cm1.1),
            cm2: rng.uniform(self.cm2.0, self.cm2.1),
            df: rng.uniform(self.df.0, self.df.1),
            dr: rng.uniform(self.dr.0, self.dr.1),
            mass: rng.uniform(self.mass.0, self.mass.1),
            ..CarParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub goal_radius: f64,
    pub control_cost: f64,
    pub smoothness_cost: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            goal_radius: 0.3,
            control_cost: 0.01,
            smoothness_cost: 0.1,
        }
    }
}

/// Progress toward the goal, a bonus inside the goal radius, and penalties on
/// control magnitude and action changes.
pub fn reward(d_prev: f64, d_t: f64, action: [f64; 2], prev_action: [f64; 2], rp: &RewardParams) -> f64 {
    let bonus = if d_t <= rp.goal_radius { 1.0 } else { 0.0 };
    let effort = action[0].hypot(action[1]);
    let change = (action[0] - prev_action[0]).powi(2) + (action[1] - prev_action[1]).powi(2);
    d_prev - d_t + bonus - rp.control_cost * effort - rp.smoothness_cost * change
}

/// Initial state: at rest, uniform pose in the arena, goal uniform in the
/// arena at least [`MIN_GOAL_DISTANCE`] away. The prior backend draws
/// randomized parameters; the target backend always uses nominal ones.
pub fn reset(rng: &mut Rng, spec: &RandomizationSpec, backend: Backend) -> Result<(CarState, CarParams, Observation), EnvError> {
    spec.validate()?;
    let h = ARENA_HALF_WIDTH;
    let px = rng.uniform(-h, h);
    let py = rng.uniform(-h, h);
    let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
    let goal = loop {
        let g = [rng.uniform(-h, h), rng.uniform(-h, h)];
        if (g[0] - px).hypot(g[1] - py) >= MIN_GOAL_DISTANCE {
            break g;
        }
    };
    let params = match backend {
        Backend::Kinematic => spec.sample(rng),
        Backend::Dynamic => CarParams::default(),
    };
    let state = CarState::at_rest(px, py, yaw, goal);
    Ok((state, params, state.observation()))
}

fn check_action(action: [f64; 2]) -> Result<(), EnvError> {
    if action.iter().all(|a| a.is_finite() && (-1.0..=1.0).contains(a)) {
        Ok(())
    } else {
        Err(EnvError::InvalidAction(action.to_vec()))
    }
}

fn rk4<const N: usize>(y: [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let k1 = f(&y);
    let k2 = f(&std::array::from_fn(|i| y[i] + 0.5 * dt * k1[i]));
    let k3 = f(&std::array::from_fn(|i| y[i] + 0.5 * dt * k2[i]));
    let k4 = f(&std::array::from_fn(|i| y[i] + dt * k3[i]));
    std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Continuous-time derivative of the dynamic model over
/// `[px, py, yaw, vx, vy, yaw_rate]` for fixed steering angle and throttle.
///
/// Below `blend_speed` the lateral states blend linearly toward the kinematic
/// model (weight `|vx| / blend_speed`), which removes the slip-angle
/// singularity at standstill.
pub fn dynamic_derivative(s: &[f64; 6], steer: f64, throttle: f64, p: &CarParams) -> [f64; 6] {
    let [_, _, yaw, vx, vy, w] = *s;
    let (sy, cy) = yaw.sin_cos();
    let pos = [vx * cy - vy * sy, vx * sy + vy * cy, w];

    let fx = p.drive_force(vx, throttle);
    // Slip angles measured against |vx| so reversing does not flip them by pi.
    let dir = if vx < 0.0 { -1.0 } else { 1.0 };
    let slip_f = dir * steer - (vy + w * p.lf).atan2(vx.abs());
    let slip_r = (w * p.lr - vy).atan2(vx.abs());
    let ffy = p.df * (p.cf * (p.bf * slip_f).atan()).sin();
    let fry = p.dr * (p.cr * (p.br * slip_r).atan()).sin();
    let (ss, cs) = steer.sin_cos();
    let dyn_vx = (fx - ffy * ss + p.mass * vy * w) / p.mass;
    let dyn_vy = (fry + ffy * cs - p.mass * vx * w) / p.mass;
    let dyn_w = (ffy * p.lf * cs - fry * p.lr) / p.inertia_z;

    let kin_vx = fx / p.mass;
    let kin_w = steer.tan() * kin_vx / p.wheelbase();
    let kin_vy = p.lr * kin_w;

    let lam = (vx.abs() / p.blend_speed).min(1.0);
    [
        pos[0],
        pos[1],
        pos[2],
        lam * dyn_vx + (1.0 - lam) * kin_vx,
        lam * dyn_vy + (1.0 - lam) * kin_vy,
        lam * dyn_w + (1.0 - lam) * kin_w,
    ]
}

/// Continuous-time derivative of the kinematic model over `[px, py, yaw, v]`.
pub fn kinematic_derivative(s: &[f64; 4], steer: f64, throttle: f64, p: &CarParams) -> [f64; 4] {
    let [_, _, yaw, v] = *s;
    let beta = slip_angle(steer, p);
    [
        v * (yaw + beta).cos(),
        v * (yaw + beta).sin(),
        v * beta.sin() / p.lr,
        p.drive_force(v, throttle) / p.mass,
    ]
}

/// Body slip angle of the kinematic bicycle for a front steering angle.
pub fn slip_angle(steer: f64, p: &CarParams) -> f64 {
    (p.lr * steer.tan() / p.wheelbase()).atan()
}

fn finish(state: &CarState, action: [f64; 2], next: CarState) -> Result<CarState, EnvError> {
    let next = CarState {
        prev_action: action,
        goal: state.goal,
        ..next
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(EnvError::NonFinite(format!("{next:?}")))
    }
}

fn check_dt(dt: f64) -> Result<(), EnvError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(EnvError::InvalidStep(format!("dt must be positive, got {dt}")))
    }
}

/// One control step of the dynamic model; `action = [steering, throttle]` in `[-1, 1]`.
pub fn step_dynamic(state: &CarState, action: [f64; 2], p: &CarParams, dt: f64) -> Result<CarState, EnvError> {
    step_dynamic_substeps(state, action, p, dt, RK4_SUBSTEPS)
}

/// [`step_dynamic`] with an explicit RK4 substep count.
pub fn step_dynamic_substeps(
    state: &CarState,
    action: [f64; 2],
    p: &CarParams,
    dt: f64,
    substeps: usize,
) -> Result<CarState, EnvError> {
    check_action(action)?;
    check_dt(dt)?;
    let steer = action[0] * p.max_steer;
    let throttle = action[1];
    let h = dt / substeps as f64;
    let mut y = [state.px, state.py, state.yaw, state.vx, state.vy, state.yaw_rate];
    for _ in 0..substeps {
        y = rk4(y, h, |s| dynamic_derivative(s, steer, throttle, p));
    }
    let [px, py, yaw, vx, vy, yaw_rate] = y;
    finish(
        state,
        action,
        CarState {
            px,
            py,
            yaw,
            vx,
            vy,
            yaw_rate,
            ..*state
        },
    )
}

/// One control step of the kinematic model. The body-frame velocity fields are
/// written back consistently with the slip angle so observations match the
/// dynamic backend's layout.
pub fn step_kinematic(state: &CarState, action: [f64; 2], p: &CarParams, dt: f64) -> Result<CarState, EnvError> {
    check_action(action)?;
    check_dt(dt)?;
    let steer = action[0] * p.max_steer;
    let throttle = action[1];
    let h = dt / RK4_SUBSTEPS as f64;
    let speed = if state.vx < 0.0 { -state.speed() } else { state.speed() };
    let mut y = [state.px, state.py, state.yaw, speed];
    for _ in 0..RK4_SUBSTEPS {
        y = rk4(y, h, |s| kinematic_derivative(s, steer, throttle, p));
    }
    let [px, py, yaw, v] = y;
    let beta = slip_angle(steer, p);
    finish(
        state,
        action,
        CarState {
            px,
            py,
            yaw,
            vx: v * beta.cos(),
            vy: v * beta.sin(),
            yaw_rate: v * beta.sin() / p.lr,
            ..*state
        },
    )
}

pub fn step(backend: Backend, state: &CarState, action: [f64; 2], p: &CarParams, dt: f64) -> Result<CarState, EnvError> {
    match backend {
        Backend::Kinematic => step_kinematic(state, action, p, dt),
        Backend::Dynamic => step_dynamic(state, action, p, dt),
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarStep {
    pub state: CarState,
    pub obs: Observation,
    pub reward: f64,
}

/// Steps one car and scores the transition.
pub fn transition(
    backend: Backend,
    state: &CarState,
    action: [f64; 2],
    p: &CarParams,
    rp: &RewardParams,
    dt: f64,
) -> Result<CarStep, EnvError> {
    let next = step(backend, state, action, p, dt)?;
    let r = reward(state.goal_distance(), next.goal_distance(), action, state.prev_action, rp);
    Ok(CarStep {
        obs: next.observation(),
        state: next,
        reward: r,
    })
}

/// Elementwise [`transition`] over a batch. Output order matches input order
/// and each element depends only on its own inputs.
pub fn vec_step(
    states: &[CarState],
    actions: &[[f64; 2]],
    params: &[CarParams],
    rp: &RewardParams,
    backend: Backend,
    dt: f64,
) -> Result<Vec<CarStep>, EnvError> {
    use rayon::prelude::*;
    if states.len() != actions.len() || states.len() != params.len() {
        return Err(EnvError::Batch(format!(
            "{} states, {} actions, {} parameter sets",
            states.len(),
            actions.len(),
            params.len()
        )));
    }
    let results: Vec<Result<CarStep, EnvError>> = if super::parallelism() > 1 && states.len() >= 64 {
        states
            .par_iter()
            .zip(actions.par_iter())
            .zip(params.par_iter())
            .map(|((s, a), p)| transition(backend, s, *a, p, rp, dt))
            .collect()
    } else {
        states
            .iter()
            .zip(actions)
            .zip(params)
            .map(|((s, a), p)| transition(backend, s, *a, p, rp, dt))
            .collect()
    };
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|source| EnvError::Element {
                index,
                source: Box::new(source),
            })
        })
        .collect()
}
