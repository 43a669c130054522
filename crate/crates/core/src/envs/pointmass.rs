//! Planar point mass driven toward the origin. Small and fast; used for
//! update-ratio sweeps and tests that need a learnable task in seconds.

use super::car::RewardParams;
use super::{Env, EnvError};
use crate::diffcore::Rng;

pub const OBS_DIM: usize = 4;
pub const ACT_DIM: usize = 2;
pub const DT: f64 = 0.05;
const FORCE: f64 = 2.0;
const DAMPING: f64 = 0.5;
const START_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pos: [f64; 2],
    vel: [f64; 2],
    prev_action: [f64; 2],
    reward: RewardParams,
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            prev_action: [0.0; 2],
            reward: RewardParams {
                goal_radius: 0.1,
                control_cost: 0.01,
                smoothness_cost: 0.0,
            },
        }
    }
}

impl PointMassEnv {
    fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    fn distance(&self) -> f64 {
        self.pos[0].hypot(self.pos[1])
    }

    /// Places the mass; used by tests.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }
}

impl Env for PointMassEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, EnvError> {
        let h = START_HALF_WIDTH;
        self.pos = [rng.uniform(-h, h), rng.uniform(-h, h)];
        self.vel = [0.0; 2];
        self.prev_action = [0.0; 2];
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64), EnvError> {
        if action.len() != ACT_DIM || action.iter().any(|a| !a.is_finite() || a.abs() > 1.0) {
            return Err(EnvError::InvalidAction(action.to_vec()));
        }
        let a = [action[0], action[1]];
        let d_prev = self.distance();
        for i in 0..2 {
            self.vel[i] += (FORCE * a[i] - DAMPING * self.vel[i]) * DT;
            self.pos[i] += self.vel[i] * DT;
        }
        let r = super::car::reward(d_prev, self.distance(), a, self.prev_action, &self.reward);
        self.prev_action = a;
        Ok((self.observation(), r))
    }

    fn success(&self) -> bool {
        self.distance() <= self.reward.goal_radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pushing_toward_origin_earns_progress() {
        let mut env = PointMassEnv::default();
        env.set_state([0.5, 0.0], [0.0, 0.0]);
        let (_, r) = env.step(&[-1.0, 0.0]).unwrap();
        assert!(r > -0.011);
        let (obs, _) = env.step(&[-1.0, 0.0]).unwrap();
        assert!(obs[0] < 0.5 && obs[2] < 0.0);
    }

    #[test]
    fn rejects_out_of_range_actions() {
        let mut env = PointMassEnv::default();
        assert!(env.step(&[1.2, 0.0]).is_err());
        assert!(env.step(&[0.0]).is_err());
    }
}
