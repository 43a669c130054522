//! Tanh-squashed diagonal Gaussian. Elementwise work is done in `f64`
//! whatever the network precision.

use crate::diffcore::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// One reparameterized draw per row, with what the actor gradient needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub act_dim: usize,
    /// Squashed actions, row-major.
    pub action: Vec<f64>,
    /// Per-row log density of `action`.
    pub log_prob: Vec<f64>,
    pub noise: Vec<f64>,
    pub std: Vec<f64>,
    /// Whether the raw log-std was outside the clamp (no gradient flows).
    pub clamped: Vec<bool>,
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Samples `tanh(mean + std * noise)` from raw actor outputs laid out as
/// `[mean | log_std]` per row. Noise is drawn row-major, one normal per
/// action dimension.
pub fn squashed_gaussian(raw: &[f64], act_dim: usize, rng: &mut Rng) -> PolicySample {
    let rows = raw.len() / (2 * act_dim);
    let n = rows * act_dim;
    let mut s = PolicySample {
        act_dim,
        action: Vec::with_capacity(n),
        log_prob: Vec::with_capacity(rows),
        noise: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
        clamped: Vec::with_capacity(n),
    };
    for r in 0..rows {
        let row = &raw[r * 2 * act_dim..(r + 1) * 2 * act_dim];
        let mut lp = 0.0;
        for i in 0..act_dim {
            let raw_ls = row[act_dim + i];
            let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let std = ls.exp();
            let eps = rng.normal();
            let u = row[i] + std * eps;
            lp += -0.5 * eps * eps - ls - HALF_LOG_TWO_PI - log_one_minus_tanh_sq(u);
            s.action.push(u.tanh());
            s.noise.push(eps);
            s.std.push(std);
            s.clamped.push(raw_ls != ls);
        }
        s.log_prob.push(lp);
    }
    s
}
