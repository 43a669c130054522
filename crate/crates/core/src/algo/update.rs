use super::agent::matrix;
use super::policy::squashed_gaussian;
use super::{Agent, Algo, AlgoError};
use crate::diffcore::{adam_step, GradMode, Network, OptState, Real, Rng, Tensor};
use crate::replay::{Batch, DualSampler};

/// Update counts and step sizes for one update phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSchedule {
    /// Critic updates per episode (K).
    pub updates: u64,
    /// The actor is updated when `k % actor_period == 0` (M).
    pub actor_period: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Environment steps per episode (T).
    pub episode_len: u64,
    pub batch_size: usize,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self {
            updates: 1250,
            actor_period: 20,
            actor_lr: 1e-5,
            critic_lr: 3e-4,
            episode_len: 250,
            batch_size: 256,
        }
    }
}

impl UpdateSchedule {
    pub fn validate(&self) -> Result<(), AlgoError> {
        if self.updates == 0 || self.actor_period == 0 || self.episode_len == 0 || self.batch_size == 0 {
            return Err(AlgoError::Config("K, M, T and batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Updates per environment step (K / T).
    pub fn utd(&self) -> f64 {
        self.updates as f64 / self.episode_len as f64
    }

    pub fn is_actor_step(&self, k: u64) -> bool {
        k.is_multiple_of(self.actor_period)
    }

    /// Actor updates in one phase of `updates` steps.
    pub fn actor_updates(&self) -> u64 {
        self.updates / self.actor_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    /// Mean of the two critics' batch-mean half-squared errors.
    pub loss: f64,
    pub mean_q: f64,
    pub y_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    /// Batch mean of `log pi(a|s)`; zero for TD3.
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub k: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub temperature: f64,
    pub mean_q: f64,
    pub y_mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// One Adam step of a critic on `0.5 (Q - y)^2`; returns (loss, mean Q).
fn fit_critic<T: Real>(
    net: &mut Network<T>,
    opt: &mut OptState<T>,
    sa: &Tensor<T>,
    y: &[f64],
) -> Result<(f64, f64), AlgoError> {
    let (q, trace) = net.forward_traced(sa)?;
    let q = q.to_f64_vec();
    let b = y.len() as f64;
    let loss = q.iter().zip(y).map(|(q, y)| 0.5 * (q - y).powi(2)).sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(AlgoError::NonFinite("critic loss"));
    }
    let d: Vec<f64> = q.iter().zip(y).map(|(q, y)| (q - y) / b).collect();
    net.zero_grad();
    net.backward(&trace, &matrix::<T, f64>(1, &d)?, GradMode::Params)?;
    let (params, grads) = net.params_and_grads();
    adam_step(params, grads, opt)?;
    Ok((loss, mean(&q)))
}

/// Action columns of a critic input gradient.
fn action_columns<T: Real>(g: &Tensor<T>, obs_dim: usize) -> Vec<f64> {
    g.slice_cols(obs_dim, g.cols()).to_f64_vec()
}

impl<T: Real> Agent<T> {
    fn state_action(&self, obs: &[f32], actions: &[f64]) -> Result<Tensor<T>, AlgoError> {
        let s = matrix::<T, f32>(self.cfg.obs_dim, obs)?;
        let a = matrix::<T, f64>(self.cfg.act_dim, actions)?;
        Ok(Tensor::concat_cols(&s, &a)?)
    }

    /// Bootstrapped regression targets for a batch. The terminal flag zeroes
    /// the bootstrap; truncation keeps it.
    pub fn critic_target(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<f64>, AlgoError> {
        let (o, a) = (self.cfg.obs_dim, self.cfg.act_dim);
        let s2 = matrix::<T, f32>(o, &batch.next_obs)?;
        let (next_action, entropy_term) = match self.cfg.algo {
            Algo::Sac => {
                let raw = self.actor.forward(&s2)?.to_f64_vec();
                let ps = squashed_gaussian(&raw, a, rng);
                let temp = self.temperature();
                let ent: Vec<f64> = ps.log_prob.iter().map(|lp| temp * lp).collect();
                (ps.action, ent)
            }
            Algo::Td3 => {
                let target_actor = self
                    .target_actor
                    .as_ref()
                    .ok_or_else(|| AlgoError::Config("TD3 agent without target actor".into()))?;
                let raw = target_actor.forward(&s2)?.to_f64_vec();
                let c = self.cfg.target_noise_clip;
                let act = raw
                    .iter()
                    .map(|m| {
                        let noise = (self.cfg.target_noise * rng.normal()).clamp(-c, c);
                        (m.tanh() + noise).clamp(-1.0, 1.0)
                    })
                    .collect();
                (act, vec![0.0; batch.len()])
            }
        };
        let sa2 = self.state_action(&batch.next_obs, &next_action)?;
        let qa = self.target_a.forward(&sa2)?;
        let qb = self.target_b.forward(&sa2)?;
        let gamma = self.cfg.gamma;
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                let q = qa.data()[i].as_f64().min(qb.data()[i].as_f64());
                let cont = if batch.terminal[i] { 0.0 } else { 1.0 };
                batch.reward[i] as f64 + gamma * cont * (q - entropy_term[i])
            })
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(AlgoError::NonFinite("critic target"));
        }
        Ok(y)
    }

    /// Steps both critics toward a shared target computed from the current
    /// target networks.
    pub fn critic_update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<CriticStats, AlgoError> {
        if batch.is_empty() {
            return Err(AlgoError::Config("empty batch".into()));
        }
        let y = self.critic_target(batch, rng)?;
        let actions: Vec<f64> = batch.action.iter().map(|&v| v as f64).collect();
        let sa = self.state_action(&batch.obs, &actions)?;
        let (la, qa) = fit_critic(&mut self.critic_a, &mut self.critic_a_opt, &sa, &y)?;
        let (lb, qb) = fit_critic(&mut self.critic_b, &mut self.critic_b_opt, &sa, &y)?;
        Ok(CriticStats {
            loss: 0.5 * (la + lb),
            mean_q: 0.5 * (qa + qb),
            y_mean: mean(&y),
        })
    }

    /// Moves every target network a fraction `tau` toward its online copy.
    pub fn polyak(&mut self) -> Result<(), AlgoError> {
        let tau = T::from_f64(self.cfg.tau);
        self.target_a.polyak_from(&self.critic_a, tau)?;
        self.target_b.polyak_from(&self.critic_b, tau)?;
        if let Some(t) = self.target_actor.as_mut() {
            t.polyak_from(&self.actor, tau)?;
        }
        Ok(())
    }

    /// One actor step through the critics, which are left untouched.
    pub fn actor_update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<ActorStats, AlgoError> {
        if batch.is_empty() {
            return Err(AlgoError::Config("empty batch".into()));
        }
        let (o, a) = (self.cfg.obs_dim, self.cfg.act_dim);
        let rows = batch.len();
        let b = rows as f64;
        let s = matrix::<T, f32>(o, &batch.obs)?;
        let (raw_t, trace) = self.actor.forward_traced(&s)?;
        let raw = raw_t.to_f64_vec();

        let (d_raw, stats) = match self.cfg.algo {
            Algo::Sac => {
                let ps = squashed_gaussian(&raw, a, rng);
                let sa = Tensor::concat_cols(&s, &matrix::<T, f64>(a, &ps.action)?)?;
                let (qa, tra) = self.critic_a.forward_traced(&sa)?;
                let (qb, trb) = self.critic_b.forward_traced(&sa)?;
                let use_a: Vec<bool> = qa.data().iter().zip(qb.data()).map(|(x, y)| x <= y).collect();
                let da: Vec<f64> = use_a.iter().map(|&u| if u { -1.0 / b } else { 0.0 }).collect();
                let db: Vec<f64> = use_a.iter().map(|&u| if u { 0.0 } else { -1.0 / b }).collect();
                let ga = action_columns(&self.critic_a.input_gradient(&tra, &matrix::<T, f64>(1, &da)?)?, o);
                let gb = action_columns(&self.critic_b.input_gradient(&trb, &matrix::<T, f64>(1, &db)?)?, o);
                let temp = self.temperature();
                let mut d_raw = vec![0.0; rows * 2 * a];
                let mut loss = 0.0;
                for r in 0..rows {
                    let q = if use_a[r] { qa.data()[r] } else { qb.data()[r] }.as_f64();
                    loss += temp * ps.log_prob[r] - q;
                    for i in 0..a {
                        let j = r * a + i;
                        let act = ps.action[j];
                        let g = (ga[j] + gb[j]) * (1.0 - act * act);
                        let se = ps.std[j] * ps.noise[j];
                        d_raw[r * 2 * a + i] = temp / b * 2.0 * act + g;
                        d_raw[r * 2 * a + a + i] = if ps.clamped[j] {
                            0.0
                        } else {
                            temp / b * (2.0 * act * se - 1.0) + g * se
                        };
                    }
                }
                let stats = ActorStats {
                    loss: loss / b,
                    log_prob: mean(&ps.log_prob),
                };
                (d_raw, stats)
            }
            Algo::Td3 => {
                let act: Vec<f64> = raw.iter().map(|m| m.tanh()).collect();
                let sa = Tensor::concat_cols(&s, &matrix::<T, f64>(a, &act)?)?;
                let (qa, tra) = self.critic_a.forward_traced(&sa)?;
                let d = vec![-1.0 / b; rows];
                let ga = action_columns(&self.critic_a.input_gradient(&tra, &matrix::<T, f64>(1, &d)?)?, o);
                let d_raw = ga.iter().zip(&act).map(|(g, x)| g * (1.0 - x * x)).collect();
                let loss = -mean(&qa.to_f64_vec());
                (d_raw, ActorStats { loss, log_prob: 0.0 })
            }
        };
        if !stats.loss.is_finite() {
            return Err(AlgoError::NonFinite("actor loss"));
        }
        let d_raw = matrix::<T, f64>(raw_t.cols(), &d_raw)?;
        self.actor.zero_grad();
        self.actor.backward(&trace, &d_raw, GradMode::Params)?;
        let (params, grads) = self.actor.params_and_grads();
        adam_step(params, grads, &mut self.actor_opt)?;
        Ok(stats)
    }

    /// Adjusts the log-temperature toward the entropy target on a fresh
    /// draw. Returns the loss; a no-op returning zero for TD3.
    pub fn temperature_update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64, AlgoError> {
        if self.cfg.algo == Algo::Td3 {
            return Ok(0.0);
        }
        let s = matrix::<T, f32>(self.cfg.obs_dim, &batch.obs)?;
        let raw = self.actor.forward(&s)?.to_f64_vec();
        let ps = squashed_gaussian(&raw, self.cfg.act_dim, rng);
        let gap = mean(&ps.log_prob) + self.cfg.target_entropy();
        let log_temp = self.log_temp.data()[0].as_f64();
        let loss = -log_temp * gap;
        if !loss.is_finite() {
            return Err(AlgoError::NonFinite("temperature loss"));
        }
        let grad = Tensor::from_f64(&[1], &[-gap])?;
        adam_step(std::slice::from_mut(&mut self.log_temp), std::slice::from_ref(&grad), &mut self.temp_opt)?;
        Ok(loss)
    }

    /// Update `k` of a phase: a critic step and target averaging always, an
    /// actor (and temperature) step when `k` is a multiple of the period.
    pub fn update_step(
        &mut self,
        sampler: &DualSampler,
        schedule: &UpdateSchedule,
        k: u64,
        rng: &mut Rng,
    ) -> Result<UpdateMetrics, AlgoError> {
        if k == 0 || k > schedule.updates {
            return Err(AlgoError::UpdateIndex {
                k,
                updates: schedule.updates,
            });
        }
        self.set_learning_rates(schedule.actor_lr, schedule.critic_lr);
        let batch = sampler.sample(schedule.batch_size, rng)?;
        let critic = self.critic_update(&batch, rng)?;
        self.polyak()?;
        let mut actor_loss = None;
        if schedule.is_actor_step(k) {
            actor_loss = Some(self.actor_update(&batch, rng)?.loss);
            self.temperature_update(&batch, rng)?;
        }
        Ok(UpdateMetrics {
            k,
            critic_loss: critic.loss,
            actor_loss,
            temperature: self.temperature(),
            mean_q: critic.mean_q,
            y_mean: critic.y_mean,
        })
    }
}
