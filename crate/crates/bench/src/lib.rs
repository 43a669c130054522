//! Fixtures shared by the benchmarks.

use s2o_core::{trainer, DualSampler, ExperimentConfig, ReplayBuffer, Rng, Task, TransitionRecord};
use s2o_core::replay::EndFlag;

/// Default car configuration.
pub fn car_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.env.task = Task::Car;
    cfg
}

/// Buffer of `rows` random transitions with the task's dimensions.
pub fn random_buffer(task: Task, rows: usize, rng: &mut Rng) -> ReplayBuffer {
    let (o, a) = (task.obs_dim(), task.act_dim());
    let mut buf = ReplayBuffer::unbounded(o, a);
    for _ in 0..rows {
        let obs: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
        let act: Vec<f64> = (0..a).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let next: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
        let r = TransitionRecord::from_f64(&obs, &act, rng.normal(), &next, EndFlag::None);
        buf.push(&r).expect("dimensions match");
    }
    buf
}

/// Sampler with equal-sized offline and online halves.
pub fn sampler(cfg: &ExperimentConfig, rows: usize, rng: &mut Rng) -> DualSampler {
    let off = random_buffer(cfg.env.task, rows, rng);
    let on = random_buffer(cfg.env.task, rows, rng);
    DualSampler::new(off, on, cfg.alpha_schedule()).expect("matching dims")
}

pub fn agent(cfg: &ExperimentConfig) -> s2o_core::Agent<f32> {
    trainer::initial_agent(cfg).expect("valid config")
}
