//! AdamW with decoupled weight decay and a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::net::{Gradients, PredictorNet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied every `step_every` epochs.
    pub step_gamma: f64,
    pub step_every: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2, step_gamma: 0.1, step_every: 30 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.lr >= 0.0
            && self.lr.is_finite()
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.step_gamma > 0.0
            && self.step_every >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: `lr * gamma^floor(epoch / step_every)`.
pub fn lr_at(epoch: usize, config: &AdamWConfig) -> f64 {
    config.lr * config.step_gamma.powi((epoch / config.step_every) as i32)
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl MomentState {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One AdamW update of a single tensor at 1-based step `t` with learning
/// rate `lr`:
///
/// ```text
/// theta -= lr * wd * theta
/// m = b1 * m + (1 - b1) * g
/// v = b2 * v + (1 - b2) * g^2
/// theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut MomentState, config: &AdamWConfig, lr: f64, t: u64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::State(format!(
            "tensor length {} vs gradient {} vs state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::State("optimizer steps are 1-based".into()));
    }
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    let decay = lr * config.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *p -= decay * *p;
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + config.eps);
    }
    Ok(())
}

/// AdamW over every tensor of a [`PredictorNet`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: Vec<MomentState>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, net: &mut PredictorNet) -> Result<Self> {
        config.validate()?;
        let states = net.tensors_mut().iter().map(|t| MomentState::zeros(t.len())).collect();
        Ok(Self { config, states, t: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut PredictorNet, grads: &Gradients, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        let mut params = net.tensors_mut();
        if grads.len() != params.len() || params.len() != self.states.len() {
            return Err(Error::State(format!("{} tensors, {} gradients, {} optimizer states", params.len(), grads.len(), self.states.len())));
        }
        self.t += 1;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.states.iter_mut()) {
            adamw_step(p, g, s, &self.config, lr, self.t)?;
        }
        Ok(())
    }
}
