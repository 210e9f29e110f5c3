//! RMSProp, Adam and Adadelta over a [`ParamStore`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
    Adadelta,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            other => Err(Error::invalid(format!("unknown optimizer `{other}` (expected rmsprop, adam or adadelta)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adadelta => "adadelta",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Decay of the squared-gradient average (RMSProp, Adadelta).
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    /// Standard hyperparameters for `kind`.
    pub fn new(kind: OptimizerKind) -> Self {
        let (lr, eps) = match kind {
            OptimizerKind::RmsProp => (1e-3, 1e-8),
            OptimizerKind::Adam => (1e-3, 1e-8),
            OptimizerKind::Adadelta => (1.0, 1e-6),
        };
        OptimizerConfig { kind, lr, rho: 0.9, beta1: 0.9, beta2: 0.999, eps }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid("optimizer epsilon must be positive"));
        }
        if !unit(self.rho) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid("decay rates must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Accumulators mirror the shapes of the parameters they were created for.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros = || store.ids().map(|id| vec![0.0; store.value(id).len()]).collect::<Vec<_>>();
        Ok(Optimizer { config, first: zeros(), second: zeros(), steps: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Changes the learning rate for subsequent steps; the accumulators are kept.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        OptimizerConfig { lr, ..self.config }.validate()?;
        self.config.lr = lr;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter from its gradient buffer. If any
    /// gradient entry is not finite, nothing is changed.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().collect();
        if ids.len() != self.first.len() {
            return Err(Error::invalid("optimizer was created for a different parameter set"));
        }
        for &id in &ids {
            if !store.grad(id).all_finite() {
                return Err(Error::NonFinite { param: store.name(id).to_string() });
            }
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        for (k, &id) in ids.iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let value = store.value_mut(id).data_mut();
            match c.kind {
                OptimizerKind::RmsProp => {
                    for i in 0..grad.len() {
                        let g = grad[i];
                        v[i] = c.rho * v[i] + (1.0 - c.rho) * g * g;
                        value[i] -= c.lr * g / (v[i] + c.eps).sqrt();
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for i in 0..grad.len() {
                        let g = grad[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                        value[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    // `v` averages squared gradients, `m` squared updates.
                    for i in 0..grad.len() {
                        let g = grad[i];
                        v[i] = c.rho * v[i] + (1.0 - c.rho) * g * g;
                        let dx = (m[i] + c.eps).sqrt() / (v[i] + c.eps).sqrt() * g;
                        m[i] = c.rho * m[i] + (1.0 - c.rho) * dx * dx;
                        value[i] -= c.lr * dx;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}
