//! First-order optimizers over grouped parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Optimizer: Send {
    /// Applies one update. `params` and `grads` are parallel lists of groups;
    /// group shapes must stay fixed across calls.
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()>;

    /// Number of completed steps.
    fn steps(&self) -> u64;
}

fn check_shapes(state: &mut Vec<Vec<f64>>, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter groups but {} gradient groups",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "group {i}: {} parameters, {} gradients",
                p.len(),
                g.len()
            )));
        }
    }
    if state.is_empty() {
        *state = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.len() != params.len() || state.iter().zip(params).any(|(s, p)| s.len() != p.len()) {
        return Err(Error::ShapeMismatch("parameter layout changed between steps".into()));
    }
    Ok(())
}

/// `v <- mu v + g; theta <- theta - lr v`
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
    t: u64,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for SgdMomentum {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_shapes(&mut self.velocity, params, grads)?;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((p, g), v) in p.iter_mut().zip(*g).zip(v.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        self.t += 1;
        Ok(())
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_shapes(&mut self.m, params, grads)?;
        check_shapes(&mut self.v, params, grads)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

/// Adam with per-parameter step sizes clipped into a band that narrows
/// toward `final_lr` as `t` grows.
///
/// Follows the reference AdaBound update: the bias-corrected Adam rate
/// `lr * sqrt(1 - b2^t) / (1 - b1^t) / (sqrt(v) + eps)` is clipped into
/// `[lower(t), upper(t)]` and multiplied by the first moment.
#[derive(Clone, Debug)]
pub struct AdaBound {
    pub lr: f64,
    pub final_lr: f64,
    /// Convergence speed of the bounds.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    base_lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdaBound {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            final_lr: 0.1,
            gamma: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: lr,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// The bound target, scaled by `lr / initial lr` so that a learning-rate
    /// change moves the bounds with it.
    fn target_lr(&self) -> f64 {
        if self.base_lr > 0.0 {
            self.final_lr * self.lr / self.base_lr
        } else {
            0.0
        }
    }

    /// `(final_lr (1 - 1/(gamma t + 1)), final_lr (1 + 1/(gamma t)))`
    pub fn bounds(&self, t: u64) -> (f64, f64) {
        let t = t as f64;
        let target = self.target_lr();
        (
            target * (1.0 - 1.0 / (self.gamma * t + 1.0)),
            target * (1.0 + 1.0 / (self.gamma * t)),
        )
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }
}

impl Optimizer for AdaBound {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_shapes(&mut self.m, params, grads)?;
        check_shapes(&mut self.v, params, grads)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        let base = self.lr * bc2.sqrt() / bc1;
        let (lower, upper) = self.bounds(self.t);
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let rate = (base / (v[k].sqrt() + self.eps)).clamp(lower, upper);
                p[k] -= rate * m[k];
            }
        }
        Ok(())
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        momentum: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    AdaBound {
        lr: f64,
        final_lr: f64,
        gamma: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adabound(0.01)
    }
}

impl OptimizerConfig {
    pub fn adabound(lr: f64) -> Self {
        OptimizerConfig::AdaBound {
            lr,
            final_lr: 0.1,
            gamma: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. }
            | OptimizerConfig::Adam { lr, .. }
            | OptimizerConfig::AdaBound { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { lr, .. }
            | OptimizerConfig::Adam { lr, .. }
            | OptimizerConfig::AdaBound { lr, .. } => *lr = new_lr,
        }
        self
    }

    pub fn build(&self) -> Box<dyn Optimizer> {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => Box::new(SgdMomentum::new(lr, momentum)),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Box::new(Adam {
                beta1,
                beta2,
                eps,
                ..Adam::new(lr)
            }),
            OptimizerConfig::AdaBound {
                lr,
                final_lr,
                gamma,
                beta1,
                beta2,
                eps,
            } => Box::new(AdaBound {
                final_lr,
                gamma,
                beta1,
                beta2,
                eps,
                ..AdaBound::new(lr)
            }),
        }
    }
}
