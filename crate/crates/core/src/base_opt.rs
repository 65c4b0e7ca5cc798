//! Base optimizers. Each turns a gradient into an update vector `u_t`; on its
//! own the base would move `x_{t+1} = x_t + u_t`.

use crate::error::{check_dim, Result};

/// One step's proposed increment from a base optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector(pub Vec<f64>);

impl UpdateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub trait BaseOptimizer: Send {
    /// `x` is the iterate at which `g` was evaluated; only optimizers with
    /// decoupled weight decay read it.
    fn update(&mut self, g: &[f64], eta: f64, x: &[f64]) -> Result<UpdateVector>;

    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Default)]
pub struct Sgd;

impl BaseOptimizer for Sgd {
    fn update(&mut self, g: &[f64], eta: f64, _x: &[f64]) -> Result<UpdateVector> {
        Ok(UpdateVector(g.iter().map(|gj| -eta * gj).collect()))
    }

    fn name(&self) -> &'static str {
        "sgd"
    }
}

/// Heavy-ball momentum: `b ← β·b + g`, `u = −η·b`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub beta: f64,
    buf: Vec<f64>,
}

impl Momentum {
    pub fn new(dim: usize, beta: f64) -> Self {
        Self {
            beta,
            buf: vec![0.0; dim],
        }
    }
}

impl BaseOptimizer for Momentum {
    fn update(&mut self, g: &[f64], eta: f64, _x: &[f64]) -> Result<UpdateVector> {
        check_dim("momentum gradient", self.buf.len(), g.len())?;
        let u = self
            .buf
            .iter_mut()
            .zip(g)
            .map(|(b, gj)| {
                *b = self.beta * *b + gj;
                -eta * *b
            })
            .collect();
        Ok(UpdateVector(u))
    }

    fn name(&self) -> &'static str {
        "momentum"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub hyper: AdamWHyper,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(dim: usize, hyper: AdamWHyper) -> Self {
        Self {
            hyper,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

impl BaseOptimizer for AdamW {
    fn update(&mut self, g: &[f64], eta: f64, x: &[f64]) -> Result<UpdateVector> {
        check_dim("adamw gradient", self.m.len(), g.len())?;
        check_dim("adamw parameters", self.m.len(), x.len())?;
        let AdamWHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut u = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            self.m[j] = beta1 * self.m[j] + (1.0 - beta1) * g[j];
            self.v[j] = beta2 * self.v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = self.m[j] / c1;
            let v_hat = self.v[j] / c2;
            u.push(-eta * (m_hat / (v_hat.sqrt() + eps) + weight_decay * x[j]));
        }
        Ok(UpdateVector(u))
    }

    fn name(&self) -> &'static str {
        "adamw"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LionHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for LionHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lion {
    pub hyper: LionHyper,
    buf: Vec<f64>,
}

impl Lion {
    pub fn new(dim: usize, hyper: LionHyper) -> Self {
        Self {
            hyper,
            buf: vec![0.0; dim],
        }
    }
}

// sign(0) = 0
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl BaseOptimizer for Lion {
    fn update(&mut self, g: &[f64], eta: f64, x: &[f64]) -> Result<UpdateVector> {
        check_dim("lion gradient", self.buf.len(), g.len())?;
        check_dim("lion parameters", self.buf.len(), x.len())?;
        let LionHyper {
            beta1,
            beta2,
            weight_decay,
        } = self.hyper;
        let mut u = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let c = beta1 * self.buf[j] + (1.0 - beta1) * g[j];
            u.push(-eta * (sign(c) + weight_decay * x[j]));
            self.buf[j] = beta2 * self.buf[j] + (1.0 - beta2) * g[j];
        }
        Ok(UpdateVector(u))
    }

    fn name(&self) -> &'static str {
        "lion"
    }
}

/// Declarative choice of base optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseOptConfig {
    Sgd,
    Momentum { beta: f64 },
    AdamW(AdamWHyper),
    Lion(LionHyper),
}

impl BaseOptConfig {
    pub fn build(&self, dim: usize) -> Box<dyn BaseOptimizer> {
        match self {
            BaseOptConfig::Sgd => Box::new(Sgd),
            BaseOptConfig::Momentum { beta } => Box::new(Momentum::new(dim, *beta)),
            BaseOptConfig::AdamW(h) => Box::new(AdamW::new(dim, *h)),
            BaseOptConfig::Lion(h) => Box::new(Lion::new(dim, *h)),
        }
    }
}
