use serde::{Deserialize, Serialize};

/// Learning rates allowed for the main optimizer.
pub const LR_GRID: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Adam with L2 weight decay added to the gradient.
    Adam {
        lr: f64,
        #[serde(default = "default_weight_decay")]
        weight_decay: f64,
    },
    Sgd {
        lr: f64,
    },
}

pub fn default_weight_decay() -> f64 {
    5e-4
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            weight_decay: default_weight_decay(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        }
    }

    pub(crate) fn state(&self, len: usize) -> OptimizerState {
        OptimizerState {
            opt: *self,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

pub(crate) struct OptimizerState {
    opt: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// One update of `params`; coordinates with `frozen[i]` are left alone.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], frozen: Option<&[bool]>) {
        self.t += 1;
        let is_frozen = |i: usize| frozen.is_some_and(|f| f[i]);
        match self.opt {
            Optimizer::Sgd { lr } => {
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    if !is_frozen(i) {
                        *p -= lr * g;
                    }
                }
            }
            Optimizer::Adam { lr, weight_decay } => {
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    if is_frozen(i) {
                        continue;
                    }
                    let g = grad[i] + weight_decay * params[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}
