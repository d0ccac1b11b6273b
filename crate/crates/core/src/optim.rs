//! Named trainable parameters and momentum SGD.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named `requires_grad` leaf tensor.
#[derive(Clone)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, values: Vec<f64>, shape: &[usize]) -> Parameter {
        let tensor = Tensor::new(values, shape);
        tensor.set_requires_grad(true);
        Parameter {
            name: name.into(),
            tensor,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    /// Fresh copy with its own storage.
    pub fn detached_copy(&self, requires_grad: bool) -> Parameter {
        let t = self.tensor.detach();
        t.set_requires_grad(requires_grad);
        Parameter {
            name: self.name.clone(),
            tensor: t,
        }
    }
}

/// Plain SGD hyperparameters: `p <- p - lr * v` where
/// `v <- momentum * v + grad + weight_decay * p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<SgdConfig> {
        let cfg = SgdConfig {
            learning_rate,
            weight_decay: 0.0,
            momentum: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> SgdConfig {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> SgdConfig {
        self.momentum = momentum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::contract(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

impl Default for SgdConfig {
    /// Classifier-training defaults: lr 0.1, weight decay 2e-4, momentum 0.9.
    fn default() -> SgdConfig {
        SgdConfig {
            learning_rate: 0.1,
            weight_decay: 2e-4,
            momentum: 0.9,
        }
    }
}

/// SGD with per-parameter velocity state.
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Sgd> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    /// One update over `params`; consumes and clears their gradients.
    ///
    /// Every parameter must carry a gradient, and the parameter list must
    /// keep the same arity across calls so velocities stay attached.
    pub fn step(&mut self, params: &[Parameter]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer was initialized with {} parameters but stepped with {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        let mu = self.cfg.momentum;
        for (param, vel) in params.iter().zip(self.velocity.iter_mut()) {
            let grad = param.tensor().take_grad().ok_or_else(|| {
                Error::contract(format!("parameter `{}` has no gradient", param.name()))
            })?;
            if grad.len() != vel.len() {
                return Err(Error::contract(format!(
                    "parameter `{}` changed size mid-training",
                    param.name()
                )));
            }
            param.tensor().update_values(|vals| {
                for i in 0..vals.len() {
                    let g = grad[i] + wd * vals[i];
                    vel[i] = mu * vel[i] + g;
                    vals[i] -= lr * vel[i];
                }
            });
        }
        Ok(())
    }
}
