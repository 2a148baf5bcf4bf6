use serde::{Deserialize, Serialize};

use super::{ParameterStore, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay from the base rate to zero over `total_steps`.
    LinearDecay { total_steps: u64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay { total_steps } => {
                let frac = step.min(total_steps) as f64 / total_steps.max(1) as f64;
                base * (1.0 - frac)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Clip the global gradient norm to this value.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update with base learning rate `lr`, zeroes the gradients
    /// and advances the step counter. Nothing is modified when any gradient
    /// is non-finite.
    pub fn step(&self, store: &mut ParameterStore, lr: f64) -> Result<(), TensorError> {
        if let Some((name, _)) = store
            .iter()
            .find(|(_, p)| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(TensorError::NonFiniteGradient(name.to_string()));
        }
        let clip = match self.config.grad_clip {
            Some(max) => {
                let norm = store.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let step = store.step() + 1;
        let rate = self.config.schedule.rate(lr, store.step());
        for (_, p) in store.iter_mut() {
            let values = p.value.data_mut();
            match self.config.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in values.iter_mut().zip(&p.grad) {
                        *v -= rate * g * clip;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step as i32);
                    let c2 = 1.0 - beta2.powi(step as i32);
                    for i in 0..values.len() {
                        let g = p.grad[i] * clip;
                        p.moment1[i] = beta1 * p.moment1[i] + (1.0 - beta1) * g;
                        p.moment2[i] = beta2 * p.moment2[i] + (1.0 - beta2) * g * g;
                        let m = p.moment1[i] / c1;
                        let v = p.moment2[i] / c2;
                        values[i] -= rate * m / (v.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grads();
        store.set_step(step);
        Ok(())
    }
}
