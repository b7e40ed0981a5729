//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};
use crate::net::{ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = LremError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(LremError::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Optimizer state. Adam moments live only for the duration of a training
/// stage and are not checkpointed.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
                Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                    step: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.tensors.len() {
            return Err(LremError::Shape("gradient count".into()));
        }
        match self {
            Optimizer::Sgd => params.apply_update(grads, lr),
            Optimizer::Adam { beta1, beta2, eps, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m.data[i] = *beta1 * m.data[i] + (1.0 - *beta1) * gi;
                        v.data[i] = *beta2 * v.data[i] + (1.0 - *beta2) * gi * gi;
                        let mhat = m.data[i] / c1;
                        let vhat = v.data[i] / c2;
                        p.data[i] -= lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        if params.tensors.iter().any(|t| !t.all_finite()) {
            return Err(LremError::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}
