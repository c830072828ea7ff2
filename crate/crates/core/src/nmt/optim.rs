use serde::{Deserialize, Serialize};

use super::params::{Gradients, ModelParams};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adagrad,
}

impl OptimizerKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adagrad => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OptimizerKind::Sgd),
            1 => Some(OptimizerKind::Adagrad),
            _ => None,
        }
    }
}

/// Optimizer step counter and per-parameter accumulators (empty for SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub steps: u64,
    pub accumulators: Vec<f64>,
}

#[inline]
fn to_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, param_count: usize) -> Self {
        let accumulators = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adagrad => vec![0.0; param_count],
        };
        Self {
            kind,
            steps: 0,
            accumulators,
        }
    }

    /// Switches optimizer kind, discarding accumulators when it changes.
    pub fn reset_to(&mut self, kind: OptimizerKind, param_count: usize) {
        let steps = self.steps;
        *self = Self::new(kind, param_count);
        self.steps = steps;
    }

    /// Applies one update. Gradients are rescaled to `clip_norm` when their
    /// global norm exceeds it. Parameters and accumulators are rounded to
    /// fp32 afterwards.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64, clip_norm: Option<f64>) {
        let mut scale = 1.0;
        if let Some(max) = clip_norm {
            let norm = grads.norm();
            if norm > max && norm > 0.0 {
                scale = max / norm;
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.data.iter_mut().zip(&grads.data) {
                    *p = to_f32(*p - lr * scale * g);
                }
            }
            OptimizerKind::Adagrad => {
                if self.accumulators.len() != params.data.len() {
                    self.accumulators = vec![0.0; params.data.len()];
                }
                for ((p, g), a) in params.data.iter_mut().zip(&grads.data).zip(&mut self.accumulators) {
                    let g = g * scale;
                    *a = to_f32(*a + g * g);
                    *p = to_f32(*p - lr * g / (a.sqrt() + ADAGRAD_EPS));
                }
            }
        }
        self.steps += 1;
    }
}
