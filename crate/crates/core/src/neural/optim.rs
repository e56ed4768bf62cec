use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state for one model.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &Mlp) -> Self {
        let n = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => model.param_count(),
        };
        Self {
            kind,
            lr,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step);
        let bc2 = 1.0 - BETA2.powi(self.step);
        let mut k = 0;
        for (layer, grad) in model.layers.iter_mut().zip(&grads.layers) {
            let params = layer
                .weights
                .iter_mut()
                .zip(grad.weights.iter())
                .chain(layer.bias.iter_mut().zip(grad.bias.iter()));
            for (p, &g) in params {
                match self.kind {
                    OptimizerKind::Sgd => *p -= self.lr * g,
                    OptimizerKind::Adam => {
                        let m = &mut self.m[k];
                        let v = &mut self.v[k];
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                    }
                }
                k += 1;
            }
        }
    }
}
