use serde::{Deserialize, Serialize};

use crate::numerics::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Applies the gradients stored on each parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, t)| vec![0.0; t.len()])
                .collect::<Vec<_>>()
        };
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for t in store.tensors_mut() {
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                        continue;
                    };
                    for (p, g) in t.data_mut().iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = ADAM_BETAS;
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for ((t, m), v) in store.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                        continue;
                    };
                    for (((p, g), m), v) in t
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
