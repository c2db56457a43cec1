use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, LinearLayer, ParamStore, Tape, Var};

/// Initial second-layer bias, `atanh(0.5)`, so fresh gates start half open.
pub const GATE_BIAS_INIT: f64 = 0.549_306_144_334_054_8;

/// `max(0, tanh(FC₂(ReLU(FC₁(flatten(F_h + F_l + X))))))`, three outputs.
#[derive(Debug, Clone)]
pub struct RoutingGate {
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
}

impl RoutingGate {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        features: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fc1 = LinearLayer::new(store, &format!("{prefix}.fc1"), features, hidden, rng);
        let fc2 = LinearLayer::new(store, &format!("{prefix}.fc2"), hidden, 3, rng);
        store.get_mut(fc2.bias).data_mut().fill(GATE_BIAS_INIT);
        Self { fc1, fc2 }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        fh: Var,
        fl: Var,
        x: Option<Var>,
        vars: &[Var],
    ) -> Result<Var> {
        if tape.shape(fh) != tape.shape(fl) {
            return Err(Error::shape("routing gate", tape.shape(fh), tape.shape(fl)));
        }
        let mut sum = tape.add(fh, fl)?;
        if let Some(x) = x {
            sum = tape.add(sum, x)?;
        }
        let n = tape.value(sum).len();
        let flat = tape.reshape(sum, &[n])?;
        let hidden = self.fc1.forward(tape, flat, vars)?;
        let hidden = tape.relu(hidden)?;
        let out = self.fc2.forward(tape, hidden, vars)?;
        tape.activation(out, Activation::RestrictedTanh)
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    pub fn macs(&self) -> usize {
        self.fc1.macs(1) + self.fc2.macs(1)
    }
}
