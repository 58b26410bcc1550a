//! ADAM optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring a fixed parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor], hyper: AdamHyper) -> Self {
        AdamState {
            m: shapes.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
            t: 0,
            hyper,
        }
    }

    /// One update: t += 1, moments decay toward the gradient, parameters move
    /// by lr · m̂ / (√v̂ + ε). Parameter and gradient slices must be in the
    /// same order as at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dim("adam: parameter count mismatch".into()));
        }
        self.t += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape != g.shape {
                return Err(Error::Dim("adam: param/grad shape mismatch".into()));
            }
            if !g.all_finite() {
                return Err(Error::Numeric("adam: non-finite gradient".into()));
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
