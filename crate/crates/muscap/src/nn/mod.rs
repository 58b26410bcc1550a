//! Deterministic neural-network primitives with hand-derived gradients.
//! No autodiff: every backward pass is written out and verified against
//! central finite differences.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod gru;
pub mod loss;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Uniform Glorot initialization on [-sqrt(6/(fan_in+fan_out)), +...].
/// Biases stay zero; callers only initialize weight tensors.
pub fn glorot_init(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in &mut t.data {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Named views over a model's parameter tensors, in a fixed order. Drives
/// the optimizer, checkpointing, and flattening for gradient checks.
pub trait ParamSet {
    fn param_tensors(&self) -> Vec<(String, &Tensor)>;
    fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, t) in self.param_tensors() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, t) in self.param_tensors_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    fn num_params(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
