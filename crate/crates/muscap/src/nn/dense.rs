//! Affine layer y = Wx + b.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_init, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseParams {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(out_dim, in_dim);
        glorot_init(&mut p.w, in_dim, out_dim, rng);
        p
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Dim(format!(
                "dense forward: input {} vs expected {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut y = self.w.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.b.data) {
            *yi += bi;
        }
        Ok(y)
    }

    /// Accumulates dW, db into `grads` and returns dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut DenseParams) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() || dy.len() != self.out_dim() {
            return Err(Error::Dim("dense backward: dims mismatch".into()));
        }
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.data.iter_mut().zip(dy) {
            *g += d;
        }
        Ok(self.w.matvec_t(dy))
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w"), &self.w),
            (format!("{prefix}.b"), &self.b),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w"), &mut self.w),
            (format!("{prefix}.b"), &mut self.b),
        ]
    }
}

impl ParamSet for DenseParams {
    fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        self.named("dense")
    }

    fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_mut("dense")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_passes_through() {
        let mut p = DenseParams::zeros(3, 3);
        for i in 0..3 {
            *p.w.at_mut(i, i) = 1.0;
        }
        assert_eq!(p.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut p = DenseParams::zeros(2, 3);
        p.b.data = vec![0.5, -1.5];
        assert_eq!(p.forward(&[0.0; 3]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DenseParams::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut grads = DenseParams::zeros(3, 4);
        p.backward(&x, &weights, &mut grads).unwrap();

        let shape = p.clone();
        let f = |t: &[f64]| {
            let mut m = shape.clone();
            m.load_flat(t);
            let y = m.forward(&x).unwrap();
            y.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let report = gradient_check(&f, &p.flatten(), &grads.flatten(), 1e-5).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }
}
