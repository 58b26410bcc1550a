//! GRU cell with manual forward/backward.
//!
//! Convention: z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
//! h̃ = tanh(W_h x + U_h (r⊙h) + b_h), h' = (1−z)⊙h + z⊙h̃.

// indexed loops mirror the per-coordinate gradient derivations
#![allow(clippy::needless_range_loop)]

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_init, sigmoid, ParamSet};
use crate::tensor::{hadamard, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Intermediates retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruCellParams {
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, input]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn init(hidden: usize, input: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        glorot_init(&mut p.w_z, input, hidden, rng);
        glorot_init(&mut p.w_r, input, hidden, rng);
        glorot_init(&mut p.w_h, input, hidden, rng);
        glorot_init(&mut p.u_z, hidden, hidden, rng);
        glorot_init(&mut p.u_r, hidden, hidden, rng);
        glorot_init(&mut p.u_h, hidden, hidden, rng);
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
        if x.len() != self.input_dim() || h_prev.len() != self.hidden_dim() {
            return Err(Error::Dim(format!(
                "gru forward: x {} h {} vs params I {} H {}",
                x.len(),
                h_prev.len(),
                self.input_dim(),
                self.hidden_dim()
            )));
        }
        let h = self.hidden_dim();
        let mut z = self.w_z.matvec(x);
        let uzh = self.u_z.matvec(h_prev);
        let mut r = self.w_r.matvec(x);
        let urh = self.u_r.matvec(h_prev);
        for i in 0..h {
            z[i] = sigmoid(z[i] + uzh[i] + self.b_z.data[i]);
            r[i] = sigmoid(r[i] + urh[i] + self.b_r.data[i]);
        }
        let rh = hadamard(&r, h_prev);
        let mut h_tilde = self.w_h.matvec(x);
        let uhrh = self.u_h.matvec(&rh);
        for i in 0..h {
            h_tilde[i] = (h_tilde[i] + uhrh[i] + self.b_h.data[i]).tanh();
        }
        let h_new: Vec<f64> = (0..h)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i])
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            h_tilde,
        };
        Ok((h_new, cache))
    }

    /// Backpropagates `dh` through one cell step. Parameter gradients are
    /// accumulated into `grads`; returns (dx, dh_prev).
    pub fn backward(
        &self,
        dh: &[f64],
        cache: &GruCache,
        grads: &mut GruCellParams,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.hidden_dim();
        if dh.len() != h || cache.h_prev.len() != h || cache.x.len() != self.input_dim() {
            return Err(Error::Dim(
                "gru backward: cache/gradient dims mismatch".into(),
            ));
        }
        let GruCache {
            x,
            h_prev,
            z,
            r,
            h_tilde,
        } = cache;

        let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - z[i])).collect();
        let da_h: Vec<f64> = (0..h)
            .map(|i| dh[i] * z[i] * (1.0 - h_tilde[i] * h_tilde[i]))
            .collect();
        let da_z: Vec<f64> = (0..h)
            .map(|i| dh[i] * (h_tilde[i] - h_prev[i]) * z[i] * (1.0 - z[i]))
            .collect();

        let rh = hadamard(r, h_prev);
        grads.w_h.add_outer(&da_h, x);
        grads.u_h.add_outer(&da_h, &rh);
        for i in 0..h {
            grads.b_h.data[i] += da_h[i];
        }

        let drh = self.u_h.matvec_t(&da_h);
        let da_r: Vec<f64> = (0..h)
            .map(|i| drh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..h {
            dh_prev[i] += drh[i] * r[i];
        }

        grads.w_r.add_outer(&da_r, x);
        grads.u_r.add_outer(&da_r, h_prev);
        grads.w_z.add_outer(&da_z, x);
        grads.u_z.add_outer(&da_z, h_prev);
        for i in 0..h {
            grads.b_r.data[i] += da_r[i];
            grads.b_z.data[i] += da_z[i];
        }

        let ur = self.u_r.matvec_t(&da_r);
        let uz = self.u_z.matvec_t(&da_z);
        for i in 0..h {
            dh_prev[i] += ur[i] + uz[i];
        }

        let mut dx = self.w_z.matvec_t(&da_z);
        let wr = self.w_r.matvec_t(&da_r);
        let wh = self.w_h.matvec_t(&da_h);
        for i in 0..dx.len() {
            dx[i] += wr[i] + wh[i];
        }

        Ok((dx, dh_prev))
    }

    fn prefixed(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w_z"), &self.w_z),
            (format!("{prefix}.w_r"), &self.w_r),
            (format!("{prefix}.w_h"), &self.w_h),
            (format!("{prefix}.u_z"), &self.u_z),
            (format!("{prefix}.u_r"), &self.u_r),
            (format!("{prefix}.u_h"), &self.u_h),
            (format!("{prefix}.b_z"), &self.b_z),
            (format!("{prefix}.b_r"), &self.b_r),
            (format!("{prefix}.b_h"), &self.b_h),
        ]
    }

    fn prefixed_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w_z"), &mut self.w_z),
            (format!("{prefix}.w_r"), &mut self.w_r),
            (format!("{prefix}.w_h"), &mut self.w_h),
            (format!("{prefix}.u_z"), &mut self.u_z),
            (format!("{prefix}.u_r"), &mut self.u_r),
            (format!("{prefix}.u_h"), &mut self.u_h),
            (format!("{prefix}.b_z"), &mut self.b_z),
            (format!("{prefix}.b_r"), &mut self.b_r),
            (format!("{prefix}.b_h"), &mut self.b_h),
        ]
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.prefixed(prefix)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.prefixed_mut(prefix)
    }
}

impl ParamSet for GruCellParams {
    fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        self.prefixed("gru")
    }

    fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.prefixed_mut("gru")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_params_halve_hidden_state() {
        let p = GruCellParams::zeros(3, 2);
        let h_prev = [1.0, -2.0, 0.5];
        let (h, _) = p.forward(&[0.3, 0.7], &h_prev).unwrap();
        for (hi, pi) in h.iter().zip(&h_prev) {
            assert!((hi - 0.5 * pi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_stays_zero_under_zero_params() {
        let p = GruCellParams::zeros(3, 2);
        let (h, _) = p.forward(&[1.0, 1.0], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        // Independent scalar-by-scalar evaluation of the four cell equations.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h_dim, i_dim) = (4usize, 3usize);
        let p = GruCellParams::init(h_dim, i_dim, &mut rng);
        let x: Vec<f64> = (0..i_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h_prev: Vec<f64> = (0..h_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (h, _) = p.forward(&x, &h_prev).unwrap();

        for i in 0..h_dim {
            let mut az = p.b_z.data[i];
            let mut ar = p.b_r.data[i];
            for j in 0..i_dim {
                az += p.w_z.at(i, j) * x[j];
                ar += p.w_r.at(i, j) * x[j];
            }
            for j in 0..h_dim {
                az += p.u_z.at(i, j) * h_prev[j];
                ar += p.u_r.at(i, j) * h_prev[j];
            }
            let z = sigmoid(az);
            let _ = sigmoid(ar);
            // h̃ needs the full r vector
            let r_full: Vec<f64> = (0..h_dim)
                .map(|k| {
                    let mut a = p.b_r.data[k];
                    for j in 0..i_dim {
                        a += p.w_r.at(k, j) * x[j];
                    }
                    for j in 0..h_dim {
                        a += p.u_r.at(k, j) * h_prev[j];
                    }
                    sigmoid(a)
                })
                .collect();
            let mut ah = p.b_h.data[i];
            for j in 0..i_dim {
                ah += p.w_h.at(i, j) * x[j];
            }
            for j in 0..h_dim {
                ah += p.u_h.at(i, j) * r_full[j] * h_prev[j];
            }
            let ht = ah.tanh();
            let expected = (1.0 - z) * h_prev[i] + z * ht;
            assert!((h[i] - expected).abs() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruCellParams::init(3, 2, &mut rng);
        let (_, cache) = p.forward(&[0.1, -0.2], &[0.3, 0.4, -0.5]).unwrap();
        let mut grads = GruCellParams::zeros(3, 2);
        let (dx, dh_prev) = p.backward(&[0.0; 3], &cache, &mut grads).unwrap();
        assert_eq!(dx, vec![0.0; 2]);
        assert_eq!(dh_prev, vec![0.0; 3]);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_zero_params_halves_upstream() {
        let p = GruCellParams::zeros(2, 2);
        let (_, cache) = p.forward(&[1.0, 2.0], &[0.5, -0.5]).unwrap();
        let mut grads = GruCellParams::zeros(2, 2);
        let g = [1.0, -3.0];
        let (_, dh_prev) = p.backward(&g, &cache, &mut grads).unwrap();
        for (d, gi) in dh_prev.iter().zip(&g) {
            assert!((d - 0.5 * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        use crate::nn::gradcheck::gradient_check;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h_dim, i_dim) = (4usize, 3usize);
        let p = GruCellParams::init(h_dim, i_dim, &mut rng);
        let x: Vec<f64> = (0..i_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h_prev: Vec<f64> = (0..h_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..h_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // scalar objective: weighted sum of the new hidden state
        let (h, cache) = p.forward(&x, &h_prev).unwrap();
        let _ = h;
        let mut grads = GruCellParams::zeros(h_dim, i_dim);
        p.backward(&weights, &cache, &mut grads).unwrap();

        let theta = p.flatten();
        let shape = p.clone();
        let f = |t: &[f64]| {
            let mut m = shape.clone();
            m.load_flat(t);
            let (h, _) = m.forward(&x, &h_prev).unwrap();
            h.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let report = gradient_check(&f, &theta, &grads.flatten(), 1e-5).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }
}
