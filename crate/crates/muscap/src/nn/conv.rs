//! 2-D convolution, ReLU, 2x2 max-pool and global average pool over
//! [channels, height, width] tensors, each with a hand-written backward.

// indexed loops mirror the per-coordinate gradient derivations
#![allow(clippy::needless_range_loop)]

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::glorot_init;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// [out_channels, in_channels, 3, 3]
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvLayerParams {
    pub fn zeros(out_c: usize, in_c: usize) -> Self {
        ConvLayerParams {
            kernels: Tensor::zeros(&[out_c, in_c, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn init(out_c: usize, in_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(out_c, in_c);
        let fan_in = in_c * KERNEL * KERNEL;
        let fan_out = out_c * KERNEL * KERNEL;
        glorot_init(&mut p.kernels, fan_in, fan_out, rng);
        p
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape[1]
    }
}

fn chw(t: &Tensor) -> (usize, usize, usize) {
    (t.shape[0], t.shape[1], t.shape[2])
}

fn idx3(shape: &[usize], c: usize, i: usize, j: usize) -> usize {
    (c * shape[1] + i) * shape[2] + j
}

/// Valid-padding stride-1 convolution: output is [out_c, h-2, w-2].
pub fn conv2d_forward(params: &ConvLayerParams, input: &Tensor) -> Result<Tensor> {
    let (in_c, h, w) = chw(input);
    if in_c != params.in_channels() {
        return Err(Error::Dim(format!(
            "conv: input has {in_c} channels, kernels expect {}",
            params.in_channels()
        )));
    }
    if h < KERNEL || w < KERNEL {
        return Err(Error::Dim(format!(
            "conv: input {h}x{w} smaller than {KERNEL}x{KERNEL} kernel"
        )));
    }
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let oc = params.out_channels();
    let mut out = Tensor::zeros(&[oc, oh, ow]);
    for c in 0..oc {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = params.bias.data[c];
                for ic in 0..in_c {
                    for u in 0..KERNEL {
                        for v in 0..KERNEL {
                            let k =
                                params.kernels.data[((c * in_c + ic) * KERNEL + u) * KERNEL + v];
                            acc += k * input.data[idx3(&input.shape, ic, i + u, j + v)];
                        }
                    }
                }
                out.data[idx3(&out.shape, c, i, j)] = acc;
            }
        }
    }
    Ok(out)
}

/// Accumulates kernel/bias gradients into `grads`; returns d_input.
pub fn conv2d_backward(
    params: &ConvLayerParams,
    input: &Tensor,
    d_out: &Tensor,
    grads: &mut ConvLayerParams,
) -> Result<Tensor> {
    let (in_c, _, _) = chw(input);
    let (oc, oh, ow) = chw(d_out);
    let mut d_input = Tensor::zeros(&input.shape);
    for c in 0..oc {
        for i in 0..oh {
            for j in 0..ow {
                let g = d_out.data[idx3(&d_out.shape, c, i, j)];
                if g == 0.0 {
                    continue;
                }
                grads.bias.data[c] += g;
                for ic in 0..in_c {
                    for u in 0..KERNEL {
                        for v in 0..KERNEL {
                            let kid = ((c * in_c + ic) * KERNEL + u) * KERNEL + v;
                            let iid = idx3(&input.shape, ic, i + u, j + v);
                            grads.kernels.data[kid] += g * input.data[iid];
                            d_input.data[iid] += g * params.kernels.data[kid];
                        }
                    }
                }
            }
        }
    }
    Ok(d_input)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|x| *x = x.max(0.0));
    out
}

pub fn relu_backward(input: &Tensor, d_out: &Tensor) -> Tensor {
    let mut d_in = d_out.clone();
    for (d, x) in d_in.data.iter_mut().zip(&input.data) {
        if *x <= 0.0 {
            *d = 0.0;
        }
    }
    d_in
}

/// 2x2 stride-2 max-pool; trailing odd rows/columns are dropped. Records the
/// flat argmax index per window (ties break to the lowest row-major index).
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw(input);
    if h < 2 || w < 2 {
        return Err(Error::Dim(format!(
            "maxpool: input {h}x{w} smaller than 2x2"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = idx3(&input.shape, ch, 2 * i, 2 * j);
                let mut best = input.data[best_idx];
                for u in 0..2 {
                    for v in 0..2 {
                        let idx = idx3(&input.shape, ch, 2 * i + u, 2 * j + v);
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = idx3(&out.shape, ch, i, j);
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(input_shape: &[usize], d_out: &Tensor, argmax: &[usize]) -> Tensor {
    let mut d_in = Tensor::zeros(input_shape);
    for (o, &src) in argmax.iter().enumerate() {
        d_in.data[src] += d_out.data[o];
    }
    d_in
}

/// Per-channel mean over the spatial plane.
pub fn global_avg_pool_forward(input: &Tensor) -> Vec<f64> {
    let (c, h, w) = chw(input);
    let plane = (h * w) as f64;
    (0..c)
        .map(|ch| {
            let start = ch * h * w;
            input.data[start..start + h * w].iter().sum::<f64>() / plane
        })
        .collect()
}

pub fn global_avg_pool_backward(input_shape: &[usize], d_out: &[f64]) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let scale = 1.0 / (h * w) as f64;
    let mut d_in = Tensor::zeros(input_shape);
    for ch in 0..c {
        let g = d_out[ch] * scale;
        let start = ch * h * w;
        d_in.data[start..start + h * w]
            .iter_mut()
            .for_each(|x| *x = g);
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn conv_identity_kernel() {
        let mut p = ConvLayerParams::zeros(1, 1);
        p.kernels.data[4] = 1.0; // center tap
        let input = Tensor {
            shape: vec![1, 3, 3],
            data: (1..=9).map(f64::from).collect(),
        };
        let out = conv2d_forward(&p, &input).unwrap();
        assert_eq!(out.shape, vec![1, 1, 1]);
        assert_eq!(out.data, vec![5.0]);
    }

    #[test]
    fn conv_too_small_is_rejected() {
        let p = ConvLayerParams::zeros(1, 1);
        let input = Tensor::zeros(&[1, 2, 5]);
        assert!(conv2d_forward(&p, &input).is_err());
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax_only() {
        // brute force over a small window set, lowest row-major tie-break
        let input = Tensor {
            shape: vec![1, 2, 4],
            data: vec![1.0, 3.0, 2.0, 2.0, 3.0, 0.0, 2.0, 1.0],
        };
        let (out, argmax) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.data, vec![3.0, 2.0]);
        // both 3.0s: index 1 (row 0) beats index 4? values equal -> first seen
        // row-major scan hits (0,1)=3.0 before (1,0)=3.0
        assert_eq!(argmax[0], 1);
        // window 2: ties between 2.0 at (0,2),(0,3),(1,2) -> lowest index 2
        assert_eq!(argmax[1], 2);
        let d_out = Tensor {
            shape: out.shape.clone(),
            data: vec![10.0, 20.0],
        };
        let d_in = maxpool2_backward(&input.shape, &d_out, &argmax);
        let mut expected = vec![0.0; 8];
        expected[1] = 10.0;
        expected[2] = 20.0;
        assert_eq!(d_in.data, expected);
    }

    #[test]
    fn gap_of_constant_input_is_the_constant() {
        let input = Tensor {
            shape: vec![2, 3, 4],
            data: vec![0.5; 24],
        };
        assert_eq!(global_avg_pool_forward(&input), vec![0.5, 0.5]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        use crate::nn::gradcheck::finite_difference_gradient_seq;

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = ConvLayerParams::init(2, 1, &mut rng);
        let input = Tensor {
            shape: vec![1, 5, 6],
            data: (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let out = conv2d_forward(&p, &input).unwrap();
        let weights: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut grads = ConvLayerParams::zeros(2, 1);
        let d_out = Tensor {
            shape: out.shape.clone(),
            data: weights.clone(),
        };
        let d_input = conv2d_backward(&p, &input, &d_out, &mut grads).unwrap();

        // check kernel grads
        let n_kernel = p.kernels.len();
        let theta: Vec<f64> = p.kernels.data.iter().chain(&p.bias.data).copied().collect();
        let f = |t: &[f64]| {
            let mut m = p.clone();
            m.kernels.data.copy_from_slice(&t[..n_kernel]);
            m.bias.data.copy_from_slice(&t[n_kernel..]);
            let o = conv2d_forward(&m, &input).unwrap();
            o.data.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let fd = finite_difference_gradient_seq(&f, &theta).unwrap();
        let analytic: Vec<f64> = grads
            .kernels
            .data
            .iter()
            .chain(&grads.bias.data)
            .copied()
            .collect();
        for i in 0..theta.len() {
            assert!((fd[i] - analytic[i]).abs() < 1e-7, "param coord {i}");
        }

        // check input grads
        let g = |t: &[f64]| {
            let inp = Tensor {
                shape: input.shape.clone(),
                data: t.to_vec(),
            };
            let o = conv2d_forward(&p, &inp).unwrap();
            o.data.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let fd_in = finite_difference_gradient_seq(&g, &input.data).unwrap();
        for i in 0..input.len() {
            assert!((fd_in[i] - d_input.data[i]).abs() < 1e-7, "input coord {i}");
        }
    }
}
