//! Fully-connected networks with exact reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{add_scaled_vec, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Mat,
    pub b: Vec<f64>,
    pub act: Activation,
}

/// Ordered affine-plus-activation layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Pre-activations and layer inputs retained for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Mat>,
    pub b: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims` lists the layer widths input-first, e.g. `[8, 64, 64, 1]`.
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: Mat::glorot_uniform(fan_out, fan_in, rng),
                    b: (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect(),
                    act: if i + 2 == dims.len() { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows
    }

    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(input.len(), self.input_dim(), "mlp input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            inputs.push(x.clone());
            let mut z = layer.w.matvec(&x);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            preacts.push(z.clone());
            for zi in z.iter_mut() {
                *zi = layer.act.apply(*zi);
            }
            x = z;
        }
        (x, MlpCache { inputs, preacts })
    }

    /// Forward pass without retaining the cache.
    pub fn infer(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).0
    }

    /// Exact reverse-mode gradients for one forward cache. Returns parameter
    /// gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, output_grad: &[f64]) -> (MlpGrads, Vec<f64>) {
        assert_eq!(cache.inputs.len(), self.layers.len(), "stale cache");
        let mut grads = self.zero_grads();
        let mut upstream = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.preacts[l];
            assert_eq!(upstream.len(), z.len(), "stale cache");
            let dz: Vec<f64> = upstream
                .iter()
                .zip(z)
                .map(|(u, zi)| u * layer.act.derivative(*zi))
                .collect();
            grads.w[l].add_outer(&dz, &cache.inputs[l], 1.0);
            add_scaled_vec(&mut grads.b[l], &dz, 1.0);
            upstream = layer.w.t_matvec(&dz);
        }
        (grads, upstream)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w: self.layers.iter().map(|l| Mat::zeros(l.w.rows, l.w.cols)).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.data.len() + l.b.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w.data);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let w_len = l.w.data.len();
            l.w.data.copy_from_slice(&flat[off..off + w_len]);
            off += w_len;
            let b_len = l.b.len();
            l.b.copy_from_slice(&flat[off..off + b_len]);
            off += b_len;
        }
    }
}

impl MlpGrads {
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.add_scaled(b, scale);
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            add_scaled_vec(a, b, scale);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_diff, max_rel_err};
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_net_outputs_zero() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let mut mlp = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        mlp.set_flat(&vec![0.0; mlp.n_params()]);
        assert_eq!(mlp.infer(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_through() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let mut mlp = Mlp::new(&[3, 3], Activation::Relu, Activation::Identity, &mut rng);
        let mut flat = vec![0.0; mlp.n_params()];
        // Row-major 3x3 identity, zero bias.
        flat[0] = 1.0;
        flat[4] = 1.0;
        flat[8] = 1.0;
        mlp.set_flat(&flat);
        assert_eq!(mlp.infer(&[0.3, -0.7, 2.0]), vec![0.3, -0.7, 2.0]);
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        // Independent oracle: explicit loops over a fixed 2-3-1 net.
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        let mlp = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let x = [0.7, -1.3];
        let l0 = &mlp.layers[0];
        let mut h = [0.0f64; 3];
        for r in 0..3 {
            let mut acc = l0.b[r];
            for c in 0..2 {
                acc += l0.w.at(r, c) * x[c];
            }
            h[r] = acc.max(0.0);
        }
        let l1 = &mlp.layers[1];
        let mut y = l1.b[0];
        for c in 0..3 {
            y += l1.w.at(0, c) * h[c];
        }
        let got = mlp.infer(&x)[0];
        assert!((got - y).abs() < 1e-12, "{got} vs {y}");
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let mlp = Mlp::new(&[4, 8, 1], Activation::Tanh, Activation::Tanh, &mut rng);
        let x = [0.1, 0.2, -0.3, 0.9];
        assert_eq!(mlp.infer(&x), mlp.infer(&x));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let mlp = Mlp::new(&[3, 5, 4, 2], Activation::Relu, Activation::Tanh, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dout: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, cache) = mlp.forward(&x);
            let (grads, dx) = mlp.backward(&cache, &dout);

            let loss = |m: &Mlp, x: &[f64], dout: &[f64]| -> f64 {
                m.infer(x).iter().zip(dout).map(|(o, d)| o * d).sum()
            };
            let analytic = grads.flat();
            let numeric = central_diff(&mlp.flat(), 1e-5, |theta| {
                let mut probe = mlp.clone();
                probe.set_flat(theta);
                loss(&probe, &x, &dout)
            });
            assert!(max_rel_err(&analytic, &numeric) < 1e-4);

            let numeric_dx = central_diff(&x, 1e-5, |xv| loss(&mlp, xv, &dout));
            assert!(max_rel_err(&dx, &numeric_dx) < 1e-4);
        }
    }

    #[test]
    fn backward_linear_in_output_grad() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(23);
        let mlp = Mlp::new(&[3, 6, 2], Activation::Relu, Activation::Identity, &mut rng);
        let (_, cache) = mlp.forward(&[0.4, -0.2, 1.1]);
        let (zero, _) = mlp.backward(&cache, &[0.0, 0.0]);
        assert!(zero.flat().iter().all(|g| *g == 0.0));
        let (g1, _) = mlp.backward(&cache, &[0.5, -0.25]);
        let (g2, _) = mlp.backward(&cache, &[1.0, -0.5]);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
