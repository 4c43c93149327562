//! Attention block over a variable-size set of per-agent feature vectors.
//!
//! Scores each feature with `e_i = v^T tanh(W_a f_i)`, softmaxes the scores
//! into influence weights, and maps the weighted sum through
//! `x = relu(W_c sum_i alpha_i f_i)`. Permutation-invariant in the agents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{add_scaled_vec, dot, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub v: Vec<f64>,
    pub w_a: Mat,
    pub w_c: Mat,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    features: Vec<Vec<f64>>,
    tanh_scores: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    weighted_sum: Vec<f64>,
    preact: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub v: Vec<f64>,
    pub w_a: Mat,
    pub w_c: Mat,
}

/// Numerically safe softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Attention {
    /// `feature_dim` is the width of each per-agent vector, `score_dim` the
    /// hidden width of the scoring layer, `out_dim` the width of `x`.
    pub fn new(feature_dim: usize, score_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (score_dim as f64).sqrt();
        Self {
            v: (0..score_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            w_a: Mat::glorot_uniform(score_dim, feature_dim, rng),
            w_c: Mat::glorot_uniform(out_dim, feature_dim, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_a.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w_c.rows
    }

    /// Returns the pooled representation, the influence weights (exposed for
    /// inspection) and the cache for the backward pass.
    pub fn forward(&self, features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, AttentionCache) {
        assert!(!features.is_empty(), "attention needs at least one agent");
        let dim = self.feature_dim();
        let mut tanh_scores = Vec::with_capacity(features.len());
        let mut logits = Vec::with_capacity(features.len());
        for f in features {
            assert_eq!(f.len(), dim, "attention feature dimension mismatch");
            let mut h = self.w_a.matvec(f);
            for hi in h.iter_mut() {
                *hi = hi.tanh();
            }
            logits.push(dot(&self.v, &h));
            tanh_scores.push(h);
        }
        let alphas = softmax(&logits);
        let mut weighted_sum = vec![0.0; dim];
        for (alpha, f) in alphas.iter().zip(features) {
            add_scaled_vec(&mut weighted_sum, f, *alpha);
        }
        let preact = self.w_c.matvec(&weighted_sum);
        let x = preact.iter().map(|z| z.max(0.0)).collect();
        let cache = AttentionCache {
            features: features.to_vec(),
            tanh_scores,
            alphas: alphas.clone(),
            weighted_sum,
            preact,
        };
        (x, alphas, cache)
    }

    /// Gradients of the parameters and of every input feature vector. The
    /// per-feature gradients carry the action-slot gradient each actor needs.
    pub fn backward(&self, cache: &AttentionCache, x_grad: &[f64]) -> (AttentionGrads, Vec<Vec<f64>>) {
        let n = cache.features.len();
        let mut grads = AttentionGrads {
            v: vec![0.0; self.v.len()],
            w_a: Mat::zeros(self.w_a.rows, self.w_a.cols),
            w_c: Mat::zeros(self.w_c.rows, self.w_c.cols),
        };
        let mut dfeatures = vec![vec![0.0; self.feature_dim()]; n];

        // relu and pooling layer
        let dz: Vec<f64> = x_grad
            .iter()
            .zip(&cache.preact)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        grads.w_c.add_outer(&dz, &cache.weighted_sum, 1.0);
        let dsum = self.w_c.t_matvec(&dz);

        // weighted sum: d alpha_i and the direct feature path
        let dalphas: Vec<f64> = cache.features.iter().map(|f| dot(&dsum, f)).collect();
        for (df, alpha) in dfeatures.iter_mut().zip(&cache.alphas) {
            add_scaled_vec(df, &dsum, *alpha);
        }

        // softmax
        let weighted: f64 = cache.alphas.iter().zip(&dalphas).map(|(a, d)| a * d).sum();
        let dlogits: Vec<f64> = cache
            .alphas
            .iter()
            .zip(&dalphas)
            .map(|(a, d)| a * (d - weighted))
            .collect();

        // scoring layer
        for i in 0..n {
            let t = &cache.tanh_scores[i];
            add_scaled_vec(&mut grads.v, t, dlogits[i]);
            let dh: Vec<f64> = self
                .v
                .iter()
                .zip(t)
                .map(|(vi, ti)| dlogits[i] * vi * (1.0 - ti * ti))
                .collect();
            grads.w_a.add_outer(&dh, &cache.features[i], 1.0);
            add_scaled_vec(&mut dfeatures[i], &self.w_a.t_matvec(&dh), 1.0);
        }
        (grads, dfeatures)
    }

    pub fn n_params(&self) -> usize {
        self.v.len() + self.w_a.data.len() + self.w_c.data.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.w_a.data);
        out.extend_from_slice(&self.w_c.data);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let (v_len, wa_len) = (self.v.len(), self.w_a.data.len());
        self.v.copy_from_slice(&flat[..v_len]);
        self.w_a.data.copy_from_slice(&flat[v_len..v_len + wa_len]);
        self.w_c.data.copy_from_slice(&flat[v_len + wa_len..]);
    }
}

impl AttentionGrads {
    pub fn add_scaled(&mut self, other: &AttentionGrads, scale: f64) {
        add_scaled_vec(&mut self.v, &other.v, scale);
        self.w_a.add_scaled(&other.w_a, scale);
        self.w_c.add_scaled(&other.w_c, scale);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.w_a.data);
        out.extend_from_slice(&self.w_c.data);
        out
    }
}
