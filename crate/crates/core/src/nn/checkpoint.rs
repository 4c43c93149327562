//! Checkpoint format: one JSON document mapping named parameter groups to a
//! shape plus row-major values. serde_json emits shortest-round-trip decimal
//! literals, so every f64 survives a save/load cycle exactly.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linalg::Mat;
use super::mlp::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn from_mat(m: &Mat) -> Self {
        Self { shape: vec![m.rows, m.cols], data: m.data.clone() }
    }

    pub fn from_vec(v: &[f64]) -> Self {
        Self { shape: vec![v.len()], data: v.to_vec() }
    }

    pub fn to_mat(&self) -> Result<Mat, String> {
        if self.shape.len() != 2 || self.shape[0] * self.shape[1] != self.data.len() {
            return Err(format!("expected matrix, got shape {:?}", self.shape));
        }
        Ok(Mat { rows: self.shape[0], cols: self.shape[1], data: self.data.clone() })
    }
}

/// Named parameter groups; BTreeMap keeps serialization order stable.
pub type ParamMap = BTreeMap<String, ParamTensor>;

pub fn save_params(params: &ParamMap, path: &Path) -> io::Result<()> {
    let json = serde_json::to_string(params)?;
    std::fs::write(path, json)
}

pub fn load_params(path: &Path) -> io::Result<ParamMap> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Inserts every layer of an mlp under `prefix.l<i>.{w,b}`.
pub fn insert_mlp(params: &mut ParamMap, prefix: &str, mlp: &Mlp) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        params.insert(format!("{prefix}.l{i}.w"), ParamTensor::from_mat(&layer.w));
        params.insert(format!("{prefix}.l{i}.b"), ParamTensor::from_vec(&layer.b));
    }
}

/// Loads layers saved by [`insert_mlp`] back into an mlp of matching shape.
pub fn extract_mlp(params: &ParamMap, prefix: &str, into: &mut Mlp) -> Result<(), String> {
    for (i, layer) in into.layers.iter_mut().enumerate() {
        let w = params
            .get(&format!("{prefix}.l{i}.w"))
            .ok_or_else(|| format!("checkpoint missing {prefix}.l{i}.w"))?
            .to_mat()?;
        if w.rows != layer.w.rows || w.cols != layer.w.cols {
            return Err(format!(
                "checkpoint {prefix}.l{i}.w has shape {}x{}, expected {}x{}",
                w.rows, w.cols, layer.w.rows, layer.w.cols
            ));
        }
        layer.w = w;
        let b = params
            .get(&format!("{prefix}.l{i}.b"))
            .ok_or_else(|| format!("checkpoint missing {prefix}.l{i}.b"))?;
        if b.data.len() != layer.b.len() {
            return Err(format!("checkpoint {prefix}.l{i}.b has wrong length"));
        }
        layer.b = b.data.clone();
    }
    Ok(())
}

/// Rebuilds an mlp purely from its checkpointed tensors; layer shapes come
/// from the stored matrices, `hidden` and `output` set the activations.
pub fn mlp_from_params(
    params: &ParamMap,
    prefix: &str,
    hidden: super::mlp::Activation,
    output: super::mlp::Activation,
) -> Result<Mlp, String> {
    let mut layers = Vec::new();
    for i in 0.. {
        let Some(w) = params.get(&format!("{prefix}.l{i}.w")) else { break };
        let w = w.to_mat()?;
        let b = params
            .get(&format!("{prefix}.l{i}.b"))
            .ok_or_else(|| format!("checkpoint missing {prefix}.l{i}.b"))?;
        if b.data.len() != w.rows {
            return Err(format!("checkpoint {prefix}.l{i} weight/bias shape mismatch"));
        }
        layers.push(super::mlp::Layer { w, b: b.data.clone(), act: hidden });
    }
    if layers.is_empty() {
        return Err(format!("checkpoint has no layers under {prefix:?}"));
    }
    let last = layers.len() - 1;
    layers[last].act = output;
    Ok(Mlp { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(31);
        let mlp = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Tanh, &mut rng);
        let mut params = ParamMap::new();
        insert_mlp(&mut params, "actor", &mlp);
        params.insert("extra".into(), ParamTensor::from_vec(&[0.1, 1e-300, -3.5e17, 0.30000000000000004]));

        let dir = std::env::temp_dir().join("evrec_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.json");
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(params, loaded);

        let mut restored = mlp.clone();
        restored.set_flat(&vec![0.0; restored.n_params()]);
        extract_mlp(&loaded, "actor", &mut restored).unwrap();
        assert_eq!(restored, mlp);
    }

    #[test]
    fn missing_group_is_reported() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(32);
        let mut mlp = Mlp::new(&[2, 2], Activation::Relu, Activation::Identity, &mut rng);
        let err = extract_mlp(&ParamMap::new(), "actor", &mut mlp).unwrap_err();
        assert!(err.contains("actor.l0.w"));
    }
}
