//! On-disk artifacts of a training run: the checkpoint (parameters plus a
//! provenance manifest) and the per-iteration history CSV.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{mix_seed, FeatureNorm, TrainConfig};
use crate::nn::ParamMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub algo: String,
    pub mode: String,
    pub cfg_hash: String,
    pub iteration: usize,
    pub val_mcwt: f64,
    pub val_mcp: f64,
    pub val_tsf: f64,
    pub val_cfr: f64,
    pub norm: FeatureNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParamMap,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Stable fingerprint of a resolved configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    format!("{:016x}", mix_seed(0, &json, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub episode: usize,
    pub l_cwt: f64,
    pub l_cp: f64,
    pub beta_mean: f64,
    pub val_mcwt: f64,
    pub val_mcp: f64,
    pub val_tsf: f64,
    pub val_cfr: f64,
}

pub const HISTORY_HEADER: &str = "iteration,episode,L_cwt,L_cp,beta_mean,val_MCWT,val_MCP,val_TSF,val_CFR";

pub fn history_to_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iteration, r.episode, r.l_cwt, r.l_cp, r.beta_mean, r.val_mcwt, r.val_mcp, r.val_tsf, r.val_cfr
        ));
    }
    out
}
