//! Minimal neural toolkit: dense layers with analytic gradients, the
//! attention block used by the centralized critic, Adam, soft target updates
//! and JSON checkpoints. Everything is f64 and CPU-only; forward passes are
//! pure functions of their inputs.

mod attention;
mod checkpoint;
pub mod gradcheck;
mod linalg;
mod mlp;
mod optim;

pub use attention::{Attention, AttentionCache, AttentionGrads};
pub use checkpoint::{
    extract_mlp, insert_mlp, load_params, mlp_from_params, save_params, ParamMap, ParamTensor,
};
pub use linalg::Mat;
pub use mlp::{Activation, Mlp, MlpCache, MlpGrads};
pub use optim::{soft_update, AdamState};
