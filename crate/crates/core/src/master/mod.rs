//! The learner: a shared bidding actor per station, twin centralized
//! attentive critics over the active set, a competition-trace encoder fed by
//! delayed transitions, dynamic gradient re-weighting across the two
//! objectives, and the decentralized executor.

mod artifacts;
mod executor;
mod model;
mod replay;
mod trainer;

pub use artifacts::{config_hash, history_to_csv, Checkpoint, CheckpointManifest, HistoryRow, HISTORY_HEADER};
pub use executor::{act, active_set, select_station, MasterPolicy};
pub use model::{
    assemble_feature, encode_trace, encode_trace_cached, feature_norm, trace_encoder_grad,
    CriticGrads, CriticNet, FrozenOptima, FrozenPair, MasterModel, Objective, ACTION_SLOT,
};
pub use replay::{AgentAt, AgentNext, DelayedTransition, ReplayBuffer, TransitionCollector};
pub use trainer::{
    actor_gradient, actor_update, critic_target, critic_update, gap_ratios, objective_scale,
    reweight, train, DaySplit, Optimizers, TrainError, TrainMode, TrainResult,
};
