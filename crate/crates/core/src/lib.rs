//! Desk-scale framework for EV charging-station recommendation: a synthetic
//! scenario generator, a deterministic minute-stepped charging-network
//! simulator, a from-scratch actor-critic learner with a centralized
//! attentive critic and multi-objective gradient re-weighting, reference
//! baselines, and the evaluation metrics to compare them.

pub mod baselines;
pub mod domain;
pub mod eval;
pub mod master;
pub mod nn;
pub mod scenario;
pub mod simulator;

pub use domain::{
    Action, ChargeOutcome, ChargingRequest, CompetitionTrace, FeatureNorm, Observation, Point,
    PriceBand, StationSpec, TrainConfig,
};
