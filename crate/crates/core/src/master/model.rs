//! Model state of the learner: shared actor, twin centralized attentive
//! critics with their target copies, the competition-trace encoder, and the
//! frozen objective-specific optima used by multi-objective training.

use rand::Rng;

use crate::domain::{CompetitionTrace, FeatureNorm, Observation, TrainConfig, OBS_DIM};
use crate::nn::{
    insert_mlp, Activation, Attention, AttentionCache, AttentionGrads, Mat, Mlp, MlpCache,
    MlpGrads, ParamMap, ParamTensor,
};
use crate::scenario::Scenario;

/// Index of the action inside an assembled per-agent feature vector.
pub const ACTION_SLOT: usize = OBS_DIM;

/// `[observation ⊕ action ⊕ encoded trace]`
pub fn assemble_feature(obs_features: &[f64], action: f64, p: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(obs_features.len() + 1 + p.len());
    f.extend_from_slice(obs_features);
    f.push(action);
    f.extend_from_slice(p);
    f
}

/// `p = relu(W_p I)`: the learned embedding of a competition trace.
pub fn encode_trace(w_p: &Mat, trace: &[f64]) -> Vec<f64> {
    encode_trace_cached(w_p, trace).0
}

/// Returns the embedding and its pre-activation for the backward pass.
pub fn encode_trace_cached(w_p: &Mat, trace: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre = w_p.matvec(trace);
    let p = pre.iter().map(|z| z.max(0.0)).collect();
    (p, pre)
}

/// Gradient of the trace encoder for one agent: `dW_p += relu'(pre) dp ⊗ I`.
pub fn trace_encoder_grad(w_p_grad: &mut Mat, pre: &[f64], dp: &[f64], trace: &[f64]) {
    let masked: Vec<f64> = dp
        .iter()
        .zip(pre)
        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
        .collect();
    w_p_grad.add_outer(&masked, trace, 1.0);
}

/// One centralized attentive critic: attention over active-agent features,
/// then a scalar-valued head.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub attention: Attention,
    pub head: Mlp,
}

pub struct CriticCache {
    att: AttentionCache,
    head: MlpCache,
}

#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub att: AttentionGrads,
    pub head: MlpGrads,
}

impl CriticNet {
    pub fn new(feature_dim: usize, att_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            attention: Attention::new(feature_dim, att_dim, hidden, rng),
            head: Mlp::new(
                &[hidden, hidden, hidden, 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
        }
    }

    pub fn forward(&self, features: &[Vec<f64>]) -> (f64, CriticCache) {
        let (x, _, att) = self.attention.forward(features);
        let (q, head) = self.head.forward(&x);
        (q[0], CriticCache { att, head })
    }

    pub fn value(&self, features: &[Vec<f64>]) -> f64 {
        self.forward(features).0
    }

    /// Influence weights over the active set, for inspection.
    pub fn alphas(&self, features: &[Vec<f64>]) -> Vec<f64> {
        self.attention.forward(features).1
    }

    /// Backpropagates a scalar output gradient; returns parameter gradients
    /// and the gradient of every input feature vector.
    pub fn backward(&self, cache: &CriticCache, dq: f64) -> (CriticGrads, Vec<Vec<f64>>) {
        let (head_grads, dx) = self.head.backward(&cache.head, &[dq]);
        let (att_grads, dfeatures) = self.attention.backward(&cache.att, &dx);
        (CriticGrads { att: att_grads, head: head_grads }, dfeatures)
    }

    pub fn zero_grads(&self) -> CriticGrads {
        CriticGrads {
            att: AttentionGrads {
                v: vec![0.0; self.attention.v.len()],
                w_a: Mat::zeros(self.attention.w_a.rows, self.attention.w_a.cols),
                w_c: Mat::zeros(self.attention.w_c.rows, self.attention.w_c.cols),
            },
            head: self.head.zero_grads(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.attention.n_params() + self.head.n_params()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.attention.flat();
        out.extend(self.head.flat());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let split = self.attention.n_params();
        self.attention.set_flat(&flat[..split]);
        self.head.set_flat(&flat[split..]);
    }
}

impl CriticGrads {
    pub fn add_scaled(&mut self, other: &CriticGrads, scale: f64) {
        self.att.add_scaled(&other.att, scale);
        self.head.add_scaled(&other.head, scale);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.att.flat();
        out.extend(self.head.flat());
        out
    }
}

/// A pretrained single-objective actor/critic pair, frozen during
/// multi-objective training to anchor the gap ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPair {
    pub actor: Mlp,
    pub critic: CriticNet,
    pub trace_encoder: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenOptima {
    pub cwt: FrozenPair,
    pub cp: FrozenPair,
}

/// All live, target and frozen parameters of the learner. One actor serves
/// every station; the trace encoder is shared by both critics.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterModel {
    pub norm: FeatureNorm,
    pub p_dim: usize,
    pub d: usize,
    /// Trace entries are divided by this scale before encoding, mirroring the
    /// supply normalization of the observations.
    pub trace_scale: f64,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic_cwt: CriticNet,
    pub critic_cwt_target: CriticNet,
    pub critic_cp: CriticNet,
    pub critic_cp_target: CriticNet,
    pub trace_encoder: Mat,
    pub trace_encoder_target: Mat,
    pub frozen: Option<FrozenOptima>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Cwt,
    Cp,
}

impl MasterModel {
    pub fn new(norm: FeatureNorm, cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        let feature_dim = OBS_DIM + 1 + cfg.p_dim;
        let actor = Mlp::new(
            &[OBS_DIM, cfg.hidden_dim, cfg.hidden_dim, 1],
            Activation::Relu,
            Activation::Tanh,
            rng,
        );
        let critic_cwt = CriticNet::new(feature_dim, cfg.att_dim, cfg.hidden_dim, rng);
        let critic_cp = CriticNet::new(feature_dim, cfg.att_dim, cfg.hidden_dim, rng);
        let trace_encoder = Mat::glorot_uniform(cfg.p_dim, cfg.d, rng);
        Self {
            trace_scale: norm.max_capacity.max(1) as f64,
            norm,
            p_dim: cfg.p_dim,
            d: cfg.d,
            actor_target: actor.clone(),
            critic_cwt_target: critic_cwt.clone(),
            critic_cp_target: critic_cp.clone(),
            trace_encoder_target: trace_encoder.clone(),
            actor,
            critic_cwt,
            critic_cp,
            trace_encoder,
            frozen: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        OBS_DIM + 1 + self.p_dim
    }

    pub fn critic(&self, objective: Objective) -> &CriticNet {
        match objective {
            Objective::Cwt => &self.critic_cwt,
            Objective::Cp => &self.critic_cp,
        }
    }

    /// Normalized trace vector fed to the encoder.
    pub fn trace_input(&self, trace: &CompetitionTrace, zeroed: bool) -> Vec<f64> {
        if zeroed {
            return vec![0.0; trace.values.len()];
        }
        trace.values.iter().map(|v| *v as f64 / self.trace_scale).collect()
    }

    /// Q value of one critic over aligned per-agent observations, actions and
    /// traces. Pure; permutation-invariant in the agents.
    pub fn critic_eval(
        &self,
        objective: Objective,
        observations: &[Observation],
        actions: &[f64],
        traces: &[CompetitionTrace],
    ) -> f64 {
        assert_eq!(observations.len(), actions.len(), "misaligned agent lists");
        assert_eq!(observations.len(), traces.len(), "misaligned agent lists");
        let features: Vec<Vec<f64>> = observations
            .iter()
            .zip(actions)
            .zip(traces)
            .map(|((obs, a), trace)| {
                let p = encode_trace(&self.trace_encoder, &self.trace_input(trace, false));
                assemble_feature(&obs.features(&self.norm), *a, &p)
            })
            .collect();
        self.critic(objective).value(&features)
    }

    /// Serializes every live parameter group.
    pub fn to_params(&self) -> ParamMap {
        let mut params = ParamMap::new();
        insert_mlp(&mut params, "actor", &self.actor);
        insert_critic(&mut params, "critic_cwt", &self.critic_cwt);
        insert_critic(&mut params, "critic_cp", &self.critic_cp);
        params.insert("trace_encoder.w".into(), ParamTensor::from_mat(&self.trace_encoder));
        params
    }

    /// Restores live parameters from a checkpoint and resets targets to them.
    pub fn load_params(&mut self, params: &ParamMap) -> Result<(), String> {
        crate::nn::extract_mlp(params, "actor", &mut self.actor)?;
        extract_critic(params, "critic_cwt", &mut self.critic_cwt)?;
        extract_critic(params, "critic_cp", &mut self.critic_cp)?;
        self.trace_encoder = params
            .get("trace_encoder.w")
            .ok_or("checkpoint missing trace_encoder.w")?
            .to_mat()?;
        self.actor_target = self.actor.clone();
        self.critic_cwt_target = self.critic_cwt.clone();
        self.critic_cp_target = self.critic_cp.clone();
        self.trace_encoder_target = self.trace_encoder.clone();
        Ok(())
    }

    /// Extracts the frozen pair for one objective out of a trained model's
    /// checkpoint (the actor, that objective's critic and the encoder).
    pub fn frozen_pair(&self, params: &ParamMap, objective: Objective) -> Result<FrozenPair, String> {
        let mut actor = self.actor.clone();
        crate::nn::extract_mlp(params, "actor", &mut actor)?;
        let mut critic = self.critic(objective).clone();
        let prefix = match objective {
            Objective::Cwt => "critic_cwt",
            Objective::Cp => "critic_cp",
        };
        extract_critic(params, prefix, &mut critic)?;
        let trace_encoder = params
            .get("trace_encoder.w")
            .ok_or("checkpoint missing trace_encoder.w")?
            .to_mat()?;
        Ok(FrozenPair { actor, critic, trace_encoder })
    }
}

pub fn insert_critic(params: &mut ParamMap, prefix: &str, critic: &CriticNet) {
    params.insert(format!("{prefix}.att.v"), ParamTensor::from_vec(&critic.attention.v));
    params.insert(format!("{prefix}.att.wa"), ParamTensor::from_mat(&critic.attention.w_a));
    params.insert(format!("{prefix}.att.wc"), ParamTensor::from_mat(&critic.attention.w_c));
    insert_mlp(params, &format!("{prefix}.head"), &critic.head);
}

pub fn extract_critic(params: &ParamMap, prefix: &str, into: &mut CriticNet) -> Result<(), String> {
    into.attention.v = params
        .get(&format!("{prefix}.att.v"))
        .ok_or_else(|| format!("checkpoint missing {prefix}.att.v"))?
        .data
        .clone();
    into.attention.w_a = params
        .get(&format!("{prefix}.att.wa"))
        .ok_or_else(|| format!("checkpoint missing {prefix}.att.wa"))?
        .to_mat()?;
    into.attention.w_c = params
        .get(&format!("{prefix}.att.wc"))
        .ok_or_else(|| format!("checkpoint missing {prefix}.att.wc"))?
        .to_mat()?;
    crate::nn::extract_mlp(params, &format!("{prefix}.head"), &mut into.head)
}

/// Normalization constants derived once per scenario and pinned into
/// checkpoints so execution matches training.
pub fn feature_norm(scenario: &Scenario, cfg: &TrainConfig) -> FeatureNorm {
    FeatureNorm {
        n_stations: scenario.stations.len(),
        max_capacity: scenario.stations.iter().map(|s| s.capacity).max().unwrap_or(1),
        demand_cap: cfg.demand_cap,
        max_power_kw: scenario
            .stations
            .iter()
            .map(|s| s.power_kw)
            .fold(1e-9, f64::max),
        max_price: scenario
            .stations
            .iter()
            .flat_map(|s| s.price_schedule.iter().map(|b| b.price))
            .fold(1e-9, f64::max),
        fail_threshold: cfg.fail_threshold,
    }
}
