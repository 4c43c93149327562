//! Reference policies: Random, nearest-station, cheapest-of-k-nearest, the
//! ground-truth replay, and an independent-critic learner that reuses the
//! delayed-transition machinery but approximates returns from each agent's
//! own observation and action only, on the averaged reward.

use rand::{Rng, SeedableRng};

use crate::domain::{mix_seed, ChargingRequest, FeatureNorm, TrainConfig, OBS_DIM};
use crate::eval::{compute_metrics, MetricsReport};
use crate::master::{
    assemble_feature, encode_trace, encode_trace_cached, feature_norm, history_to_csv,
    trace_encoder_grad, DaySplit, DelayedTransition, HistoryRow, MasterPolicy, ReplayBuffer,
    TrainError, TransitionCollector,
};
use crate::nn::{
    insert_mlp, soft_update, Activation, AdamState, Mat, Mlp, ParamMap, ParamTensor,
};
use crate::scenario::Scenario;
use crate::simulator::{rollout, ActiveStation, EpisodeSim, Policy};

pub use crate::master::history_to_csv as iddpg_history_to_csv;

/// Uniform choice over the active set.
pub struct RandomPolicy {
    rng: rand::rngs::StdRng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: rand::rngs::StdRng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn recommend(&mut self, _request: &ChargingRequest, active: &[ActiveStation]) -> Option<usize> {
        assert!(!active.is_empty());
        Some(active[self.rng.gen_range(0..active.len())].station_id)
    }
}

/// Minimum-ETA station, ties to the lower id.
pub struct GreedyNearest;

impl Policy for GreedyNearest {
    fn recommend(&mut self, _request: &ChargingRequest, active: &[ActiveStation]) -> Option<usize> {
        active
            .iter()
            .min_by_key(|a| (a.eta, a.station_id))
            .map(|a| a.station_id)
    }
}

/// Least expensive (at each candidate's own arrival time) among the k
/// nearest stations; price ties fall to the lower ETA, then the lower id.
pub struct GreedyPrice {
    pub k: usize,
}

impl Policy for GreedyPrice {
    fn recommend(&mut self, _request: &ChargingRequest, active: &[ActiveStation]) -> Option<usize> {
        assert!(self.k >= 1);
        let mut nearest: Vec<&ActiveStation> = active.iter().collect();
        nearest.sort_by_key(|a| (a.eta, a.station_id));
        nearest
            .into_iter()
            .take(self.k)
            .min_by(|a, b| {
                a.observation
                    .cp_at_eta
                    .partial_cmp(&b.observation.cp_at_eta)
                    .unwrap()
                    .then(a.eta.cmp(&b.eta))
                    .then(a.station_id.cmp(&b.station_id))
            })
            .map(|a| a.station_id)
    }
}

/// Replays the ground-truth action of each request.
pub struct RealPolicy;

impl Policy for RealPolicy {
    fn recommend(&mut self, request: &ChargingRequest, _active: &[ActiveStation]) -> Option<usize> {
        Some(request.ground_truth_station)
    }
}

/// Builds a named baseline. Learned policies are loaded elsewhere from their
/// checkpoints.
pub fn baseline_by_name(name: &str, seed: u64) -> Option<Box<dyn Policy>> {
    match name {
        "random" => Some(Box::new(RandomPolicy::new(seed))),
        "greedy-n" => Some(Box::new(GreedyNearest)),
        "greedy-p-5" => Some(Box::new(GreedyPrice { k: 5 })),
        "greedy-p-10" => Some(Box::new(GreedyPrice { k: 10 })),
        "real" => Some(Box::new(RealPolicy)),
        _ => None,
    }
}

pub const BASELINE_NAMES: [&str; 5] = ["random", "greedy-n", "greedy-p-5", "greedy-p-10", "real"];

/// Independent-critic model: the same shared actor shape as the main
/// learner, but the critic scores each agent from `[o ⊕ a ⊕ p]` alone and is
/// trained on the average of the two reward streams.
#[derive(Debug, Clone, PartialEq)]
pub struct IddpgModel {
    pub norm: FeatureNorm,
    pub p_dim: usize,
    pub trace_scale: f64,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
    pub trace_encoder: Mat,
    pub trace_encoder_target: Mat,
}

impl IddpgModel {
    pub fn new(norm: FeatureNorm, cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        let feature_dim = OBS_DIM + 1 + cfg.p_dim;
        let actor = Mlp::new(
            &[OBS_DIM, cfg.hidden_dim, cfg.hidden_dim, 1],
            Activation::Relu,
            Activation::Tanh,
            rng,
        );
        let critic = Mlp::new(
            &[feature_dim, cfg.hidden_dim, cfg.hidden_dim, 1],
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        let trace_encoder = Mat::glorot_uniform(cfg.p_dim, cfg.d, rng);
        Self {
            trace_scale: norm.max_capacity.max(1) as f64,
            norm,
            p_dim: cfg.p_dim,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            trace_encoder_target: trace_encoder.clone(),
            actor,
            critic,
            trace_encoder,
        }
    }

    fn trace_input(&self, trace: &crate::domain::CompetitionTrace, zeroed: bool) -> Vec<f64> {
        if zeroed {
            return vec![0.0; trace.values.len()];
        }
        trace.values.iter().map(|v| *v as f64 / self.trace_scale).collect()
    }

    pub fn to_params(&self) -> ParamMap {
        let mut params = ParamMap::new();
        insert_mlp(&mut params, "actor", &self.actor);
        insert_mlp(&mut params, "critic", &self.critic);
        params.insert("trace_encoder.w".into(), ParamTensor::from_mat(&self.trace_encoder));
        params
    }

    pub fn load_params(&mut self, params: &ParamMap) -> Result<(), String> {
        crate::nn::extract_mlp(params, "actor", &mut self.actor)?;
        crate::nn::extract_mlp(params, "critic", &mut self.critic)?;
        self.trace_encoder = params
            .get("trace_encoder.w")
            .ok_or("checkpoint missing trace_encoder.w")?
            .to_mat()?;
        self.actor_target = self.actor.clone();
        self.critic_target = self.critic.clone();
        self.trace_encoder_target = self.trace_encoder.clone();
        Ok(())
    }
}

pub struct IddpgResult {
    pub model: IddpgModel,
    pub best_params: ParamMap,
    pub best_iteration: usize,
    pub best_val: Option<MetricsReport>,
    pub history: Vec<HistoryRow>,
}

fn avg_return(item: &DelayedTransition, cfg: &TrainConfig) -> f64 {
    // Same per-objective reward units as the main learner, averaged.
    0.5 * (item.r_cwt / cfg.eps_cwt.abs().max(1e-9) + item.r_cp / cfg.eps_cp.abs().max(1e-9))
}

fn iddpg_critic_update(
    model: &mut IddpgModel,
    batch: &[&DelayedTransition],
    critic_opt: &mut AdamState,
    trace_opt: &mut AdamState,
    cfg: &TrainConfig,
) -> f64 {
    let mut grads = model.critic.zero_grads();
    let mut wp_grad = Mat::zeros(model.trace_encoder.rows, model.trace_encoder.cols);
    let mut loss = 0.0;
    let mut count = 0usize;
    for item in batch {
        count += item.active.len();
    }
    let scale = 1.0 / count.max(1) as f64;
    for item in batch {
        let disc = cfg.gamma.powi(item.delta_t as i32);
        let r = avg_return(item, cfg);
        for (agent, next) in item.active.iter().zip(&item.next_active) {
            let next_obs = next.observation.features(&model.norm);
            let next_a = model.actor_target.infer(&next_obs)[0];
            let next_p = encode_trace(
                &model.trace_encoder_target,
                &model.trace_input(&next.trace, cfg.ablate_zero_traces),
            );
            let y = r + disc * model.critic_target.infer(&assemble_feature(&next_obs, next_a, &next_p))[0];

            let obs = agent.observation.features(&model.norm);
            let trace = model.trace_input(&agent.trace, cfg.ablate_zero_traces);
            let (p, pre) = encode_trace_cached(&model.trace_encoder, &trace);
            let (q, cache) = model.critic.forward(&assemble_feature(&obs, agent.action, &p));
            let diff = q[0] - y;
            loss += diff * diff * scale;
            let (g, dinput) = model.critic.backward(&cache, &[2.0 * diff * scale]);
            grads.add_scaled(&g, 1.0);
            trace_encoder_grad(&mut wp_grad, &pre, &dinput[OBS_DIM + 1..], &trace);
        }
    }
    let mut flat = model.critic.flat();
    critic_opt.step(&mut flat, &grads.flat());
    model.critic.set_flat(&flat);
    let wp = wp_grad.data.clone();
    trace_opt.step(&mut model.trace_encoder.data, &wp);
    loss
}

fn iddpg_actor_update(
    model: &mut IddpgModel,
    batch: &[&DelayedTransition],
    actor_opt: &mut AdamState,
    cfg: &TrainConfig,
) {
    let mut grads = model.actor.zero_grads();
    let mut count = 0usize;
    for item in batch {
        count += item.active.len();
    }
    let scale = 1.0 / count.max(1) as f64;
    for item in batch {
        for agent in &item.active {
            let obs = agent.observation.features(&model.norm);
            let (a, actor_cache) = model.actor.forward(&obs);
            let p = encode_trace(
                &model.trace_encoder,
                &model.trace_input(&agent.trace, cfg.ablate_zero_traces),
            );
            let (_, critic_cache) = model.critic.forward(&assemble_feature(&obs, a[0], &p));
            let (_, dinput) = model.critic.backward(&critic_cache, &[1.0]);
            let (g, _) = model.actor.backward(&actor_cache, &[dinput[OBS_DIM]]);
            grads.add_scaled(&g, scale);
        }
    }
    let neg: Vec<f64> = grads.flat().iter().map(|g| -g).collect();
    let mut flat = model.actor.flat();
    actor_opt.step(&mut flat, &neg);
    model.actor.set_flat(&flat);
}

/// Trains the independent-critic baseline with the same environment loop,
/// replay discipline and hyperparameters as the main learner.
pub fn iddpg_train(
    scenario: &Scenario,
    split: &DaySplit,
    cfg: &TrainConfig,
) -> Result<IddpgResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if split.train.is_empty() {
        return Err(TrainError::Config("no training days".into()));
    }
    let norm = feature_norm(scenario, cfg);
    let mut init_rng = rand::rngs::StdRng::seed_from_u64(mix_seed(cfg.seed, "iddpg-init", 0));
    let mut model = IddpgModel::new(norm.clone(), cfg, &mut init_rng);
    let mut actor_opt = AdamState::new(model.actor.n_params(), cfg.lr);
    let mut critic_opt = AdamState::new(model.critic.n_params(), cfg.lr);
    let mut trace_opt = AdamState::new(model.trace_encoder.data.len(), cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut batch_rng = rand::rngs::StdRng::seed_from_u64(mix_seed(cfg.seed, "batch", 0));

    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut best_params = model.to_params();
    let mut best_val = None;

    for iteration in 0..cfg.iterations {
        let day = split.train[iteration % split.train.len()];
        let frac = if cfg.iterations > 1 {
            iteration as f64 / (cfg.iterations - 1) as f64
        } else {
            0.0
        };
        let noise_std = cfg.noise_std_init + (cfg.noise_std_final - cfg.noise_std_init) * frac;
        let mut policy = MasterPolicy::exploring(
            model.actor.clone(),
            norm.clone(),
            noise_std,
            mix_seed(cfg.seed, "noise", iteration as u64),
        );
        let mut sim = EpisodeSim::new(
            scenario,
            day,
            cfg,
            mix_seed(cfg.seed, "train-episode", iteration as u64),
        )?;
        let mut collector = TransitionCollector::new(cfg.gamma, cfg.d);
        let mut iter_loss = 0.0;
        let mut n_updates = 0usize;

        loop {
            let step = sim.next_step(&mut policy)?;
            match step {
                Some(record) => {
                    let bids = policy.last_bids.clone();
                    collector.on_step(&sim, &record, &bids);
                }
                None => {
                    collector.on_episode_end(&sim);
                    for t in collector.drain_eligible(&sim)? {
                        buffer.push(t);
                    }
                    break;
                }
            }
            for t in collector.drain_eligible(&sim)? {
                buffer.push(t);
            }
            if buffer.len() < cfg.batch_size {
                continue;
            }
            let batch = buffer.sample(&mut batch_rng, cfg.batch_size);
            iter_loss += iddpg_critic_update(&mut model, &batch, &mut critic_opt, &mut trace_opt, cfg);
            iddpg_actor_update(&mut model, &batch, &mut actor_opt, cfg);

            let mut flat = model.actor_target.flat();
            soft_update(&mut flat, &model.actor.flat(), cfg.tau);
            model.actor_target.set_flat(&flat);
            let mut flat = model.critic_target.flat();
            soft_update(&mut flat, &model.critic.flat(), cfg.tau);
            model.critic_target.set_flat(&flat);
            let source = model.trace_encoder.data.clone();
            soft_update(&mut model.trace_encoder_target.data, &source, cfg.tau);

            policy.set_actor(model.actor.clone());
            n_updates += 1;
        }

        let (val_report, score) = if split.valid.is_empty() {
            (None, 0.0)
        } else {
            let mut greedy = MasterPolicy::greedy(model.actor.clone(), norm.clone());
            let outcomes = rollout(scenario, &split.valid, &mut greedy, cfg, mix_seed(cfg.seed, "valid", 0))?;
            let score = if outcomes.is_empty() {
                f64::NEG_INFINITY
            } else {
                outcomes
                    .iter()
                    .map(|o| {
                        let (a, b) = crate::domain::reward_pair(o, cfg);
                        0.5 * (a + b)
                    })
                    .sum::<f64>()
                    / outcomes.len() as f64
            };
            (Some(compute_metrics(&outcomes, split.valid.len())), score)
        };
        if score >= best_score {
            best_score = score;
            best_iteration = iteration;
            best_params = model.to_params();
            best_val = val_report.clone();
        }
        let val = val_report.unwrap_or_else(|| compute_metrics(&[], 1));
        history.push(HistoryRow {
            iteration,
            episode: day,
            l_cwt: iter_loss / n_updates.max(1) as f64,
            l_cp: iter_loss / n_updates.max(1) as f64,
            beta_mean: 0.5,
            val_mcwt: val.mcwt,
            val_mcp: val.mcp,
            val_tsf: val.tsf,
            val_cfr: val.cfr,
        });
    }

    Ok(IddpgResult { model, best_params, best_iteration, best_val, history })
}

/// Writes an independent-critic history with the shared CSV schema.
pub fn write_history(rows: &[HistoryRow]) -> String {
    history_to_csv(rows)
}
