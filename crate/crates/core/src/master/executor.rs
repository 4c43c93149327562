//! Decentralized execution: each active station bids from its own
//! observation alone and the highest bid wins the request.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::domain::{k_nearest, Action, ChargingRequest, FeatureNorm};
use crate::nn::Mlp;
use crate::scenario::Scenario;
use crate::simulator::{ActiveStation, Policy};

/// Deterministic bid of one agent for its normalized observation.
pub fn act(actor: &Mlp, obs_features: &[f64]) -> Action {
    Action::clamped(actor.infer(obs_features)[0])
}

/// Argmax-bid selection; ties fall to the lower ETA, then the lower id.
pub fn select_station(candidates: &[(usize, u32)], bids: &[f64]) -> usize {
    assert!(!candidates.is_empty(), "empty candidate set");
    assert_eq!(candidates.len(), bids.len());
    let mut best = 0;
    for i in 1..candidates.len() {
        let (id, eta) = candidates[i];
        let (best_id, best_eta) = candidates[best];
        if bids[i] > bids[best]
            || (bids[i] == bids[best] && (eta, id) < (best_eta, best_id))
        {
            best = i;
        }
    }
    candidates[best].0
}

/// The `k` stations activated for a request, nearest first by ETA.
pub fn active_set(scenario: &Scenario, request: &ChargingRequest, k: usize) -> Vec<(usize, u32)> {
    assert!(k >= 1);
    k_nearest(&scenario.stations, request.location, k, scenario.speed_kmh)
}

/// Policy wrapper around a shared actor. With a positive noise std the bids
/// are perturbed for exploration; bids stay clamped to `[-1, 1]` and the
/// executed bids are kept for transition storage.
pub struct MasterPolicy {
    pub actor: Mlp,
    pub norm: FeatureNorm,
    noise_std: f64,
    rng: rand::rngs::StdRng,
    pub last_bids: Vec<f64>,
}

impl MasterPolicy {
    pub fn greedy(actor: Mlp, norm: FeatureNorm) -> Self {
        Self { actor, norm, noise_std: 0.0, rng: rand::rngs::StdRng::seed_from_u64(0), last_bids: Vec::new() }
    }

    pub fn exploring(actor: Mlp, norm: FeatureNorm, noise_std: f64, seed: u64) -> Self {
        Self { actor, norm, noise_std, rng: rand::rngs::StdRng::seed_from_u64(seed), last_bids: Vec::new() }
    }

    /// Swaps in a freshly updated actor mid-episode.
    pub fn set_actor(&mut self, actor: Mlp) {
        self.actor = actor;
    }

    pub fn set_noise_std(&mut self, noise_std: f64) {
        self.noise_std = noise_std;
    }
}

impl Policy for MasterPolicy {
    fn recommend(&mut self, _request: &ChargingRequest, active: &[ActiveStation]) -> Option<usize> {
        let mut bids = Vec::with_capacity(active.len());
        for station in active {
            let features = station.observation.features(&self.norm);
            let mut bid = act(&self.actor, &features).0;
            if self.noise_std > 0.0 {
                let noise = Normal::new(0.0, self.noise_std).expect("positive std");
                bid = Action::clamped(bid + noise.sample(&mut self.rng)).0;
            }
            bids.push(bid);
        }
        self.last_bids = bids.clone();
        let candidates: Vec<(usize, u32)> = active.iter().map(|a| (a.station_id, a.eta)).collect();
        Some(select_station(&candidates, &bids))
    }
}
