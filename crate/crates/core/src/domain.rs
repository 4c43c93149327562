//! Core value types and deterministic pure functions shared by every other
//! module: stations, requests, outcomes, observations, rewards and returns.

use serde::{Deserialize, Serialize};

/// Minutes in one episode day.
pub const MINUTES_PER_DAY: u32 = 1440;

/// Width of the normalized observation feature vector fed to the networks.
pub const OBS_DIM: usize = 8;

/// Planar location in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x_km: f64,
    pub y_km: f64,
}

impl Point {
    pub fn new(x_km: f64, y_km: f64) -> Self {
        Self { x_km, y_km }
    }

    pub fn distance_km(&self, other: &Point) -> f64 {
        let dx = self.x_km - other.x_km;
        let dy = self.y_km - other.y_km;
        (dx * dx + dy * dy).sqrt()
    }
}

/// One tariff band of a station's daily price schedule.
///
/// Bands are half-open `[start_minute, end_minute)` and a valid schedule
/// partitions `[0, 1440)` without gap or overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBand {
    pub start_minute: u32,
    pub end_minute: u32,
    pub price: f64,
}

/// Static description of one charging station (one agent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: usize,
    pub location: Point,
    pub capacity: u32,
    pub power_kw: f64,
    pub price_schedule: Vec<PriceBand>,
}

impl StationSpec {
    /// Checks capacity, power and that the schedule partitions `[0, 1440)`.
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity < 1 {
            return Err(format!("station {}: capacity must be >= 1", self.id));
        }
        if !(self.power_kw > 0.0) {
            return Err(format!("station {}: power must be > 0", self.id));
        }
        if self.price_schedule.is_empty() {
            return Err(format!("station {}: empty price schedule", self.id));
        }
        let mut cursor = 0u32;
        for band in &self.price_schedule {
            if band.start_minute != cursor {
                return Err(format!(
                    "station {}: price schedule gap or overlap at minute {} (band starts at {})",
                    self.id, cursor, band.start_minute
                ));
            }
            if band.end_minute <= band.start_minute {
                return Err(format!(
                    "station {}: empty price band at minute {}",
                    self.id, band.start_minute
                ));
            }
            if !(band.price > 0.0) {
                return Err(format!(
                    "station {}: non-positive price {} at minute {}",
                    self.id, band.price, band.start_minute
                ));
            }
            cursor = band.end_minute;
        }
        if cursor != MINUTES_PER_DAY {
            return Err(format!(
                "station {}: price schedule ends at minute {} instead of {}",
                self.id, cursor, MINUTES_PER_DAY
            ));
        }
        Ok(())
    }
}

/// An arriving EV's demand. Requests within one day are strictly ordered by
/// `(arrival_minute, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingRequest {
    pub id: u64,
    pub arrival_minute: u32,
    pub location: Point,
    pub energy_kwh: f64,
    /// Station the EV drives to when the recommendation is rejected; also the
    /// reference action for the saving-fee metric.
    pub ground_truth_station: usize,
}

/// Settled result of one charging request.
///
/// `cwt` is travel plus queuing time in minutes. On failure it holds the
/// threshold-crossing value observed at the minute the request gave up.
/// `rcp` is the ground-truth station's price at that station's own ETA,
/// recorded so saving fees can be computed from outcomes alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeOutcome {
    pub request_id: u64,
    pub day: usize,
    pub recommended: Option<usize>,
    pub accepted: bool,
    pub success: bool,
    pub cwt: u32,
    pub cp: f64,
    pub rcp: f64,
    pub energy_kwh: f64,
    pub finish_minute: u32,
}

/// Per-agent feature record for one (request, station) pair.
///
/// `supply` is the signed available-spot count; negative values count EVs
/// queuing. `future_demand` counts requests arriving in the station's 3x3
/// grid neighborhood over the next 15 minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station_index: usize,
    pub minute: u32,
    pub supply: i32,
    pub future_demand: u32,
    pub power_kw: f64,
    pub eta: u32,
    pub cp_at_eta: f64,
}

/// Scaling constants that map every observation field into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub n_stations: usize,
    pub max_capacity: u32,
    pub demand_cap: f64,
    pub max_power_kw: f64,
    pub max_price: f64,
    pub fail_threshold: u32,
}

impl Observation {
    /// Normalized feature vector: station index, minute-of-day as a sin/cos
    /// pair, supply, future demand, power, ETA and price, each mapped into
    /// `[-1, 1]` and clamped where the raw value can escape its nominal range.
    pub fn features(&self, norm: &FeatureNorm) -> [f64; OBS_DIM] {
        let idx = if norm.n_stations > 1 {
            2.0 * self.station_index as f64 / (norm.n_stations - 1) as f64 - 1.0
        } else {
            0.0
        };
        let angle =
            2.0 * std::f64::consts::PI * (self.minute % MINUTES_PER_DAY) as f64 / MINUTES_PER_DAY as f64;
        let supply = (self.supply as f64 / norm.max_capacity.max(1) as f64).clamp(-1.0, 1.0);
        let demand = (self.future_demand as f64 / norm.demand_cap.max(1.0)).clamp(0.0, 1.0);
        let power = (self.power_kw / norm.max_power_kw.max(1e-9)).clamp(0.0, 1.0);
        let eta = (self.eta as f64 / norm.fail_threshold.max(1) as f64).clamp(0.0, 1.0);
        let price = (self.cp_at_eta / norm.max_price.max(1e-9)).clamp(0.0, 1.0);
        [idx, angle.sin(), angle.cos(), supply, demand, power, eta, price]
    }
}

/// Scalar bid emitted by an agent, bounded to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub f64);

impl Action {
    pub fn clamped(bid: f64) -> Self {
        Action(bid.clamp(-1.0, 1.0))
    }
}

/// Per-station vector of future signed availability over the next `d`
/// minutes, with the focal request's own occupancy erased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionTrace {
    pub values: Vec<i32>,
}

/// All learner and environment hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Per-minute discount factor.
    pub gamma: f64,
    /// Competition-trace length in minutes.
    pub d: usize,
    /// Boltzmann temperature for the objective re-weighting.
    pub sigma: f64,
    /// Target-network soft-update rate.
    pub tau: f64,
    /// Active-agent count (top-k nearest stations per request).
    pub k: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Penalty rewards returned on charging failure.
    pub eps_cwt: f64,
    pub eps_cp: f64,
    /// Wait-time failure threshold in minutes.
    pub fail_threshold: u32,
    /// Probability that an EV accepts the recommendation.
    pub accept_prob: f64,
    /// Training iterations; each iteration rolls one training day.
    pub iterations: usize,
    pub seed: u64,
    /// Hidden width of actor and critic layers.
    pub hidden_dim: usize,
    /// Output width of the competition-trace encoder.
    pub p_dim: usize,
    /// Hidden width of the attention scoring layer.
    pub att_dim: usize,
    /// Exploration noise std at the first and last iteration.
    pub noise_std_init: f64,
    pub noise_std_final: f64,
    /// Charging-duration noise as a fraction of the mean (0 = deterministic).
    pub charge_sigma_frac: f64,
    /// Demand normalization cap for the future-demand feature.
    pub demand_cap: f64,
    /// Ablation switch: zero out competition traces before encoding.
    pub ablate_zero_traces: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            d: 30,
            sigma: 0.2,
            tau: 0.001,
            k: 50,
            buffer_capacity: 1000,
            batch_size: 32,
            lr: 5e-4,
            eps_cwt: -60.0,
            eps_cp: -2.8,
            fail_threshold: 45,
            accept_prob: 1.0,
            iterations: 60,
            seed: 0,
            hidden_dim: 64,
            p_dim: 16,
            att_dim: 64,
            noise_std_init: 0.1,
            noise_std_final: 0.01,
            charge_sigma_frac: 0.1,
            demand_cap: 16.0,
            ablate_zero_traces: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma must be in (0, 1]".into());
        }
        if !(self.sigma > 0.0) {
            return Err("sigma must be > 0".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err("tau must be in (0, 1]".into());
        }
        if self.k < 1 {
            return Err("k must be >= 1".into());
        }
        if self.d < 1 {
            return Err("d must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.accept_prob) {
            return Err("accept_prob must be in [0, 1]".into());
        }
        if self.batch_size < 1 || self.buffer_capacity < 1 {
            return Err("batch_size and buffer_capacity must be >= 1".into());
        }
        Ok(())
    }
}

/// Whole minutes to drive between two points at `speed_kmh`, rounded up.
/// Deterministic and symmetric in its endpoints.
pub fn eta_minutes(from: Point, to: Point, speed_kmh: f64) -> u32 {
    debug_assert!(speed_kmh > 0.0, "speed validated at scenario load");
    (from.distance_km(&to) / speed_kmh * 60.0).ceil() as u32
}

/// Price of one station at a minute of day; minutes past 1440 wrap around.
///
/// A gap in the schedule is a configuration error rejected at load time, so
/// lookup never fails for validated specs.
pub fn price_at(spec: &StationSpec, minute: u32) -> f64 {
    let m = minute % MINUTES_PER_DAY;
    spec.price_schedule
        .iter()
        .find(|band| band.start_minute <= m && m < band.end_minute)
        .map(|band| band.price)
        .expect("price schedule validated to cover [0, 1440)")
}

/// Reward pair for one settled, accepted outcome: `(-CWT, -CP)` on success,
/// the configured penalties on failure.
pub fn reward_pair(outcome: &ChargeOutcome, cfg: &TrainConfig) -> (f64, f64) {
    debug_assert!(outcome.accepted, "rewards settle only for accepted requests");
    if outcome.success {
        (-(outcome.cwt as f64), -outcome.cp)
    } else {
        (cfg.eps_cwt, cfg.eps_cp)
    }
}

/// Cumulative discounted reward of lazy settlements inside one transition
/// window: `sum gamma^(finish - t - 1) * reward`, exponents in minutes.
pub fn discounted_return(settlements: &[(u32, f64)], t_minute: u32, gamma: f64) -> f64 {
    settlements
        .iter()
        .map(|&(finish, reward)| {
            debug_assert!(finish > t_minute);
            gamma.powi((finish - t_minute - 1) as i32) * reward
        })
        .sum()
}

/// The `k` stations nearest a location by ETA, ties broken by lower id.
/// `k >= N` returns every station.
pub fn k_nearest(stations: &[StationSpec], location: Point, k: usize, speed_kmh: f64) -> Vec<(usize, u32)> {
    let mut by_eta: Vec<(usize, u32)> = stations
        .iter()
        .map(|s| (s.id, eta_minutes(location, s.location, speed_kmh)))
        .collect();
    by_eta.sort_by_key(|&(id, eta)| (eta, id));
    by_eta.truncate(k.min(stations.len()));
    by_eta
}

/// Derives a child seed from a base seed and a named stream, so every rng in
/// a run is reproducible from the single configured seed.
pub fn mix_seed(base: u64, tag: &str, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for b in base.to_le_bytes() {
        absorb(b);
    }
    for b in tag.bytes() {
        absorb(b);
    }
    for b in salt.to_le_bytes() {
        absorb(b);
    }
    h
}
