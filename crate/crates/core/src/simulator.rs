//! Deterministic minute-stepped simulation of one charging day.
//!
//! Each minute processes, in order: departures, wait-time failures, queue
//! promotion and arrivals; then the recommendations for that minute's
//! requests. Rewards settle lazily when a request starts charging or gives
//! up. After the last request the episode drains until every pending EV has
//! settled and the availability history covers every competition-trace
//! window, so no settlement is ever truncated.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::domain::{
    eta_minutes, k_nearest, price_at, reward_pair, ChargeOutcome, ChargingRequest,
    CompetitionTrace, Observation, TrainConfig, MINUTES_PER_DAY,
};
use crate::scenario::{future_demand, Scenario};

/// One candidate station offered to the policy for a request.
#[derive(Debug, Clone)]
pub struct ActiveStation {
    pub station_id: usize,
    pub eta: u32,
    pub observation: Observation,
}

/// A recommendation policy. Returning `None` abstains: the EV drives to its
/// ground-truth station and is excluded from the accepted set.
pub trait Policy {
    fn recommend(&mut self, request: &ChargingRequest, active: &[ActiveStation]) -> Option<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventKind {
    Recommend { recommended: Option<usize>, accepted: bool, eta: u32 },
    Arrive,
    Enqueue,
    ChargeStart { cwt: u32, cp: f64, accepted: bool, duration: u32 },
    Depart,
    Fail { cwt: u32, accepted: bool, queued: bool },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Recommend { .. } => "recommend",
            EventKind::Arrive => "arrive",
            EventKind::Enqueue => "enqueue",
            EventKind::ChargeStart { .. } => "charge_start",
            EventKind::Depart => "depart",
            EventKind::Fail { .. } => "fail",
        }
    }
}

/// Append-only record of everything that happened, totally ordered by
/// `(minute, seq)`; enables independent recomputation of returns and audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub minute: u32,
    pub seq: u64,
    pub request_id: Option<u64>,
    /// The station acted on; for recommendations, the station driven to.
    pub station_id: Option<usize>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    /// JSON Lines dump: one event per line with
    /// `minute, seq, kind, request_id, station_id, detail`.
    pub fn dump_jsonl(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        for e in &self.events {
            let detail = match &e.kind {
                EventKind::Recommend { recommended, accepted, eta } => serde_json::json!({
                    "recommended": recommended, "accepted": accepted, "eta": eta,
                }),
                EventKind::ChargeStart { cwt, cp, accepted, duration } => serde_json::json!({
                    "cwt": cwt, "cp": cp, "accepted": accepted, "duration": duration,
                }),
                EventKind::Fail { cwt, accepted, queued } => serde_json::json!({
                    "cwt": cwt, "accepted": accepted, "queued": queued,
                }),
                _ => serde_json::json!({}),
            };
            let line = serde_json::json!({
                "minute": e.minute,
                "seq": e.seq,
                "kind": e.kind.name(),
                "request_id": e.request_id,
                "station_id": e.station_id,
                "detail": detail,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// A settled reward pair for one accepted request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settlement {
    pub request_id: u64,
    pub finish_minute: u32,
    pub r_cwt: f64,
    pub r_cp: f64,
}

/// Settlements with finish time in the half-open-on-the-left window
/// `(t_minute, t_next_minute]`, in finish order.
pub fn settlements_between(settlements: &[Settlement], t_minute: u32, t_next_minute: u32) -> Vec<Settlement> {
    debug_assert!(t_next_minute > t_minute);
    settlements
        .iter()
        .filter(|s| s.finish_minute > t_minute && s.finish_minute <= t_next_minute)
        .copied()
        .collect()
}

/// Independent reconstruction of the settlement stream from the event log.
pub fn settlements_from_log(log: &EventLog, cfg: &TrainConfig) -> Vec<Settlement> {
    log.events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::ChargeStart { cwt, cp, accepted: true, .. } => Some(Settlement {
                request_id: e.request_id.unwrap(),
                finish_minute: e.minute,
                r_cwt: -(cwt as f64),
                r_cp: -cp,
            }),
            EventKind::Fail { accepted: true, .. } => Some(Settlement {
                request_id: e.request_id.unwrap(),
                finish_minute: e.minute,
                r_cwt: cfg.eps_cwt,
                r_cp: cfg.eps_cp,
            }),
            _ => None,
        })
        .collect()
}

/// Minutes an EV blocks a spot: `Normal(mu, sigma_frac * mu)` with
/// `mu = energy / power * 60`, rounded and clipped to at least one minute.
pub fn charge_duration(power_kw: f64, energy_kwh: f64, sigma_frac: f64, rng: &mut impl Rng) -> u32 {
    debug_assert!(power_kw > 0.0 && energy_kwh > 0.0);
    let mu = energy_kwh / power_kw * 60.0;
    let raw = if sigma_frac > 0.0 {
        Normal::new(mu, sigma_frac * mu).expect("valid sigma").sample(rng)
    } else {
        mu
    };
    (raw.round() as i64).max(1) as u32
}

#[derive(Debug)]
pub enum SimError {
    InvalidDay { day: usize, n_days: usize },
    InvalidStation { request_id: u64, station: usize, n_stations: usize },
    TraceNotObservable { station: usize, t_minute: u32, d: usize, finalized: i64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidDay { day, n_days } => {
                write!(f, "day {day} out of range (scenario has {n_days} days)")
            }
            SimError::InvalidStation { request_id, station, n_stations } => write!(
                f,
                "policy recommended invalid station {station} for request {request_id} (N = {n_stations})"
            ),
            SimError::TraceNotObservable { station, t_minute, d, finalized } => write!(
                f,
                "competition trace for station {station} at minute {t_minute} needs minutes through {} but only {} are finalized",
                t_minute + *d as u32,
                finalized
            ),
        }
    }
}

impl std::error::Error for SimError {}

/// Live occupancy of one station. `available()` is the signed spot count;
/// negative values are EVs queuing.
#[derive(Debug, Clone)]
pub struct StationState {
    pub charging: u32,
    pub queue: VecDeque<u64>,
}

impl StationState {
    pub fn available(&self, capacity: u32) -> i32 {
        capacity as i32 - self.charging as i32 - self.queue.len() as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvPhase {
    Driving,
    Queued,
}

#[derive(Debug, Clone)]
struct PendingEv {
    request_id: u64,
    t_minute: u32,
    station: usize,
    eta: u32,
    accepted: bool,
    recommended: Option<usize>,
    cp_quote: f64,
    rcp_quote: f64,
    energy_kwh: f64,
    phase: EvPhase,
}

/// Spot or queue-slot hold of one EV at its driven station.
#[derive(Debug, Clone, Copy)]
struct Occupied {
    station: usize,
    arrive: u32,
    end: Option<u32>,
}

/// What the simulator reports back for one processed request.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub request: ChargingRequest,
    pub minute: u32,
    pub active: Vec<ActiveStation>,
    pub recommended: Option<usize>,
    pub accepted: bool,
    pub driven: usize,
}

/// Everything an episode produced: one outcome per accepted recommendation,
/// the full event log, and the per-minute availability history.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub day: usize,
    pub outcomes: Vec<ChargeOutcome>,
    pub settlements: Vec<Settlement>,
    pub log: EventLog,
    /// `availability[station][minute]` = signed available spots at the end of
    /// that minute, for minutes `0..=horizon`.
    pub availability: Vec<Vec<i32>>,
    pub violations: Vec<String>,
}

/// One in-progress episode, steppable request by request so a trainer can
/// interleave updates with the rollout.
pub struct EpisodeSim<'s> {
    scenario: &'s Scenario,
    cfg: &'s TrainConfig,
    day: usize,
    rng: rand::rngs::StdRng,
    now: u32,
    horizon: u32,
    finalized: i64,
    done: bool,
    cursor: usize,
    seq: u64,
    stations: Vec<StationState>,
    pending: BTreeMap<u64, PendingEv>,
    inflight: BTreeMap<u32, Vec<u64>>,
    departures: BTreeMap<u32, Vec<u64>>,
    occupancy: HashMap<u64, Occupied>,
    availability: Vec<Vec<i32>>,
    outcomes: Vec<ChargeOutcome>,
    settlements: Vec<Settlement>,
    log: EventLog,
    violations: Vec<String>,
}

impl<'s> EpisodeSim<'s> {
    pub fn new(
        scenario: &'s Scenario,
        day: usize,
        cfg: &'s TrainConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        if day >= scenario.n_days() {
            return Err(SimError::InvalidDay { day, n_days: scenario.n_days() });
        }
        let horizon = MINUTES_PER_DAY + cfg.fail_threshold + cfg.d as u32 + 1;
        Ok(Self {
            scenario,
            cfg,
            day,
            rng: rand::rngs::StdRng::seed_from_u64(seed),
            now: 0,
            horizon,
            finalized: -1,
            done: false,
            cursor: 0,
            seq: 0,
            stations: scenario
                .stations
                .iter()
                .map(|_| StationState { charging: 0, queue: VecDeque::new() })
                .collect(),
            pending: BTreeMap::new(),
            inflight: BTreeMap::new(),
            departures: BTreeMap::new(),
            occupancy: HashMap::new(),
            availability: vec![vec![0; horizon as usize + 1]; scenario.stations.len()],
            outcomes: Vec::new(),
            settlements: Vec::new(),
            log: EventLog::default(),
            violations: Vec::new(),
        })
    }

    pub fn now_minute(&self) -> u32 {
        self.now
    }

    /// Last minute whose end-of-minute availability is final.
    pub fn finalized_minute(&self) -> i64 {
        self.finalized
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn settlements(&self) -> &[Settlement] {
        &self.settlements
    }

    pub fn day(&self) -> usize {
        self.day
    }

    fn log_event(&mut self, minute: u32, request_id: Option<u64>, station_id: Option<usize>, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.log.events.push(Event { minute, seq, request_id, station_id, kind });
    }

    /// Advances to the next recommendation and returns its record, or drains
    /// to the horizon and returns `None` once no requests remain.
    pub fn next_step(&mut self, policy: &mut dyn Policy) -> Result<Option<StepRecord>, SimError> {
        if self.done {
            return Ok(None);
        }
        let requests = &self.scenario.episodes[self.day];
        loop {
            if self.cursor < requests.len() && requests[self.cursor].arrival_minute == self.now {
                let request = requests[self.cursor].clone();
                self.cursor += 1;
                let record = self.process_request(policy, request)?;
                return Ok(Some(record));
            }
            self.finalize_minute();
            if self.now == self.horizon {
                self.done = true;
                return Ok(None);
            }
            self.now += 1;
            self.run_minute_events();
        }
    }

    fn finalize_minute(&mut self) {
        let m = self.now as usize;
        for (s, state) in self.stations.iter().enumerate() {
            let capacity = self.scenario.stations[s].capacity;
            if state.charging > capacity {
                self.violations.push(format!(
                    "minute {}: station {s} charging {} exceeds capacity {capacity}",
                    self.now, state.charging
                ));
            }
            self.availability[s][m] = state.available(capacity);
        }
        self.finalized = self.now as i64;
    }

    /// Departure, failure, promotion and arrival events of minute `self.now`.
    fn run_minute_events(&mut self) {
        let m = self.now;

        if let Some(ids) = self.departures.remove(&m) {
            for id in ids {
                let station = self.occupancy[&id].station;
                self.stations[station].charging -= 1;
                self.log_event(m, Some(id), Some(station), EventKind::Depart);
            }
        }

        // Failure sweep over everything not yet charging, driving or queued.
        let expired: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, ev)| m - ev.t_minute > self.cfg.fail_threshold)
            .map(|(id, _)| *id)
            .collect();
        for id in expired {
            let ev = self.pending.remove(&id).unwrap();
            let queued = ev.phase == EvPhase::Queued;
            if queued {
                self.stations[ev.station].queue.retain(|q| *q != id);
                if let Some(occ) = self.occupancy.get_mut(&id) {
                    occ.end = Some(m);
                }
            } else {
                let arrive = ev.t_minute + ev.eta;
                if let Some(list) = self.inflight.get_mut(&arrive) {
                    list.retain(|q| *q != id);
                }
            }
            self.settle(ev, m, false, 0, queued);
        }

        // Queued EVs take spots freed this minute, oldest first.
        for s in 0..self.stations.len() {
            let capacity = self.scenario.stations[s].capacity;
            while self.stations[s].charging < capacity {
                let Some(id) = self.stations[s].queue.pop_front() else { break };
                self.start_charging(id, m);
            }
        }

        if let Some(ids) = self.inflight.remove(&m) {
            for id in ids {
                self.arrive(id, m);
            }
        }
    }

    fn arrive(&mut self, id: u64, m: u32) {
        let ev = &self.pending[&id];
        let station = ev.station;
        self.log_event(m, Some(id), Some(station), EventKind::Arrive);
        self.occupancy.insert(id, Occupied { station, arrive: m, end: None });
        if self.stations[station].charging < self.scenario.stations[station].capacity {
            self.start_charging(id, m);
        } else {
            self.pending.get_mut(&id).unwrap().phase = EvPhase::Queued;
            self.stations[station].queue.push_back(id);
            self.log_event(m, Some(id), Some(station), EventKind::Enqueue);
        }
    }

    fn start_charging(&mut self, id: u64, m: u32) {
        let ev = self.pending.remove(&id).unwrap();
        let station = ev.station;
        let power = self.scenario.stations[station].power_kw;
        let duration = charge_duration(power, ev.energy_kwh, self.cfg.charge_sigma_frac, &mut self.rng);
        self.stations[station].charging += 1;
        self.departures.entry(m + duration).or_default().push(id);
        self.occupancy.get_mut(&id).unwrap().end = Some(m + duration);
        self.settle(ev, m, true, duration, false);
    }

    fn settle(&mut self, ev: PendingEv, m: u32, success: bool, duration: u32, queued: bool) {
        let cwt = m - ev.t_minute;
        let kind = if success {
            EventKind::ChargeStart { cwt, cp: ev.cp_quote, accepted: ev.accepted, duration }
        } else {
            EventKind::Fail { cwt, accepted: ev.accepted, queued }
        };
        self.log_event(m, Some(ev.request_id), Some(ev.station), kind);
        if !ev.accepted {
            return;
        }
        let outcome = ChargeOutcome {
            request_id: ev.request_id,
            day: self.day,
            recommended: ev.recommended,
            accepted: true,
            success,
            cwt,
            cp: ev.cp_quote,
            rcp: ev.rcp_quote,
            energy_kwh: ev.energy_kwh,
            finish_minute: m,
        };
        let (r_cwt, r_cp) = reward_pair(&outcome, self.cfg);
        self.settlements.push(Settlement { request_id: ev.request_id, finish_minute: m, r_cwt, r_cp });
        self.outcomes.push(outcome);
    }

    /// Builds the active set and observations the policy sees for a request.
    pub fn observe(&self, request: &ChargingRequest) -> Vec<ActiveStation> {
        let k = self.cfg.k.min(self.scenario.stations.len());
        k_nearest(&self.scenario.stations, request.location, k, self.scenario.speed_kmh)
            .into_iter()
            .map(|(station_id, eta)| {
                let spec = &self.scenario.stations[station_id];
                let observation = Observation {
                    station_index: station_id,
                    minute: request.arrival_minute,
                    supply: self.stations[station_id].available(spec.capacity),
                    future_demand: future_demand(self.scenario, self.day, station_id, request.arrival_minute),
                    power_kw: spec.power_kw,
                    eta,
                    cp_at_eta: price_at(spec, request.arrival_minute + eta),
                };
                ActiveStation { station_id, eta, observation }
            })
            .collect()
    }

    fn process_request(
        &mut self,
        policy: &mut dyn Policy,
        request: ChargingRequest,
    ) -> Result<StepRecord, SimError> {
        let m = request.arrival_minute;
        let active = self.observe(&request);
        let recommended = policy.recommend(&request, &active);
        if let Some(rc) = recommended {
            if rc >= self.scenario.stations.len() {
                return Err(SimError::InvalidStation {
                    request_id: request.id,
                    station: rc,
                    n_stations: self.scenario.stations.len(),
                });
            }
        }
        let accepted = match recommended {
            Some(_) => self.rng.gen::<f64>() < self.cfg.accept_prob,
            None => false,
        };
        let driven = if accepted { recommended.unwrap() } else { request.ground_truth_station };
        let eta = eta_minutes(request.location, self.scenario.stations[driven].location, self.scenario.speed_kmh);
        let gt = &self.scenario.stations[request.ground_truth_station];
        let gt_eta = eta_minutes(request.location, gt.location, self.scenario.speed_kmh);
        self.log_event(m, Some(request.id), Some(driven), EventKind::Recommend { recommended, accepted, eta });
        self.pending.insert(
            request.id,
            PendingEv {
                request_id: request.id,
                t_minute: m,
                station: driven,
                eta,
                accepted,
                recommended,
                cp_quote: price_at(&self.scenario.stations[driven], m + eta),
                rcp_quote: price_at(gt, m + gt_eta),
                energy_kwh: request.energy_kwh,
                phase: EvPhase::Driving,
            },
        );
        if eta == 0 {
            self.arrive(request.id, m);
        } else {
            self.inflight.entry(m + eta).or_default().push(request.id);
        }
        Ok(StepRecord { request, minute: m, active, recommended, accepted, driven })
    }

    /// Signed availability of a station at an already-finalized minute.
    pub fn availability_at(&self, station: usize, minute: u32) -> i32 {
        debug_assert!((minute as i64) <= self.finalized);
        self.availability[station][minute as usize]
    }

    /// The station's availability over minutes `t+1 ..= t+d` with the focal
    /// request's own spot hold and queue slot erased. Callable only once the
    /// simulation has advanced past `t_minute + d`.
    pub fn competition_trace(
        &self,
        station: usize,
        t_minute: u32,
        d: usize,
        focal_request: u64,
    ) -> Result<CompetitionTrace, SimError> {
        let last = t_minute + d as u32;
        if (last as i64) > self.finalized {
            return Err(SimError::TraceNotObservable {
                station,
                t_minute,
                d,
                finalized: self.finalized,
            });
        }
        let focal = self.occupancy.get(&focal_request).copied();
        let values = (1..=d as u32)
            .map(|j| {
                let minute = t_minute + j;
                let mut v = self.availability[station][minute as usize];
                if let Some(occ) = focal {
                    let holds = occ.station == station
                        && occ.arrive <= minute
                        && occ.end.map_or(true, |end| minute < end);
                    if holds {
                        v += 1;
                    }
                }
                v
            })
            .collect();
        Ok(CompetitionTrace { values })
    }

    pub fn into_result(self) -> EpisodeResult {
        EpisodeResult {
            day: self.day,
            outcomes: self.outcomes,
            settlements: self.settlements,
            log: self.log,
            availability: self.availability,
            violations: self.violations,
        }
    }
}

/// Runs one full episode under the given policy.
pub fn run_episode(
    scenario: &Scenario,
    day: usize,
    policy: &mut dyn Policy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EpisodeResult, SimError> {
    let mut sim = EpisodeSim::new(scenario, day, cfg, seed)?;
    while sim.next_step(policy)?.is_some() {}
    Ok(sim.into_result())
}

/// Runs the listed days and concatenates their outcomes; each day draws its
/// own seed from the base seed.
pub fn rollout(
    scenario: &Scenario,
    days: &[usize],
    policy: &mut dyn Policy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<ChargeOutcome>, SimError> {
    let mut outcomes = Vec::new();
    for &day in days {
        let episode = run_episode(
            scenario,
            day,
            policy,
            cfg,
            crate::domain::mix_seed(seed, "episode", day as u64),
        )?;
        outcomes.extend(episode.outcomes);
    }
    Ok(outcomes)
}
