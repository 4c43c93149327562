//! Synthetic scenario generation and dataset file ingestion. A scenario is a
//! set of stations plus per-day request lists; files round-trip exactly and
//! invariant violations are rejected with line-numbered errors.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{ChargingRequest, Point, PriceBand, StationSpec, MINUTES_PER_DAY};

/// Episode inputs the simulator consumes. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub stations: Vec<StationSpec>,
    /// One request list per day, each sorted by `(arrival_minute, id)`.
    pub episodes: Vec<Vec<ChargingRequest>>,
    /// Cell size for the future-demand grid aggregation.
    pub grid_cell_km: f64,
    /// Constant travel speed of the fleet.
    pub speed_kmh: f64,
}

impl Scenario {
    pub fn n_days(&self) -> usize {
        self.episodes.len()
    }

    pub fn total_requests(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stations.is_empty() {
            return Err("scenario has no stations".into());
        }
        if !(self.speed_kmh > 0.0) {
            return Err("speed must be > 0".into());
        }
        if !(self.grid_cell_km > 0.0) {
            return Err("grid cell size must be > 0".into());
        }
        for (i, s) in self.stations.iter().enumerate() {
            if s.id != i {
                return Err(format!("station ids must be dense 0..N-1, found {} at index {i}", s.id));
            }
            s.validate()?;
        }
        for (day, requests) in self.episodes.iter().enumerate() {
            let mut prev: Option<(u32, u64)> = None;
            for r in requests {
                if r.arrival_minute >= MINUTES_PER_DAY {
                    return Err(format!("day {day}: request {} arrives at minute {}", r.id, r.arrival_minute));
                }
                if r.ground_truth_station >= self.stations.len() {
                    return Err(format!(
                        "day {day}: request {} references unknown station {}",
                        r.id, r.ground_truth_station
                    ));
                }
                if !(r.energy_kwh > 0.0) {
                    return Err(format!("day {day}: request {} has non-positive energy", r.id));
                }
                let key = (r.arrival_minute, r.id);
                if let Some(p) = prev {
                    if key <= p {
                        return Err(format!(
                            "day {day}: requests not strictly ordered by (minute, id) at request {}",
                            r.id
                        ));
                    }
                }
                prev = Some(key);
            }
        }
        Ok(())
    }
}

/// Knobs of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_stations: usize,
    pub n_days: usize,
    /// Stations and uniform demand are placed in `[0, extent] x [0, extent]`.
    pub city_extent_km: f64,
    pub capacity_min: u32,
    pub capacity_max: u32,
    pub power_choices_kw: Vec<f64>,
    /// Off-peak and peak tariff ranges; each station draws one price per regime.
    pub offpeak_price: (f64, f64),
    pub peak_price: (f64, f64),
    /// Expected requests per day, shaped into morning and evening peaks.
    pub requests_per_day: f64,
    pub energy_kwh_min: f64,
    pub energy_kwh_max: f64,
    /// Fraction of requests clustered around a station versus uniform.
    pub cluster_frac: f64,
    pub cluster_sigma_km: f64,
    /// Leading fraction of stations that act as demand magnets: clusters
    /// form around them `popular_weight` times more often and their tariffs
    /// carry `popular_premium` CNY/kWh on top of both regimes.
    pub popular_frac: f64,
    pub popular_weight: f64,
    pub popular_premium: f64,
    pub grid_cell_km: f64,
    pub speed_kmh: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_stations: 10,
            n_days: 29,
            city_extent_km: 12.0,
            capacity_min: 2,
            capacity_max: 2,
            power_choices_kw: vec![60.0],
            offpeak_price: (0.4, 1.6),
            peak_price: (1.1, 2.5),
            requests_per_day: 280.0,
            energy_kwh_min: 25.0,
            energy_kwh_max: 55.0,
            cluster_frac: 0.8,
            cluster_sigma_km: 1.0,
            popular_frac: 0.3,
            popular_weight: 3.0,
            popular_premium: 0.4,
            grid_cell_km: 1.0,
            speed_kmh: 30.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_stations == 0 {
            return Err("generator needs at least one station".into());
        }
        if self.n_days == 0 {
            return Err("generator needs at least one day".into());
        }
        if !(self.requests_per_day > 0.0) {
            return Err("expected demand must be > 0".into());
        }
        if self.capacity_min < 1 || self.capacity_max < self.capacity_min {
            return Err("capacity range is empty".into());
        }
        if self.power_choices_kw.is_empty() || self.power_choices_kw.iter().any(|p| *p <= 0.0) {
            return Err("power choices must be non-empty and positive".into());
        }
        if self.offpeak_price.0 <= 0.0 || self.offpeak_price.1 < self.offpeak_price.0 {
            return Err("off-peak price range is empty".into());
        }
        if self.peak_price.0 <= 0.0 || self.peak_price.1 < self.peak_price.0 {
            return Err("peak price range is empty".into());
        }
        if !(self.energy_kwh_max >= self.energy_kwh_min && self.energy_kwh_min > 0.0) {
            return Err("energy range is empty".into());
        }
        if !(0.0..=1.0).contains(&self.cluster_frac) {
            return Err("cluster_frac must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.popular_frac) {
            return Err("popular_frac must be in [0, 1]".into());
        }
        if !(self.popular_weight >= 1.0) {
            return Err("popular_weight must be >= 1".into());
        }
        if !(self.popular_premium >= 0.0) {
            return Err("popular_premium must be >= 0".into());
        }
        if !(self.speed_kmh > 0.0) || !(self.grid_cell_km > 0.0) || !(self.city_extent_km > 0.0) {
            return Err("speed, grid cell and extent must be > 0".into());
        }
        Ok(())
    }
}

/// Per-minute intensity with morning and evening rush peaks, scaled so the
/// intensities sum to `total_per_day` expected requests.
pub fn two_peak_curve(total_per_day: f64) -> Vec<f64> {
    let bump = |m: f64, center: f64, sigma: f64| -> f64 {
        let z = (m - center) / sigma;
        (-0.5 * z * z).exp()
    };
    let raw: Vec<f64> = (0..MINUTES_PER_DAY)
        .map(|m| {
            let m = m as f64;
            0.15 + bump(m, 510.0, 90.0) + bump(m, 1110.0, 90.0)
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v * total_per_day / sum).collect()
}

/// Constant per-minute intensity.
pub fn flat_curve(rate_per_minute: f64) -> Vec<f64> {
    vec![rate_per_minute; MINUTES_PER_DAY as usize]
}

/// Tariff regimes over a day: two peak windows, off-peak elsewhere.
const PRICE_WINDOWS: [(u32, u32, bool); 5] = [
    (0, 600, false),
    (600, 900, true),
    (900, 1080, false),
    (1080, 1260, true),
    (1260, 1440, false),
];

/// Deterministic synthetic scenario for a fixed seed. Stations are placed
/// uniformly; requests follow a time-inhomogeneous Poisson process with the
/// two-peak intensity and cluster around stations; the ground-truth station
/// is the nearest one.
pub fn generate(cfg: &GeneratorConfig) -> Result<Scenario, String> {
    generate_with_curve(cfg, &two_peak_curve(cfg.requests_per_day))
}

/// Like [`generate`] but with an explicit 1440-entry intensity curve.
pub fn generate_with_curve(cfg: &GeneratorConfig, curve: &[f64]) -> Result<Scenario, String> {
    cfg.validate()?;
    if curve.len() != MINUTES_PER_DAY as usize {
        return Err(format!("demand curve must have {MINUTES_PER_DAY} entries"));
    }
    if curve.iter().any(|v| *v < 0.0) {
        return Err("demand intensities must be >= 0".into());
    }
    if curve.iter().sum::<f64>() <= 0.0 {
        return Err("zero expected demand".into());
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(cfg.seed);

    let n_popular = (cfg.popular_frac * cfg.n_stations as f64).round() as usize;
    let stations: Vec<StationSpec> = (0..cfg.n_stations)
        .map(|id| {
            let location = Point::new(
                rng.gen_range(0.0..cfg.city_extent_km),
                rng.gen_range(0.0..cfg.city_extent_km),
            );
            let capacity = rng.gen_range(cfg.capacity_min..=cfg.capacity_max);
            let power_kw = cfg.power_choices_kw[rng.gen_range(0..cfg.power_choices_kw.len())];
            let premium = if id < n_popular { cfg.popular_premium } else { 0.0 };
            let p_off = rng.gen_range(cfg.offpeak_price.0..=cfg.offpeak_price.1) + premium;
            let p_peak = rng.gen_range(cfg.peak_price.0..=cfg.peak_price.1) + premium;
            let price_schedule = PRICE_WINDOWS
                .iter()
                .map(|&(start_minute, end_minute, peak)| PriceBand {
                    start_minute,
                    end_minute,
                    price: if peak { p_peak } else { p_off },
                })
                .collect();
            StationSpec { id, location, capacity, power_kw, price_schedule }
        })
        .collect();

    // Demand magnets: popular stations anchor clusters proportionally more.
    let anchor_weights: Vec<f64> = (0..cfg.n_stations)
        .map(|id| if id < n_popular { cfg.popular_weight } else { 1.0 })
        .collect();
    let total_weight: f64 = anchor_weights.iter().sum();
    let pick_anchor = |rng: &mut rand::rngs::StdRng| -> usize {
        let mut target = rng.gen_range(0.0..total_weight);
        for (id, w) in anchor_weights.iter().enumerate() {
            if target < *w {
                return id;
            }
            target -= w;
        }
        cfg.n_stations - 1
    };

    let mut episodes = Vec::with_capacity(cfg.n_days);
    for _day in 0..cfg.n_days {
        let mut requests = Vec::new();
        let mut id = 0u64;
        for minute in 0..MINUTES_PER_DAY {
            let lambda = curve[minute as usize];
            let count = if lambda > 0.0 {
                Poisson::new(lambda).expect("lambda > 0").sample(&mut rng) as u64
            } else {
                0
            };
            for _ in 0..count {
                let location = if rng.gen_bool(cfg.cluster_frac) {
                    let anchor = stations[pick_anchor(&mut rng)].location;
                    let jitter = Normal::new(0.0, cfg.cluster_sigma_km).expect("sigma >= 0");
                    Point::new(anchor.x_km + jitter.sample(&mut rng), anchor.y_km + jitter.sample(&mut rng))
                } else {
                    Point::new(
                        rng.gen_range(0.0..cfg.city_extent_km),
                        rng.gen_range(0.0..cfg.city_extent_km),
                    )
                };
                let energy_kwh = rng.gen_range(cfg.energy_kwh_min..=cfg.energy_kwh_max);
                let ground_truth_station = stations
                    .iter()
                    .min_by(|a, b| {
                        location
                            .distance_km(&a.location)
                            .partial_cmp(&location.distance_km(&b.location))
                            .unwrap()
                            .then(a.id.cmp(&b.id))
                    })
                    .unwrap()
                    .id;
                requests.push(ChargingRequest {
                    id,
                    arrival_minute: minute,
                    location,
                    energy_kwh,
                    ground_truth_station,
                });
                id += 1;
            }
        }
        episodes.push(requests);
    }

    let scenario = Scenario {
        stations,
        episodes,
        grid_cell_km: cfg.grid_cell_km,
        speed_kmh: cfg.speed_kmh,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Grid cell of a location.
fn cell_of(location: Point, cell_km: f64) -> (i64, i64) {
    ((location.x_km / cell_km).floor() as i64, (location.y_km / cell_km).floor() as i64)
}

/// Requests of one day arriving in `(minute, minute + 15]` whose location
/// falls in the given single cell.
pub fn cell_demand(scenario: &Scenario, day: usize, cell: (i64, i64), minute: u32) -> u32 {
    scenario.episodes[day]
        .iter()
        .filter(|r| {
            r.arrival_minute > minute
                && r.arrival_minute <= minute + 15
                && cell_of(r.location, scenario.grid_cell_km) == cell
        })
        .count() as u32
}

/// Oracle future demand of a station: requests over the next 15 minutes in
/// the station's grid cell and its eight neighbors.
pub fn future_demand(scenario: &Scenario, day: usize, station: usize, minute: u32) -> u32 {
    let (cx, cy) = cell_of(scenario.stations[station].location, scenario.grid_cell_km);
    let mut total = 0;
    for dx in -1..=1 {
        for dy in -1..=1 {
            total += cell_demand(scenario, day, (cx + dx, cy + dy), minute);
        }
    }
    total
}

/// Load/save failure with the file and line it was detected on.
#[derive(Debug)]
pub struct LoadError {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.file, line, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for LoadError {}

impl LoadError {
    fn new(file: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { file: file.into(), line, message: message.into() }
    }
}

const STATIONS_FILE: &str = "stations.csv";
const PRICES_FILE: &str = "prices.csv";
const REQUESTS_FILE: &str = "requests.csv";
const META_FILE: &str = "scenario.toml";

const STATIONS_HEADER: &str = "id,x_km,y_km,capacity,power_kw";
const PRICES_HEADER: &str = "station_id,start_minute,end_minute,cny_per_kwh";
const REQUESTS_HEADER: &str = "day,id,minute,x_km,y_km,kwh,gt_station_id";

/// Writes stations.csv, prices.csv, requests.csv plus a small metadata file.
/// Floats are emitted in shortest round-trip form, so `load(save(s)) == s`.
pub fn save(scenario: &Scenario, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut stations = String::from(STATIONS_HEADER);
    stations.push('\n');
    let mut prices = String::from(PRICES_HEADER);
    prices.push('\n');
    for s in &scenario.stations {
        stations.push_str(&format!(
            "{},{},{},{},{}\n",
            s.id, s.location.x_km, s.location.y_km, s.capacity, s.power_kw
        ));
        for band in &s.price_schedule {
            prices.push_str(&format!(
                "{},{},{},{}\n",
                s.id, band.start_minute, band.end_minute, band.price
            ));
        }
    }
    std::fs::write(dir.join(STATIONS_FILE), stations)?;
    std::fs::write(dir.join(PRICES_FILE), prices)?;

    let mut requests = String::from(REQUESTS_HEADER);
    requests.push('\n');
    for (day, episode) in scenario.episodes.iter().enumerate() {
        for r in episode {
            requests.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                day, r.id, r.arrival_minute, r.location.x_km, r.location.y_km, r.energy_kwh, r.ground_truth_station
            ));
        }
    }
    std::fs::write(dir.join(REQUESTS_FILE), requests)?;

    let meta = format!(
        "grid_cell_km = {}\nspeed_kmh = {}\nn_days = {}\n",
        scenario.grid_cell_km,
        scenario.speed_kmh,
        scenario.n_days()
    );
    std::fs::write(dir.join(META_FILE), meta)
}

fn read_file(dir: &Path, name: &str) -> Result<String, LoadError> {
    std::fs::read_to_string(dir.join(name))
        .map_err(|e| LoadError::new(name, None, format!("cannot read file: {e}")))
}

fn split_fields<'a>(
    file: &str,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, LoadError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(LoadError::new(
            file,
            Some(line_no),
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse<T: std::str::FromStr>(
    file: &str,
    line_no: usize,
    field: &str,
    raw: &str,
) -> Result<T, LoadError> {
    raw.trim()
        .parse()
        .map_err(|_| LoadError::new(file, Some(line_no), format!("invalid {field}: {raw:?}")))
}

fn check_header(file: &str, got: Option<&str>, want: &str) -> Result<(), LoadError> {
    match got {
        Some(h) if h.trim_end() == want => Ok(()),
        Some(h) => Err(LoadError::new(
            file,
            Some(1),
            format!("bad header {h:?}, expected {want:?}"),
        )),
        None => Err(LoadError::new(file, Some(1), "empty file")),
    }
}

/// Loads a scenario directory, enforcing every invariant with a
/// line-numbered error: dense station ids, gap-free schedules, strictly
/// ordered requests and valid references.
pub fn load(dir: &Path) -> Result<Scenario, LoadError> {
    // stations.csv
    let text = read_file(dir, STATIONS_FILE)?;
    let mut lines = text.lines().enumerate();
    check_header(STATIONS_FILE, lines.next().map(|(_, l)| l), STATIONS_HEADER)?;
    let mut stations = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(STATIONS_FILE, line_no, line, 5)?;
        let id: usize = parse(STATIONS_FILE, line_no, "id", f[0])?;
        if id != stations.len() {
            return Err(LoadError::new(
                STATIONS_FILE,
                Some(line_no),
                format!("station ids must be dense 0..N-1, found {id}"),
            ));
        }
        stations.push(StationSpec {
            id,
            location: Point::new(
                parse(STATIONS_FILE, line_no, "x_km", f[1])?,
                parse(STATIONS_FILE, line_no, "y_km", f[2])?,
            ),
            capacity: parse(STATIONS_FILE, line_no, "capacity", f[3])?,
            power_kw: parse(STATIONS_FILE, line_no, "power_kw", f[4])?,
            price_schedule: Vec::new(),
        });
    }
    if stations.is_empty() {
        return Err(LoadError::new(STATIONS_FILE, None, "no stations"));
    }

    // prices.csv
    let text = read_file(dir, PRICES_FILE)?;
    let mut lines = text.lines().enumerate();
    check_header(PRICES_FILE, lines.next().map(|(_, l)| l), PRICES_HEADER)?;
    let mut band_lines = vec![Vec::new(); stations.len()];
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(PRICES_FILE, line_no, line, 4)?;
        let station_id: usize = parse(PRICES_FILE, line_no, "station_id", f[0])?;
        if station_id >= stations.len() {
            return Err(LoadError::new(
                PRICES_FILE,
                Some(line_no),
                format!("unknown station {station_id}"),
            ));
        }
        let band = PriceBand {
            start_minute: parse(PRICES_FILE, line_no, "start_minute", f[1])?,
            end_minute: parse(PRICES_FILE, line_no, "end_minute", f[2])?,
            price: parse(PRICES_FILE, line_no, "cny_per_kwh", f[3])?,
        };
        band_lines[station_id].push((line_no, band));
    }
    for (id, bands) in band_lines.into_iter().enumerate() {
        let first_line = bands.first().map(|(l, _)| *l);
        stations[id].price_schedule = bands.into_iter().map(|(_, b)| b).collect();
        if let Err(msg) = stations[id].validate() {
            return Err(LoadError::new(PRICES_FILE, first_line, msg));
        }
    }

    // requests.csv
    let text = read_file(dir, REQUESTS_FILE)?;
    let mut lines = text.lines().enumerate();
    check_header(REQUESTS_FILE, lines.next().map(|(_, l)| l), REQUESTS_HEADER)?;
    let mut episodes: Vec<Vec<ChargingRequest>> = Vec::new();
    let mut prev: Option<(usize, u32, u64)> = None;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f = split_fields(REQUESTS_FILE, line_no, line, 7)?;
        let day: usize = parse(REQUESTS_FILE, line_no, "day", f[0])?;
        let request = ChargingRequest {
            id: parse(REQUESTS_FILE, line_no, "id", f[1])?,
            arrival_minute: parse(REQUESTS_FILE, line_no, "minute", f[2])?,
            location: Point::new(
                parse(REQUESTS_FILE, line_no, "x_km", f[3])?,
                parse(REQUESTS_FILE, line_no, "y_km", f[4])?,
            ),
            energy_kwh: parse(REQUESTS_FILE, line_no, "kwh", f[5])?,
            ground_truth_station: parse(REQUESTS_FILE, line_no, "gt_station_id", f[6])?,
        };
        if request.arrival_minute >= MINUTES_PER_DAY {
            return Err(LoadError::new(
                REQUESTS_FILE,
                Some(line_no),
                format!("minute {} out of range", request.arrival_minute),
            ));
        }
        if request.ground_truth_station >= stations.len() {
            return Err(LoadError::new(
                REQUESTS_FILE,
                Some(line_no),
                format!("unknown ground-truth station {}", request.ground_truth_station),
            ));
        }
        let key = (day, request.arrival_minute, request.id);
        if let Some(p) = prev {
            if key <= p {
                return Err(LoadError::new(
                    REQUESTS_FILE,
                    Some(line_no),
                    "requests out of (day, minute, id) order",
                ));
            }
        }
        prev = Some(key);
        while episodes.len() <= day {
            episodes.push(Vec::new());
        }
        episodes[day].push(request);
    }

    // optional metadata
    let mut grid_cell_km = 1.0;
    let mut speed_kmh = 30.0;
    let mut n_days_meta: Option<usize> = None;
    if let Ok(meta) = std::fs::read_to_string(dir.join(META_FILE)) {
        for (idx, line) in meta.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LoadError::new(META_FILE, Some(idx + 1), format!("expected key = value, got {line:?}"))
            })?;
            let value = value.trim();
            match key.trim() {
                "grid_cell_km" => grid_cell_km = parse(META_FILE, idx + 1, "grid_cell_km", value)?,
                "speed_kmh" => speed_kmh = parse(META_FILE, idx + 1, "speed_kmh", value)?,
                "n_days" => n_days_meta = Some(parse(META_FILE, idx + 1, "n_days", value)?),
                other => {
                    return Err(LoadError::new(
                        META_FILE,
                        Some(idx + 1),
                        format!("unknown key {other:?}"),
                    ))
                }
            }
        }
    }
    if let Some(n) = n_days_meta {
        while episodes.len() < n {
            episodes.push(Vec::new());
        }
    }

    let scenario = Scenario { stations, episodes, grid_cell_km, speed_kmh };
    scenario
        .validate()
        .map_err(|msg| LoadError::new(REQUESTS_FILE, None, msg))?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("evrec_scenario_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig { n_stations: 10, n_days: 2, seed: 7, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_intensity_total_count_near_expectation() {
        let cfg = GeneratorConfig { n_stations: 4, n_days: 1, seed: 3, ..Default::default() };
        let scenario = generate_with_curve(&cfg, &flat_curve(0.1)).unwrap();
        let n = scenario.episodes[0].len() as f64;
        // Poisson(144): three sigma around the mean.
        assert!((n - 144.0).abs() < 3.0 * 12.0, "count {n}");
    }

    #[test]
    fn episode_cardinality_matches_days() {
        let cfg = GeneratorConfig { n_days: 2, seed: 1, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap().episodes.len(), 2);
    }

    #[test]
    fn zero_stations_rejected() {
        let cfg = GeneratorConfig { n_stations: 0, ..Default::default() };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn zero_demand_rejected() {
        let cfg = GeneratorConfig::default();
        assert!(generate_with_curve(&cfg, &flat_curve(0.0)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = GeneratorConfig { n_stations: 6, n_days: 2, seed: 11, ..Default::default() };
        let scenario = generate(&cfg).unwrap();
        let dir = tmp_dir("round_trip");
        save(&scenario, &dir).unwrap();
        let loaded = load(&dir).unwrap();
        assert_eq!(scenario, loaded);
    }

    #[test]
    fn price_gap_names_the_gap() {
        let scenario = generate(&GeneratorConfig { n_stations: 2, n_days: 1, seed: 5, ..Default::default() })
            .unwrap();
        let dir = tmp_dir("gap");
        save(&scenario, &dir).unwrap();
        let prices = format!(
            "{PRICES_HEADER}\n0,0,700,1.2\n0,720,1440,1.8\n1,0,1440,1.0\n"
        );
        std::fs::write(dir.join(PRICES_FILE), prices).unwrap();
        let err = load(&dir).unwrap_err();
        assert_eq!(err.file, PRICES_FILE);
        assert!(err.message.contains("gap") && err.message.contains("700"), "{err}");
    }

    #[test]
    fn unsorted_requests_rejected_with_line() {
        let scenario = generate(&GeneratorConfig { n_stations: 2, n_days: 1, seed: 5, ..Default::default() })
            .unwrap();
        let dir = tmp_dir("unsorted");
        save(&scenario, &dir).unwrap();
        let requests = format!(
            "{REQUESTS_HEADER}\n0,0,100,1.0,1.0,20,0\n0,1,90,1.0,1.0,20,0\n"
        );
        std::fs::write(dir.join(REQUESTS_FILE), requests).unwrap();
        let err = load(&dir).unwrap_err();
        assert_eq!(err.file, REQUESTS_FILE);
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("order"), "{err}");
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tmp_dir("missing");
        let err = load(&dir).unwrap_err();
        assert_eq!(err.file, STATIONS_FILE);
    }

    fn demand_fixture() -> Scenario {
        // One station at the origin cell, hand-placed requests.
        let station = StationSpec {
            id: 0,
            location: Point::new(0.5, 0.5),
            capacity: 1,
            power_kw: 60.0,
            price_schedule: vec![PriceBand { start_minute: 0, end_minute: 1440, price: 1.0 }],
        };
        let mk = |id: u64, minute: u32, x: f64, y: f64| ChargingRequest {
            id,
            arrival_minute: minute,
            location: Point::new(x, y),
            energy_kwh: 20.0,
            ground_truth_station: 0,
        };
        Scenario {
            stations: vec![station],
            episodes: vec![vec![
                mk(0, 105, 0.5, 0.5),  // same cell, minute+5
                mk(1, 110, 1.5, 0.5),  // neighbor cell
                mk(2, 112, 2.5, 0.5),  // two cells away: excluded
                mk(3, 100, 0.6, 0.6),  // exactly at the window's open end: excluded
                mk(4, 115, 0.5, 0.5),  // at the closed end: included
                mk(5, 116, 0.5, 0.5),  // past the window: excluded
            ]],
            grid_cell_km: 1.0,
            speed_kmh: 30.0,
        }
    }

    #[test]
    fn future_demand_neighborhood_and_window() {
        let s = demand_fixture();
        assert_eq!(future_demand(&s, 0, 0, 100), 3);
        assert_eq!(future_demand(&s, 0, 0, 600), 0);
    }

    #[test]
    fn future_demand_single_request_same_cell() {
        let s = demand_fixture();
        // Window (110, 125]: requests 2 (excluded, far), 4, 5 in range by time.
        assert_eq!(future_demand(&s, 0, 0, 110), 2);
    }

    #[test]
    fn cell_counts_partition_the_window() {
        let cfg = GeneratorConfig { n_stations: 5, n_days: 1, seed: 9, ..Default::default() };
        let s = generate(&cfg).unwrap();
        let minute = 500;
        let total_in_window = s.episodes[0]
            .iter()
            .filter(|r| r.arrival_minute > minute && r.arrival_minute <= minute + 15)
            .count() as u32;
        let mut cells = std::collections::HashSet::new();
        for r in &s.episodes[0] {
            cells.insert(cell_of(r.location, s.grid_cell_km));
        }
        let sum: u32 = cells.iter().map(|&c| cell_demand(&s, 0, c, minute)).sum();
        assert_eq!(sum, total_in_window);
    }

    #[test]
    fn ground_truth_station_is_nearest_by_eta() {
        use crate::domain::eta_minutes;
        let cfg = GeneratorConfig { n_stations: 8, n_days: 1, seed: 13, ..Default::default() };
        let s = generate(&cfg).unwrap();
        for r in &s.episodes[0] {
            let gt_eta = eta_minutes(r.location, s.stations[r.ground_truth_station].location, s.speed_kmh);
            for station in &s.stations {
                assert!(gt_eta <= eta_minutes(r.location, station.location, s.speed_kmh));
            }
        }
    }
}
