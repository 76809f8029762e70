//! Reproducible synthetic scenarios.
//!
//! Vehicles follow a random-direction walk with specular reflection at the grid edge;
//! some legs head for one of the vehicle's favourite hotspots instead. Each vehicle has a
//! Pareto-distributed activity level that scales an hourly on-road profile with morning
//! and evening peaks; a share of the fleet works the same profile twelve hours out. The latent concentration of every `(g, t)` is
//!
//! ```text
//! scale_p * (baseline + spatial_amplitude * S(g) + traffic_coupling * C(g, t))
//! ```
//!
//! where `S` is kernel-smoothed, standardized noise and `C` the log-scaled ping density of
//! the generated fleet. Pings read the latent value plus Gaussian noise, clamped at 0.
//!
//! Every random draw comes from a ChaCha stream derived from the master seed and a fixed
//! stream id (per vehicle for mobility and readings), so output does not depend on thread
//! scheduling.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpatiotemporalIndex};
use crate::ingest::{Binned, Binner, TrajectoryRecord};
use crate::weights::FeatureTable;

/// Share of a fully active vehicle's hours spent on the road, by local hour.
pub const HOURLY_PROFILE: [f64; 24] = [
    0.02, 0.02, 0.02, 0.02, 0.03, 0.08, 0.25, 0.55, 0.60, 0.35, 0.25, 0.25, //
    0.28, 0.25, 0.25, 0.28, 0.40, 0.60, 0.55, 0.35, 0.22, 0.15, 0.08, 0.04,
];

const STREAM_HOTSPOTS: u64 = 1;
const STREAM_SPATIAL: u64 = 2;
const STREAM_STATIC: u64 = 1 << 16;
const STREAM_MOBILITY: u64 = 1 << 32;
const STREAM_READINGS: u64 = 2 << 32;

pub const PRESET_NAMES: [&str; 3] = ["desk-small", "desk-medium", "guangzhou-shape"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub n_hotspots: usize,
    /// Odds of a hotspot leg against a random-direction leg: the probability is `a / (1 + a)`.
    pub hotspot_attraction: f64,
    pub hotspot_radius_m: f64,
    pub hotspots_per_vehicle: usize,
    /// Mean length of a random-direction leg (exponentially distributed).
    pub trip_length_m: f64,
    pub speed_mps: f64,
    pub ping_interval_s: u32,
    /// Pareto shape of the activity level; smaller is heavier-tailed.
    pub activity_shape: f64,
    /// Pareto scale (the minimum activity level).
    pub activity_scale: f64,
    pub activity_cap: f64,
    /// Share of vehicles working the profile shifted by twelve hours.
    pub night_shift_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantSpec {
    pub name: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatureSpec {
    pub name: String,
    /// Target Pearson correlation with the spatial component.
    pub correlation: f64,
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub kernel_length_m: f64,
    pub baseline: f64,
    pub spatial_amplitude: f64,
    pub traffic_coupling: f64,
    /// Reading noise sd, in units of each pollutant's scale.
    pub noise_sd: f64,
    pub pollutants: Vec<PollutantSpec>,
    pub static_features: Vec<StaticFeatureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridSpec,
    pub n_vehicles: usize,
    pub seed: u64,
    pub mobility: MobilityParams,
    pub field: FieldParams,
}

impl ScenarioConfig {
    pub fn n_days(&self) -> u32 {
        self.grid.n_days
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let m = &self.mobility;
        let f = &self.field;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_vehicles == 0 {
            return bad("n_vehicles must be at least 1");
        }
        if self.grid.start_date.is_none() {
            return bad("scenario grids need a start_date");
        }
        if !(m.hotspot_attraction.is_finite() && m.hotspot_attraction >= 0.0) {
            return bad("hotspot_attraction must be non-negative");
        }
        if m.hotspot_attraction > 0.0 && (m.n_hotspots == 0 || m.hotspots_per_vehicle == 0) {
            return bad("hotspot attraction needs at least one hotspot per vehicle");
        }
        for (name, v) in [
            ("trip_length_m", m.trip_length_m),
            ("speed_mps", m.speed_mps),
            ("activity_shape", m.activity_shape),
            ("activity_scale", m.activity_scale),
            ("activity_cap", m.activity_cap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&m.night_shift_share) {
            return bad("night_shift_share must lie in [0, 1]");
        }
        if !(m.hotspot_radius_m.is_finite() && m.hotspot_radius_m >= 0.0) {
            return bad("hotspot_radius_m must be non-negative");
        }
        if m.ping_interval_s == 0 {
            return bad("ping_interval_s must be at least 1");
        }
        if !(f.noise_sd.is_finite() && f.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        if !(f.kernel_length_m.is_finite() && f.kernel_length_m >= 0.0) {
            return bad("kernel_length_m must be non-negative");
        }
        if ![f.baseline, f.spatial_amplitude, f.traffic_coupling].iter().all(|v| v.is_finite()) {
            return bad("field parameters must be finite");
        }
        if f.pollutants.is_empty() {
            return bad("at least one pollutant is required");
        }
        if f.pollutants.iter().any(|p| !(p.scale.is_finite() && p.scale > 0.0)) {
            return bad("pollutant scales must be positive");
        }
        if f.static_features.iter().any(|s| !(-1.0..=1.0).contains(&s.correlation)) {
            return bad("static feature correlations must lie in [-1, 1]");
        }
        Ok(())
    }
}

fn base_grid(n_rows: usize, n_cols: usize, n_days: u32) -> GridSpec {
    let mut grid = GridSpec::new(23.05, 113.2, 500.0, n_rows, n_cols, 60, n_days).expect("preset grid is valid");
    grid.utc_offset_minutes = 480;
    grid.start_date = NaiveDate::from_ymd_opt(2023, 3, 1);
    grid
}

fn default_mobility() -> MobilityParams {
    MobilityParams {
        n_hotspots: 4,
        hotspot_attraction: 1.0,
        hotspot_radius_m: 600.0,
        hotspots_per_vehicle: 2,
        trip_length_m: 1500.0,
        speed_mps: 8.0,
        ping_interval_s: 60,
        activity_shape: 1.6,
        activity_scale: 0.6,
        activity_cap: 3.0,
        night_shift_share: 0.25,
    }
}

fn default_field() -> FieldParams {
    let pollutant = |name: &str, scale| PollutantSpec { name: name.into(), scale };
    let feature = |name: &str, correlation, offset, scale| StaticFeatureSpec {
        name: name.into(),
        correlation,
        offset,
        scale,
    };
    FieldParams {
        kernel_length_m: 1500.0,
        baseline: 1.0,
        spatial_amplitude: 0.2,
        traffic_coupling: 1.0,
        noise_sd: 0.15,
        pollutants: vec![
            pollutant("NO", 20.0),
            pollutant("NO2", 40.0),
            pollutant("PM2.5", 35.0),
            pollutant("PM10", 60.0),
        ],
        static_features: vec![
            feature("road_density", 0.7, 5.0, 1.5),
            feature("building_ratio", 0.5, 0.4, 0.1),
            feature("greenery", -0.6, 0.3, 0.08),
        ],
    }
}

/// Cells cut from three corners of a 62 x 62 grid, leaving 3,811 in the domain.
fn guangzhou_mask(n_rows: usize, n_cols: usize) -> std::collections::BTreeSet<usize> {
    let mut cells = std::collections::BTreeSet::new();
    let corner = |leg: usize, flip_row: bool, flip_col: bool, cells: &mut std::collections::BTreeSet<usize>| {
        for i in 0..leg {
            for j in 0..leg - i {
                let row = if flip_row { n_rows - 1 - i } else { i };
                let col = if flip_col { n_cols - 1 - j } else { j };
                cells.insert(row * n_cols + col);
            }
        }
    };
    corner(5, false, false, &mut cells);
    corner(5, true, true, &mut cells);
    corner(2, true, false, &mut cells);
    cells
}

/// A named preset with the given seed.
pub fn preset(name: &str, seed: u64) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig {
        name: name.to_string(),
        grid: base_grid(8, 8, 3),
        n_vehicles: 12,
        seed,
        mobility: default_mobility(),
        field: default_field(),
    };
    match name {
        "desk-small" => {}
        "desk-medium" => {
            config.grid = base_grid(20, 20, 7);
            config.n_vehicles = 64;
            config.mobility.n_hotspots = 8;
            config.mobility.trip_length_m = 2500.0;
        }
        "guangzhou-shape" => {
            config.grid = base_grid(62, 62, 61);
            config.grid.excluded_cells = guangzhou_mask(62, 62);
            config.n_vehicles = 320;
            config.mobility.n_hotspots = 30;
            config.mobility.hotspots_per_vehicle = 3;
            config.mobility.hotspot_radius_m = 1500.0;
            config.mobility.trip_length_m = 5000.0;
            config.mobility.speed_mps = 9.0;
            config.mobility.ping_interval_s = 300;
            config.field.kernel_length_m = 3000.0;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    }
    config.validate()?;
    Ok(config)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One GPS fix. `k` is the flat `(g, t)` index, `None` outside the study area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ping {
    pub vehicle: u32,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub k: Option<u32>,
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

/// Folds an unbounded coordinate into `[0, len)` as a reflecting walk would.
fn reflect(u: f64, len: f64) -> f64 {
    let m = u.rem_euclid(2.0 * len);
    let r = if m < len { m } else { 2.0 * len - m };
    r.min(len * (1.0 - 1e-12))
}

struct Walker {
    /// Unfolded position along the current leg.
    ux: f64,
    uy: f64,
    dx: f64,
    dy: f64,
    remaining: f64,
}

impl Walker {
    fn position(&self, width: f64, height: f64) -> (f64, f64) {
        (reflect(self.ux, width), reflect(self.uy, height))
    }
}

/// Hotspot centres, kept away from the outer tenth of the domain.
fn hotspots(config: &ScenarioConfig) -> Vec<(f64, f64)> {
    let mut rng = stream(config.seed, STREAM_HOTSPOTS);
    let (w, h) = (config.grid.width_m(), config.grid.height_m());
    (0..config.mobility.n_hotspots)
        .map(|_| (w * rng.random_range(0.1..0.9), h * rng.random_range(0.1..0.9)))
        .collect()
}

fn local_midnight(grid: &GridSpec) -> i64 {
    let date = grid.start_date.expect("validated start_date");
    date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() - i64::from(grid.utc_offset_minutes) * 60
}

fn simulate_vehicle(config: &ScenarioConfig, index: &SpatiotemporalIndex, spots: &[(f64, f64)], v: usize) -> Vec<Ping> {
    let m = &config.mobility;
    let grid = &config.grid;
    let mut rng = stream(config.seed, STREAM_MOBILITY + v as u64);
    let activity = Pareto::new(m.activity_scale, m.activity_shape)
        .expect("validated activity")
        .sample(&mut rng)
        .min(m.activity_cap);
    let shift = if rng.random_bool(m.night_shift_share) { 12 } else { 0 };
    let favourites: Vec<usize> = if spots.is_empty() {
        Vec::new()
    } else {
        rand::seq::index::sample(&mut rng, spots.len(), m.hotspots_per_vehicle.min(spots.len())).into_vec()
    };
    let p_hotspot = m.hotspot_attraction / (1.0 + m.hotspot_attraction);
    let leg_length = Exp::new(1.0 / m.trip_length_m).expect("validated trip length");
    let (width, height) = (grid.width_m(), grid.height_m());
    let mut walker = Walker {
        ux: rng.random::<f64>() * width,
        uy: rng.random::<f64>() * height,
        dx: 1.0,
        dy: 0.0,
        remaining: 0.0,
    };
    let step = m.speed_mps * f64::from(m.ping_interval_s);
    let interval = i64::from(m.ping_interval_s);
    let t_count = grid.n_intervals();
    let midnight = local_midnight(grid);

    let mut pings = Vec::new();
    for day in 0..i64::from(grid.n_days) {
        let mut hours: Vec<usize> = (0..24)
            .filter(|&h| rng.random_bool((activity * HOURLY_PROFILE[(h + shift) % 24]).min(1.0)))
            .collect();
        if hours.is_empty() {
            // every vehicle works at least one hour of its shift a day
            hours.push((rng.random_range(7..21) + shift) % 24);
        }
        for hour in hours {
            let mut offset = rng.random_range(0..interval.min(3600));
            while offset < 3600 {
                let mut distance = step;
                while distance > 0.0 {
                    if walker.remaining <= 0.0 {
                        let (x, y) = walker.position(width, height);
                        walker.ux = x;
                        walker.uy = y;
                        walker.remaining = 0.0;
                        if !favourites.is_empty() && rng.random_bool(p_hotspot) {
                            let (cx, cy) = spots[favourites[rng.random_range(0..favourites.len())]];
                            let jx: f64 = rng.sample(StandardNormal);
                            let jy: f64 = rng.sample(StandardNormal);
                            let tx = (cx + jx * m.hotspot_radius_m).clamp(0.0, width);
                            let ty = (cy + jy * m.hotspot_radius_m).clamp(0.0, height);
                            let len = (tx - x).hypot(ty - y);
                            if len > 1.0 {
                                walker.dx = (tx - x) / len;
                                walker.dy = (ty - y) / len;
                                walker.remaining = len;
                            }
                        }
                        if walker.remaining <= 0.0 {
                            let theta = rng.random_range(0.0..std::f64::consts::TAU);
                            walker.dx = theta.cos();
                            walker.dy = theta.sin();
                            walker.remaining = leg_length.sample(&mut rng);
                        }
                    }
                    let d = distance.min(walker.remaining);
                    walker.ux += walker.dx * d;
                    walker.uy += walker.dy * d;
                    walker.remaining -= d;
                    distance -= d;
                }
                let (x, y) = walker.position(width, height);
                let (lat, lon) = grid.unproject(x, y);
                let (lat, lon) = (round_to(lat, 1e7), round_to(lon, 1e7));
                let timestamp = midnight + day * 86_400 + hour as i64 * 3600 + offset;
                let k = index.locate(lat, lon, timestamp).map(|loc| (loc.g * t_count + loc.t) as u32);
                pings.push(Ping {
                    vehicle: v as u32,
                    timestamp,
                    lat,
                    lon,
                    k,
                });
                offset += interval;
            }
        }
    }
    pings
}

/// All pings, ordered by vehicle and then time.
pub fn generate_trajectories(config: &ScenarioConfig) -> Result<Vec<Ping>> {
    config.validate()?;
    let index = SpatiotemporalIndex::build(config.grid.clone())?;
    let spots = hotspots(config);
    let per_vehicle: Vec<Vec<Ping>> = (0..config.n_vehicles)
        .into_par_iter()
        .map(|v| simulate_vehicle(config, &index, &spots, v))
        .collect();
    Ok(per_vehicle.into_iter().flatten().collect())
}

/// One-dimensional Gaussian smoothing along rows then columns, renormalized at the edges.
fn gaussian_smooth(values: &[f64], n_rows: usize, n_cols: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp()).collect();
    let pass = |input: &[f64], along_cols: bool| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for r in 0..n_rows {
            for c in 0..n_cols {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, &kv) in kernel.iter().enumerate() {
                    let d = i as isize - radius;
                    let (rr, cc) = if along_cols { (r as isize, c as isize + d) } else { (r as isize + d, c as isize) };
                    if rr < 0 || cc < 0 || rr >= n_rows as isize || cc >= n_cols as isize {
                        continue;
                    }
                    acc += kv * input[rr as usize * n_cols + cc as usize];
                    norm += kv;
                }
                out[r * n_cols + c] = acc / norm;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

/// Rescales the active cells to mean 0 and sd 1; masked cells are set to 0.
fn standardize(values: &mut [f64], grid: &GridSpec) {
    let active: Vec<f64> = (0..values.len()).filter(|&g| grid.is_active(g)).map(|g| values[g]).collect();
    let n = active.len().max(1) as f64;
    let mean = active.iter().sum::<f64>() / n;
    let sd = (active.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for (g, v) in values.iter_mut().enumerate() {
        *v = if grid.is_active(g) && sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Standardized, spatially smooth component `S(g)`.
pub fn spatial_component(config: &ScenarioConfig) -> Vec<f64> {
    let grid = &config.grid;
    let mut rng = stream(config.seed, STREAM_SPATIAL);
    let noise: Vec<f64> = (0..grid.n_cells()).map(|_| rng.sample(StandardNormal)).collect();
    let mut smooth = gaussian_smooth(&noise, grid.n_rows, grid.n_cols, config.field.kernel_length_m / grid.cell_size_m);
    standardize(&mut smooth, grid);
    smooth
}

/// Log-scaled ping density per `(g, t)`, in `[0, 1]`.
pub fn congestion(pings: &[Ping], n_points: usize) -> Vec<f64> {
    let mut counts = vec![0u64; n_points];
    for p in pings {
        if let Some(k) = p.k {
            counts[k as usize] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; n_points];
    }
    let denom = (max as f64).ln_1p();
    counts.iter().map(|&c| (c as f64).ln_1p() / denom).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthField {
    pub spatial: Vec<f64>,
    pub congestion: Vec<f64>,
    /// Latent concentration per pollutant per `(g, t)`.
    pub latent: Vec<Vec<f64>>,
}

pub fn generate_truth_field(config: &ScenarioConfig, pings: &[Ping]) -> TruthField {
    let grid = &config.grid;
    let f = &config.field;
    let t_count = grid.n_intervals();
    let spatial = spatial_component(config);
    let congestion = congestion(pings, grid.n_points());
    let latent = f
        .pollutants
        .iter()
        .map(|p| {
            (0..grid.n_points())
                .map(|k| p.scale * (f.baseline + f.spatial_amplitude * spatial[k / t_count] + f.traffic_coupling * congestion[k]))
                .collect()
        })
        .collect();
    TruthField {
        spatial,
        congestion,
        latent,
    }
}

/// Static features `offset + scale * (ρ S + sqrt(1 - ρ²) ε)` with white noise `ε`.
pub fn static_features(config: &ScenarioConfig, spatial: &[f64]) -> Result<FeatureTable> {
    let specs = &config.field.static_features;
    let n_cells = spatial.len();
    let columns: Vec<Vec<f64>> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream(config.seed, STREAM_STATIC + i as u64);
            let rho = s.correlation;
            let resid = (1.0 - rho * rho).sqrt();
            spatial
                .iter()
                .map(|&z| {
                    let e: f64 = rng.sample(StandardNormal);
                    s.offset + s.scale * (rho * z + resid * e)
                })
                .collect()
        })
        .collect();
    let values = (0..n_cells).flat_map(|g| columns.iter().map(move |c| c[g])).collect();
    FeatureTable::new_static(specs.iter().map(|s| s.name.clone()).collect(), n_cells, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub pings: usize,
    pub pings_in_domain: usize,
    pub vehicles_with_pings: usize,
    pub active_cells: usize,
    /// Readings clamped at 0, per pollutant.
    pub clamped: Vec<(String, u64)>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub pings: Vec<Ping>,
    /// `readings[i * P + p]` for ping `i` and pollutant `p`.
    pub readings: Vec<f64>,
    pub truth: TruthField,
    pub static_features: FeatureTable,
    pub dynamic_features: FeatureTable,
    pub clamped: Vec<u64>,
}

/// Trajectories, truth field, readings and feature tables for one configuration.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    let pings = generate_trajectories(config)?;
    let truth = generate_truth_field(config, &pings);
    let f = &config.field;
    let n_p = f.pollutants.len();

    // pings are grouped by vehicle, so each vehicle's readings come from its own stream
    let mut bounds = vec![0usize];
    for i in 1..pings.len() {
        if pings[i].vehicle != pings[i - 1].vehicle {
            bounds.push(i);
        }
    }
    bounds.push(pings.len());
    let chunks: Vec<(Vec<f64>, Vec<u64>)> = bounds
        .par_windows(2)
        .map(|w| {
            let slice = &pings[w[0]..w[1]];
            let mut rng = stream(config.seed, STREAM_READINGS + u64::from(slice.first().map_or(0, |p| p.vehicle)));
            let mut out = Vec::with_capacity(slice.len() * n_p);
            let mut clamped = vec![0u64; n_p];
            for ping in slice {
                for (p, spec) in f.pollutants.iter().enumerate() {
                    let mean = ping.k.map_or(spec.scale * f.baseline, |k| truth.latent[p][k as usize]);
                    let noise: f64 = rng.sample(StandardNormal);
                    let mut value = mean + f.noise_sd * spec.scale * noise;
                    if value < 0.0 {
                        value = 0.0;
                        clamped[p] += 1;
                    }
                    out.push(round_to(value, 1e4));
                }
            }
            (out, clamped)
        })
        .collect();
    let mut readings = Vec::with_capacity(pings.len() * n_p);
    let mut clamped = vec![0u64; n_p];
    for (r, c) in chunks {
        readings.extend(r);
        for (total, x) in clamped.iter_mut().zip(c) {
            *total += x;
        }
    }

    let static_features = static_features(config, &truth.spatial)?;
    let dynamic_features = FeatureTable::new_dynamic(
        vec!["congestion".into()],
        config.grid.n_cells(),
        config.grid.n_intervals(),
        truth.congestion.clone(),
    )?;
    Ok(Scenario {
        config: config.clone(),
        pings,
        readings,
        truth,
        static_features,
        dynamic_features,
        clamped,
    })
}

impl Scenario {
    pub fn pollutant_names(&self) -> Vec<String> {
        self.config.field.pollutants.iter().map(|p| p.name.clone()).collect()
    }

    pub fn vehicle_id(&self, v: u32) -> String {
        let width = self.config.n_vehicles.to_string().len().max(4);
        format!("v{:0width$}", v + 1)
    }

    pub fn records(&self) -> impl Iterator<Item = TrajectoryRecord> + '_ {
        let n_p = self.config.field.pollutants.len();
        self.pings.iter().enumerate().map(move |(i, p)| TrajectoryRecord {
            vehicle_id: self.vehicle_id(p.vehicle),
            timestamp: p.timestamp,
            lat: p.lat,
            lon: p.lon,
            readings: self.readings[i * n_p..(i + 1) * n_p].iter().map(|&r| Some(r)).collect(),
        })
    }

    /// Bins the generated records in memory, as ingesting `trajectories.csv` would.
    pub fn ingest(&self) -> Result<Binned> {
        let index = SpatiotemporalIndex::build(self.config.grid.clone())?;
        let mut binner = Binner::new(index, &self.pollutant_names());
        for record in self.records() {
            binner.add(&record);
        }
        Ok(binner.finish())
    }

    pub fn summary(&self) -> ScenarioSummary {
        let mut seen = vec![false; self.config.n_vehicles];
        for p in &self.pings {
            seen[p.vehicle as usize] = true;
        }
        ScenarioSummary {
            pings: self.pings.len(),
            pings_in_domain: self.pings.iter().filter(|p| p.k.is_some()).count(),
            vehicles_with_pings: seen.iter().filter(|&&s| s).count(),
            active_cells: self.config.grid.n_active_cells(),
            clamped: self.pollutant_names().into_iter().zip(self.clamped.iter().copied()).collect(),
        }
    }

    pub fn write_trajectories(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let n_p = self.config.field.pollutants.len();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            write!(out, "vehicle_id,timestamp,lat,lon")?;
            for name in self.pollutant_names() {
                write!(out, ",{name}")?;
            }
            writeln!(out)?;
            for (i, p) in self.pings.iter().enumerate() {
                write!(out, "{},{},{},{}", self.vehicle_id(p.vehicle), p.timestamp, p.lat, p.lon)?;
                for r in &self.readings[i * n_p..(i + 1) * n_p] {
                    write!(out, ",{r}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    fn write_truth(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let t_count = self.config.grid.n_intervals();
        let mut write = || -> std::io::Result<()> {
            write!(out, "g,t")?;
            for name in self.pollutant_names() {
                write!(out, ",{name}")?;
            }
            writeln!(out)?;
            for k in 0..self.config.grid.n_points() {
                if !self.config.grid.is_active(k / t_count) {
                    continue;
                }
                write!(out, "{},{}", k / t_count, k % t_count)?;
                for latent in &self.truth.latent {
                    write!(out, ",{}", latent[k])?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Writes the scenario files into an existing directory and returns their paths.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let path = |name: &str| dir.join(name);
        let mut written = Vec::new();

        let p = path("trajectories.csv");
        self.write_trajectories(&p)?;
        written.push(p);

        let p = path("grid.conf");
        self.config.grid.save(&p)?;
        written.push(p);

        let p = path("static_features.csv");
        self.static_features.save(&p)?;
        written.push(p);

        let p = path("dynamic_features.csv");
        self.dynamic_features.save(&p)?;
        written.push(p);

        let p = path("costs.csv");
        let mut costs = String::from("vehicle_id,cost\n");
        for v in 0..self.config.n_vehicles as u32 {
            costs.push_str(&format!("{},1\n", self.vehicle_id(v)));
        }
        fs::write(&p, costs).map_err(|e| Error::io(&p, e))?;
        written.push(p);

        let p = path("truth.csv");
        self.write_truth(&p)?;
        written.push(p);

        let p = path("scenario.json");
        let doc = serde_json::json!({ "config": self.config, "summary": self.summary() });
        fs::write(&p, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            preset(name, 1).unwrap();
        }
        assert!(matches!(preset("nope", 1), Err(Error::Config(msg)) if msg.contains("desk-small")));
        assert_eq!(preset("desk-small", 1).unwrap().n_vehicles, 12);
    }

    #[test]
    fn guangzhou_mask_leaves_3811_cells() {
        let config = preset("guangzhou-shape", 0).unwrap();
        assert_eq!(config.grid.n_cells(), 3844);
        assert_eq!(config.grid.n_active_cells(), 3811);
    }

    #[test]
    fn reflection_stays_inside() {
        for u in [-12.5, -10.0, -0.1, 0.0, 3.0, 10.0, 19.9, 20.0, 31.0, 1e6 + 0.3] {
            let r = reflect(u, 10.0);
            assert!((0.0..10.0).contains(&r), "{u} -> {r}");
        }
        assert_eq!(reflect(12.0, 10.0), 8.0);
        assert_eq!(reflect(-3.0, 10.0), 3.0);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let out = gaussian_smooth(&[2.0; 30], 5, 6, 1.7);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn congestion_is_log_scaled() {
        let ping = |k| Ping { vehicle: 0, timestamp: 0, lat: 0.0, lon: 0.0, k };
        let pings = vec![ping(Some(0)), ping(Some(0)), ping(Some(0)), ping(Some(1)), ping(None)];
        let c = congestion(&pings, 3);
        assert_eq!(c[0], 1.0);
        assert!((c[1] - 2f64.ln() / 4f64.ln()).abs() < 1e-15);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn one_vehicle_one_day() {
        let mut config = preset("desk-small", 3).unwrap();
        config.n_vehicles = 1;
        config.grid.n_days = 1;
        let scenario = generate(&config).unwrap();
        let ids: std::collections::BTreeSet<String> = scenario.records().map(|r| r.vehicle_id).collect();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn no_coupling_means_no_time_variation() {
        let mut config = preset("desk-small", 5).unwrap();
        config.field.traffic_coupling = 0.0;
        let scenario = generate(&config).unwrap();
        let t_count = config.grid.n_intervals();
        for latent in &scenario.truth.latent {
            for cell in latent.chunks(t_count) {
                assert!(cell.iter().all(|&v| v == cell[0]));
            }
        }
    }
}
