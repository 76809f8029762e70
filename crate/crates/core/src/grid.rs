//! Spatiotemporal discretization of the sensing domain.
//!
//! The domain is a rectangle of `n_rows × n_cols` square cells anchored at its
//! southwest corner, combined with a partition of the local day into equal time
//! intervals. Cells are enumerated row-major from the origin (`g = row * n_cols + col`)
//! and a flat `(g, t)` index is `g * T + t`.
//!
//! Coordinates are projected with an equirectangular approximation around the
//! origin, which is accurate to roughly 0.1% at city scale.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

const MINUTES_PER_DAY: u32 = 1440;
const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Latitude of the southwest corner, degrees.
    pub origin_lat: f64,
    /// Longitude of the southwest corner, degrees.
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub time_interval_minutes: u32,
    pub n_days: u32,
    /// Offset of local time from UTC, used to derive local dates and minute-of-day.
    #[serde(default)]
    pub utc_offset_minutes: i32,
    /// First local date of the observation window. When absent the window starts
    /// at the earliest in-bounds local date seen during binning.
    #[serde(default)]
    pub start_date: Option<NaiveDate>,
    /// Cells outside the study-area mask; points falling there are out of bounds.
    #[serde(default)]
    pub excluded_cells: BTreeSet<usize>,
}

impl GridSpec {
    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        cell_size_m: f64,
        n_rows: usize,
        n_cols: usize,
        time_interval_minutes: u32,
        n_days: u32,
    ) -> Result<Self> {
        let spec = GridSpec {
            origin_lat,
            origin_lon,
            cell_size_m,
            n_rows,
            n_cols,
            time_interval_minutes,
            n_days,
            utc_offset_minutes: 0,
            start_date: None,
            excluded_cells: BTreeSet::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::Config(format!(
                "cell_size_m must be positive, got {}",
                self.cell_size_m
            )));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Config(format!(
                "grid must have at least one row and column, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if self.time_interval_minutes == 0 || !MINUTES_PER_DAY.is_multiple_of(self.time_interval_minutes) {
            return Err(Error::Config(format!(
                "time_interval_minutes must divide 1440, got {}",
                self.time_interval_minutes
            )));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if !(-90.0..=90.0).contains(&self.origin_lat) || !(-180.0..=180.0).contains(&self.origin_lon)
        {
            return Err(Error::Config(format!(
                "origin ({}, {}) is not a valid coordinate",
                self.origin_lat, self.origin_lon
            )));
        }
        if self.utc_offset_minutes.abs() > 18 * 60 {
            return Err(Error::Config(format!(
                "utc_offset_minutes out of range: {}",
                self.utc_offset_minutes
            )));
        }
        if let Some(&g) = self.excluded_cells.iter().next_back() {
            if g >= self.n_cells() {
                return Err(Error::Config(format!(
                    "excluded cell {g} outside a grid of {} cells",
                    self.n_cells()
                )));
            }
        }
        Ok(())
    }

    /// Number of spatial cells `G`, including masked ones.
    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Number of time intervals per day `T`.
    pub fn n_intervals(&self) -> usize {
        (MINUTES_PER_DAY / self.time_interval_minutes) as usize
    }

    /// Size of the flattened `G × T` space.
    pub fn n_points(&self) -> usize {
        self.n_cells() * self.n_intervals()
    }

    /// Number of cells inside the study-area mask.
    pub fn n_active_cells(&self) -> usize {
        self.n_cells() - self.excluded_cells.len()
    }

    pub fn is_active(&self, g: usize) -> bool {
        g < self.n_cells() && !self.excluded_cells.contains(&g)
    }

    pub fn flat(&self, g: usize, t: usize) -> usize {
        g * self.n_intervals() + t
    }

    pub fn unflat(&self, k: usize) -> (usize, usize) {
        let t_count = self.n_intervals();
        (k / t_count, k % t_count)
    }

    /// Meters east and north of the origin.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let scale = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let x = (lon - self.origin_lon) * scale * self.origin_lat.to_radians().cos();
        let y = (lat - self.origin_lat) * scale;
        (x, y)
    }

    /// Inverse of [`GridSpec::project`].
    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let scale = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let lat = self.origin_lat + y / scale;
        let lon = self.origin_lon + x / (scale * self.origin_lat.to_radians().cos());
        (lat, lon)
    }

    pub fn width_m(&self) -> f64 {
        self.n_cols as f64 * self.cell_size_m
    }

    pub fn height_m(&self) -> f64 {
        self.n_rows as f64 * self.cell_size_m
    }

    /// Stable content hash of the canonical key-value rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_config_string().as_bytes()))
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "origin_lat = {}", self.origin_lat);
        let _ = writeln!(out, "origin_lon = {}", self.origin_lon);
        let _ = writeln!(out, "cell_size_m = {}", self.cell_size_m);
        let _ = writeln!(out, "n_rows = {}", self.n_rows);
        let _ = writeln!(out, "n_cols = {}", self.n_cols);
        let _ = writeln!(out, "time_interval_minutes = {}", self.time_interval_minutes);
        let _ = writeln!(out, "n_days = {}", self.n_days);
        let _ = writeln!(out, "utc_offset_minutes = {}", self.utc_offset_minutes);
        if let Some(date) = self.start_date {
            let _ = writeln!(out, "start_date = {}", date.format("%Y-%m-%d"));
        }
        if !self.excluded_cells.is_empty() {
            let cells: Vec<String> = self.excluded_cells.iter().map(|g| g.to_string()).collect();
            let _ = writeln!(out, "excluded_cells = {}", cells.join(","));
        }
        out
    }

    /// Parses the `key = value` grid config format. Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut origin_lat = None;
        let mut origin_lon = None;
        let mut cell_size_m = None;
        let mut n_rows = None;
        let mut n_cols = None;
        let mut interval = None;
        let mut n_days = None;
        let mut utc_offset_minutes = 0;
        let mut start_date = None;
        let mut excluded_cells = BTreeSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: invalid {what} `{value}`", lineno + 1));
            match key {
                "origin_lat" => origin_lat = Some(value.parse::<f64>().map_err(|_| bad(key))?),
                "origin_lon" => origin_lon = Some(value.parse::<f64>().map_err(|_| bad(key))?),
                "cell_size_m" => cell_size_m = Some(value.parse::<f64>().map_err(|_| bad(key))?),
                "n_rows" => n_rows = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "n_cols" => n_cols = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "time_interval_minutes" => interval = Some(value.parse::<u32>().map_err(|_| bad(key))?),
                "n_days" => n_days = Some(value.parse::<u32>().map_err(|_| bad(key))?),
                "utc_offset_minutes" => utc_offset_minutes = value.parse::<i32>().map_err(|_| bad(key))?,
                "start_date" => {
                    start_date = Some(NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| bad(key))?)
                }
                "excluded_cells" => {
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        excluded_cells.insert(item.parse::<usize>().map_err(|_| bad(key))?);
                    }
                }
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }

        let missing = |name: &str| Error::Config(format!("missing required key `{name}`"));
        let spec = GridSpec {
            origin_lat: origin_lat.ok_or_else(|| missing("origin_lat"))?,
            origin_lon: origin_lon.ok_or_else(|| missing("origin_lon"))?,
            cell_size_m: cell_size_m.ok_or_else(|| missing("cell_size_m"))?,
            n_rows: n_rows.ok_or_else(|| missing("n_rows"))?,
            n_cols: n_cols.ok_or_else(|| missing("n_cols"))?,
            time_interval_minutes: interval.ok_or_else(|| missing("time_interval_minutes"))?,
            n_days: n_days.ok_or_else(|| missing("n_days"))?,
            utc_offset_minutes,
            start_date,
            excluded_cells,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_config(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_config_string()).map_err(|e| Error::io(path, e))
    }
}

/// A located record: spatial cell, time interval and local calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Location {
    pub g: usize,
    pub t: usize,
    /// Days since 1970-01-01 in local time.
    pub local_day: i64,
}

/// Maps `(lat, lon, timestamp)` to grid coordinates.
#[derive(Debug, Clone)]
pub struct SpatiotemporalIndex {
    spec: GridSpec,
    start_day: Option<i64>,
}

impl SpatiotemporalIndex {
    pub fn build(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let start_day = spec
            .start_date
            .map(|d| d.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days());
        Ok(SpatiotemporalIndex { spec, start_day })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Spatial cell of a coordinate, or `None` if outside the domain or masked.
    /// Cells are half-open `[lo, hi)` along both axes.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<usize> {
        if !lat.is_finite() || !lon.is_finite() {
            return None;
        }
        let (x, y) = self.spec.project(lat, lon);
        let col = (x / self.spec.cell_size_m).floor();
        let row = (y / self.spec.cell_size_m).floor();
        if col < 0.0 || row < 0.0 || col >= self.spec.n_cols as f64 || row >= self.spec.n_rows as f64 {
            return None;
        }
        let g = row as usize * self.spec.n_cols + col as usize;
        self.spec.is_active(g).then_some(g)
    }

    /// Time interval and local day of a UTC epoch timestamp.
    pub fn interval_of(&self, timestamp: i64) -> (usize, i64) {
        let local = timestamp + i64::from(self.spec.utc_offset_minutes) * 60;
        let day = local.div_euclid(SECONDS_PER_DAY);
        let minute = local.rem_euclid(SECONDS_PER_DAY) / 60;
        ((minute / i64::from(self.spec.time_interval_minutes)) as usize, day)
    }

    pub fn locate(&self, lat: f64, lon: f64, timestamp: i64) -> Option<Location> {
        let g = self.cell_of(lat, lon)?;
        let (t, local_day) = self.interval_of(timestamp);
        Some(Location { g, t, local_day })
    }

    /// Configured first day of the observation window, if any.
    pub fn start_day(&self) -> Option<i64> {
        self.start_day
    }

    /// Epoch seconds of local midnight on the given local day.
    pub fn day_start_epoch(&self, local_day: i64) -> i64 {
        local_day * SECONDS_PER_DAY - i64::from(self.spec.utc_offset_minutes) * 60
    }
}
