//! Trajectory parsing and binning into the spatiotemporal grid.
//!
//! Records are binned in one pass into per-`(vehicle, cell, local day)` slots, so
//! both visit counts and pollutant reading sums come out of the same accumulator.
//! Accumulators built from disjoint partitions of a record stream can be merged
//! in any order before [`Binner::finish`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatiotemporalIndex;

/// Column names used to read a trajectory file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub vehicle_id: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    /// Pollutant columns to read; `None` means every remaining column.
    pub pollutants: Option<Vec<String>>,
    pub delimiter: u8,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            vehicle_id: "vehicle_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            pollutants: None,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub vehicle_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// One slot per pollutant column of the source file, `None` where the field was empty.
    pub readings: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    EpochSeconds,
    Iso8601,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows: u64,
    pub records: u64,
    pub skipped: u64,
    pub skipped_by_reason: BTreeMap<String, u64>,
}

impl ParseStats {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.skipped_by_reason.entry(reason.to_string()).or_default() += 1;
    }
}

/// Streaming reader over a delimited trajectory file.
///
/// Malformed rows are skipped and tallied in [`TrajectoryReader::stats`]. The
/// timestamp format is detected once per file from the first parseable row.
pub struct TrajectoryReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<Box<dyn Read>>,
    vehicle_col: usize,
    timestamp_col: usize,
    lat_col: usize,
    lon_col: usize,
    pollutant_cols: Vec<usize>,
    pollutants: Vec<String>,
    n_fields: usize,
    format: Option<TimestampFormat>,
    stats: ParseStats,
}

/// Opens a trajectory file for streaming.
pub fn parse_trajectories(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<TrajectoryReader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TrajectoryReader::from_reader(Box::new(file), path, schema)
}

impl TrajectoryReader {
    pub fn from_reader(reader: Box<dyn Read>, path: &Path, schema: &ColumnMapping) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        let find = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                message: format!("missing mandatory column `{name}`"),
            })
        };
        let vehicle_col = find(&schema.vehicle_id)?;
        let timestamp_col = find(&schema.timestamp)?;
        let lat_col = find(&schema.lat)?;
        let lon_col = find(&schema.lon)?;
        let (pollutant_cols, pollutants) = match &schema.pollutants {
            Some(names) => {
                let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
                (cols, names.clone())
            }
            None => headers
                .iter()
                .enumerate()
                .filter(|(i, _)| ![vehicle_col, timestamp_col, lat_col, lon_col].contains(i))
                .map(|(i, h)| (i, h.to_string()))
                .unzip(),
        };
        Ok(TrajectoryReader {
            path: path.to_path_buf(),
            records: csv_reader.into_records(),
            vehicle_col,
            timestamp_col,
            lat_col,
            lon_col,
            pollutant_cols,
            pollutants,
            n_fields: headers.len(),
            format: None,
            stats: ParseStats::default(),
        })
    }

    pub fn pollutants(&self) -> &[String] {
        &self.pollutants
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn timestamp_format(&self) -> Option<TimestampFormat> {
        self.format
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn parse_timestamp(&mut self, field: &str) -> Option<i64> {
        match self.format {
            Some(TimestampFormat::EpochSeconds) => parse_epoch(field),
            Some(TimestampFormat::Iso8601) => parse_iso(field),
            None => {
                if let Some(ts) = parse_epoch(field) {
                    self.format = Some(TimestampFormat::EpochSeconds);
                    Some(ts)
                } else if let Some(ts) = parse_iso(field) {
                    self.format = Some(TimestampFormat::Iso8601);
                    Some(ts)
                } else {
                    None
                }
            }
        }
    }

    fn parse_row(&mut self, row: &csv::StringRecord) -> std::result::Result<TrajectoryRecord, &'static str> {
        if row.len() != self.n_fields {
            return Err("field_count");
        }
        let vehicle_id = row[self.vehicle_col].to_string();
        if vehicle_id.is_empty() {
            return Err("vehicle_id");
        }
        let timestamp = self.parse_timestamp(&row[self.timestamp_col]).ok_or("timestamp")?;
        let lat: f64 = row[self.lat_col].parse().map_err(|_| "coordinate")?;
        let lon: f64 = row[self.lon_col].parse().map_err(|_| "coordinate")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err("coordinate_range");
        }
        let mut readings = Vec::with_capacity(self.pollutant_cols.len());
        for &col in &self.pollutant_cols {
            let field = &row[col];
            if field.is_empty() {
                readings.push(None);
                continue;
            }
            let value: f64 = field.parse().map_err(|_| "reading")?;
            if !value.is_finite() || value < 0.0 {
                return Err("reading_range");
            }
            readings.push(Some(value));
        }
        Ok(TrajectoryRecord {
            vehicle_id,
            timestamp,
            lat,
            lon,
            readings,
        })
    }
}

impl Iterator for TrajectoryReader {
    type Item = TrajectoryRecord;

    fn next(&mut self) -> Option<TrajectoryRecord> {
        loop {
            let row = match self.records.next()? {
                Ok(row) => row,
                Err(_) => {
                    self.stats.rows += 1;
                    self.stats.skip("unreadable");
                    continue;
                }
            };
            self.stats.rows += 1;
            match self.parse_row(&row) {
                Ok(record) => {
                    self.stats.records += 1;
                    return Some(record);
                }
                Err(reason) => self.stats.skip(reason),
            }
        }
    }
}

fn parse_epoch(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    let v: f64 = field.parse().ok()?;
    v.is_finite().then(|| v.floor() as i64)
}

fn parse_iso(field: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(field, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// One `(g, t)` entry of a vehicle's visit record. `k` is the flat `g * T + t` index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitEntry {
    pub k: u32,
    pub count: u32,
    /// Distinct local days with at least one visit.
    pub days: u32,
}

/// Per-vehicle visit frequencies over the `G × T` space, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts {
    pub vehicle_ids: Vec<String>,
    pub n_points: usize,
    pub n_days: u32,
    /// Sorted by `k` for each vehicle.
    pub entries: Vec<Vec<VisitEntry>>,
    pub total_records: Vec<u64>,
    pub drops: Vec<u64>,
}

impl VisitCounts {
    pub fn n_vehicles(&self) -> usize {
        self.vehicle_ids.len()
    }

    pub fn vehicle_index(&self, id: &str) -> Option<usize> {
        self.vehicle_ids.binary_search_by(|v| v.as_str().cmp(id)).ok()
    }

    fn entry(&self, v: usize, k: usize) -> Option<&VisitEntry> {
        let row = &self.entries[v];
        row.binary_search_by_key(&(k as u32), |e| e.k).ok().map(|i| &row[i])
    }

    pub fn count(&self, v: usize, k: usize) -> u32 {
        self.entry(v, k).map_or(0, |e| e.count)
    }

    pub fn day_presence(&self, v: usize, k: usize) -> u32 {
        self.entry(v, k).map_or(0, |e| e.days)
    }

    pub fn binned_records(&self, v: usize) -> u64 {
        self.entries[v].iter().map(|e| u64::from(e.count)).sum()
    }
}

/// Per-vehicle reading sums for one pollutant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadingCell {
    pub k: u32,
    pub sum: f64,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingAggregate {
    pub pollutant: String,
    pub n_points: usize,
    pub vehicle_ids: Vec<String>,
    /// Sorted by `k` for each vehicle.
    pub per_vehicle: Vec<Vec<ReadingCell>>,
}

impl ReadingAggregate {
    /// Sums and counts per `(g, t)` over a vehicle subset, accumulated in the given order.
    pub fn subset_totals(&self, vehicles: &[usize]) -> (Vec<f64>, Vec<u64>) {
        let mut sums = vec![0.0; self.n_points];
        let mut counts = vec![0u64; self.n_points];
        for &v in vehicles {
            for cell in &self.per_vehicle[v] {
                sums[cell.k as usize] += cell.sum;
                counts[cell.k as usize] += u64::from(cell.count);
            }
        }
        (sums, counts)
    }

    /// Mean concentration per `(g, t)` for a vehicle subset; `None` marks an unobserved cell.
    pub fn subset_means(&self, vehicles: &[usize]) -> Vec<Option<f64>> {
        let (sums, counts) = self.subset_totals(vehicles);
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// Full-fleet mean per `(g, t)`, with vehicles accumulated in index order.
    pub fn fleet_means(&self) -> Vec<Option<f64>> {
        let all: Vec<usize> = (0..self.vehicle_ids.len()).collect();
        self.subset_means(&all)
    }

    pub fn is_empty(&self) -> bool {
        self.per_vehicle.iter().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinStats {
    pub records: u64,
    pub binned: u64,
    pub dropped_out_of_bounds: u64,
    pub dropped_out_of_window: u64,
    pub vehicles: usize,
    pub window_start: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Binned {
    pub visits: VisitCounts,
    pub readings: Vec<ReadingAggregate>,
    pub stats: BinStats,
}

impl Binned {
    pub fn readings_for(&self, pollutant: &str) -> Result<&ReadingAggregate> {
        self.readings
            .iter()
            .find(|r| r.pollutant == pollutant)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::EmptyAggregate(pollutant.to_string()))
    }
}

type SlotKey = (u32, u32, i64);

/// Mergeable accumulator for binning record streams.
#[derive(Debug, Clone)]
pub struct Binner {
    index: SpatiotemporalIndex,
    pollutants: Vec<String>,
    vehicles: HashMap<String, u32>,
    vehicle_names: Vec<String>,
    total: Vec<u64>,
    out_of_bounds: Vec<u64>,
    slots: HashMap<SlotKey, usize>,
    slot_keys: Vec<SlotKey>,
    slot_counts: Vec<u32>,
    slot_sums: Vec<f64>,
    slot_reading_counts: Vec<u32>,
}

impl Binner {
    pub fn new(index: SpatiotemporalIndex, pollutants: &[String]) -> Self {
        Binner {
            index,
            pollutants: pollutants.to_vec(),
            vehicles: HashMap::new(),
            vehicle_names: Vec::new(),
            total: Vec::new(),
            out_of_bounds: Vec::new(),
            slots: HashMap::new(),
            slot_keys: Vec::new(),
            slot_counts: Vec::new(),
            slot_sums: Vec::new(),
            slot_reading_counts: Vec::new(),
        }
    }

    fn vehicle(&mut self, id: &str) -> u32 {
        if let Some(&v) = self.vehicles.get(id) {
            return v;
        }
        let v = self.vehicle_names.len() as u32;
        self.vehicles.insert(id.to_string(), v);
        self.vehicle_names.push(id.to_string());
        self.total.push(0);
        self.out_of_bounds.push(0);
        v
    }

    fn slot(&mut self, key: SlotKey) -> usize {
        let n_p = self.pollutants.len();
        *self.slots.entry(key).or_insert_with(|| {
            self.slot_keys.push(key);
            self.slot_counts.push(0);
            self.slot_sums.extend(std::iter::repeat_n(0.0, n_p));
            self.slot_reading_counts.extend(std::iter::repeat_n(0, n_p));
            self.slot_keys.len() - 1
        })
    }

    /// Adds one record. `readings` must be aligned with the binner's pollutant list.
    pub fn add(&mut self, record: &TrajectoryRecord) {
        let v = self.vehicle(&record.vehicle_id);
        self.total[v as usize] += 1;
        let Some(loc) = self.index.locate(record.lat, record.lon, record.timestamp) else {
            self.out_of_bounds[v as usize] += 1;
            return;
        };
        let k = self.index.spec().flat(loc.g, loc.t) as u32;
        let slot = self.slot((v, k, loc.local_day));
        self.slot_counts[slot] += 1;
        let n_p = self.pollutants.len();
        for (p, value) in record.readings.iter().enumerate().take(n_p) {
            if let Some(value) = value {
                self.slot_sums[slot * n_p + p] += value;
                self.slot_reading_counts[slot * n_p + p] += 1;
            }
        }
    }

    /// Folds another accumulator into this one. Both must share the grid and pollutant list.
    pub fn merge(&mut self, other: Binner) {
        assert_eq!(self.pollutants, other.pollutants, "merging binners over different pollutants");
        let n_p = self.pollutants.len();
        let remap: Vec<u32> = other.vehicle_names.iter().map(|id| self.vehicle(id)).collect();
        for (i, &v) in remap.iter().enumerate() {
            self.total[v as usize] += other.total[i];
            self.out_of_bounds[v as usize] += other.out_of_bounds[i];
        }
        for (i, &(v, k, day)) in other.slot_keys.iter().enumerate() {
            let slot = self.slot((remap[v as usize], k, day));
            self.slot_counts[slot] += other.slot_counts[i];
            for p in 0..n_p {
                self.slot_sums[slot * n_p + p] += other.slot_sums[i * n_p + p];
                self.slot_reading_counts[slot * n_p + p] += other.slot_reading_counts[i * n_p + p];
            }
        }
    }

    pub fn finish(self) -> Binned {
        let spec = self.index.spec();
        let n_days = spec.n_days;
        let n_points = spec.n_points();
        let n_p = self.pollutants.len();

        let start_day = self
            .index
            .start_day()
            .or_else(|| self.slot_keys.iter().map(|&(_, _, day)| day).min());
        let in_window = |day: i64| start_day.is_some_and(|s| day >= s && day < s + i64::from(n_days));

        // Vehicles sorted by id; `order[old] = new`.
        let mut sorted: Vec<(usize, &String)> = self.vehicle_names.iter().enumerate().collect();
        sorted.sort_by(|a, b| a.1.cmp(b.1));
        let mut order = vec![0usize; sorted.len()];
        for (new, (old, _)) in sorted.iter().enumerate() {
            order[*old] = new;
        }
        let vehicle_ids: Vec<String> = sorted.iter().map(|(_, id)| (*id).clone()).collect();
        let n_v = vehicle_ids.len();

        let mut total = vec![0u64; n_v];
        let mut drops = vec![0u64; n_v];
        for old in 0..n_v {
            total[order[old]] = self.total[old];
            drops[order[old]] = self.out_of_bounds[old];
        }

        // Slots sorted by (vehicle, k, day) so that float sums fold in a fixed order.
        let mut slot_order: Vec<usize> = (0..self.slot_keys.len()).collect();
        slot_order.sort_by_key(|&i| {
            let (v, k, day) = self.slot_keys[i];
            (order[v as usize], k, day)
        });

        let mut entries: Vec<Vec<VisitEntry>> = vec![Vec::new(); n_v];
        let mut readings: Vec<Vec<Vec<ReadingCell>>> = vec![vec![Vec::new(); n_v]; n_p];
        let mut out_of_window = 0u64;
        for &i in &slot_order {
            let (v_old, k, day) = self.slot_keys[i];
            let v = order[v_old as usize];
            let count = self.slot_counts[i];
            if !in_window(day) {
                drops[v] += u64::from(count);
                out_of_window += u64::from(count);
                continue;
            }
            match entries[v].last_mut() {
                Some(last) if last.k == k => {
                    last.count += count;
                    last.days += 1;
                }
                _ => entries[v].push(VisitEntry { k, count, days: 1 }),
            }
            for (p, per_vehicle) in readings.iter_mut().enumerate() {
                let n = self.slot_reading_counts[i * n_p + p];
                if n == 0 {
                    continue;
                }
                let sum = self.slot_sums[i * n_p + p];
                match per_vehicle[v].last_mut() {
                    Some(last) if last.k == k => {
                        last.sum += sum;
                        last.count += n;
                    }
                    _ => per_vehicle[v].push(ReadingCell { k, sum, count: n }),
                }
            }
        }

        let out_of_bounds: u64 = self.out_of_bounds.iter().sum();
        let records: u64 = total.iter().sum();
        let stats = BinStats {
            records,
            binned: records - out_of_bounds - out_of_window,
            dropped_out_of_bounds: out_of_bounds,
            dropped_out_of_window: out_of_window,
            vehicles: n_v,
            window_start: start_day.map(|d| {
                (chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Days::new(d as u64))
                    .format("%Y-%m-%d")
                    .to_string()
            }),
        };
        let readings = self
            .pollutants
            .iter()
            .zip(readings)
            .map(|(name, per_vehicle)| ReadingAggregate {
                pollutant: name.clone(),
                n_points,
                vehicle_ids: vehicle_ids.clone(),
                per_vehicle,
            })
            .collect();
        Binned {
            visits: VisitCounts {
                vehicle_ids,
                n_points,
                n_days,
                entries,
                total_records: total,
                drops,
            },
            readings,
            stats,
        }
    }
}

/// Bins a record stream into visit counts, discarding readings.
pub fn bin_visits<I>(records: I, index: &SpatiotemporalIndex) -> VisitCounts
where
    I: IntoIterator<Item = TrajectoryRecord>,
{
    let mut binner = Binner::new(index.clone(), &[]);
    for record in records {
        binner.add(&record);
    }
    binner.finish().visits
}

/// Bins the readings of one pollutant. `pollutants` names the slots of each record's readings.
pub fn bin_readings<I>(
    records: I,
    pollutants: &[String],
    index: &SpatiotemporalIndex,
    pollutant: &str,
) -> Result<ReadingAggregate>
where
    I: IntoIterator<Item = TrajectoryRecord>,
{
    let p = pollutants
        .iter()
        .position(|n| n == pollutant)
        .ok_or_else(|| Error::EmptyAggregate(pollutant.to_string()))?;
    let selected = vec![pollutant.to_string()];
    let mut binner = Binner::new(index.clone(), &selected);
    for mut record in records {
        let value = record.readings.get(p).copied().flatten();
        record.readings = vec![value];
        binner.add(&record);
    }
    let binned = binner.finish();
    binned.readings_for(pollutant).cloned()
}

/// Reads and bins a whole trajectory file in one pass.
pub fn ingest_file(
    path: impl AsRef<Path>,
    schema: &ColumnMapping,
    index: &SpatiotemporalIndex,
) -> Result<(Binned, ParseStats)> {
    let mut reader = parse_trajectories(path, schema)?;
    let mut binner = Binner::new(index.clone(), reader.pollutants());
    for record in reader.by_ref() {
        binner.add(&record);
    }
    Ok((binner.finish(), reader.stats().clone()))
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;
    use crate::grid::GridSpec;

    fn index(n_days: u32) -> SpatiotemporalIndex {
        let mut spec = GridSpec::new(23.0, 113.0, 500.0, 4, 4, 60, n_days).unwrap();
        spec.start_date = chrono::NaiveDate::from_ymd_opt(1970, 1, 1);
        SpatiotemporalIndex::build(spec).unwrap()
    }

    fn reader(text: &str) -> Result<TrajectoryReader> {
        let bytes = text.as_bytes().to_vec();
        TrajectoryReader::from_reader(Box::new(Cursor::new(bytes)), Path::new("mem.csv"), &ColumnMapping::default())
    }

    fn record(v: &str, ts: i64, x: f64, y: f64, reading: Option<f64>) -> TrajectoryRecord {
        let spec = index(1).spec().clone();
        let (lat, lon) = spec.unproject(x, y);
        TrajectoryRecord {
            vehicle_id: v.into(),
            timestamp: ts,
            lat,
            lon,
            readings: vec![reading],
        }
    }

    #[test]
    fn parses_well_formed_rows() {
        let mut r = reader("vehicle_id,timestamp,lat,lon,PM2.5\na,0,23.0,113.0,5\nb,60,23.001,113.001,\nc,120,23.0,113.0,7.5\n").unwrap();
        let records: Vec<_> = r.by_ref().collect();
        assert_eq!(records.len(), 3);
        assert_eq!(r.stats().skipped, 0);
        assert_eq!(r.pollutants(), ["PM2.5"]);
        assert_eq!(records[1].readings, vec![None]);
        assert_eq!(records[2].readings, vec![Some(7.5)]);
        assert_eq!(r.timestamp_format(), Some(TimestampFormat::EpochSeconds));
    }

    #[test]
    fn skips_out_of_range_latitude() {
        let mut r = reader("vehicle_id,timestamp,lat,lon\na,0,91,113\na,0,23,113\n").unwrap();
        assert_eq!(r.by_ref().count(), 1);
        assert_eq!(r.stats().skipped, 1);
        assert_eq!(r.stats().skipped_by_reason["coordinate_range"], 1);
    }

    #[test]
    fn header_only_file_is_empty() {
        let mut r = reader("vehicle_id,timestamp,lat,lon\n").unwrap();
        assert_eq!(r.by_ref().count(), 0);
        assert_eq!(r.stats().skipped, 0);
    }

    #[test]
    fn missing_column_is_schema_error() {
        assert!(matches!(reader("vehicle_id,lat,lon\n"), Err(Error::Schema { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_trajectories("/nonexistent/traj.csv", &ColumnMapping::default()).err().unwrap();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn iso_timestamps_detected_per_file() {
        let mut r = reader(
            "vehicle_id,timestamp,lat,lon\na,2023-03-01T08:00:00+08:00,23,113\na,1677628800,23,113\na,2023-03-01 00:00:00,23,113\n",
        )
        .unwrap();
        let records: Vec<_> = r.by_ref().collect();
        assert_eq!(r.timestamp_format(), Some(TimestampFormat::Iso8601));
        // the epoch-formatted row does not match the detected format
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].timestamp, 1_677_628_800);
        assert_eq!(records[1].timestamp, 1_677_628_800);
        assert_eq!(r.stats().skipped_by_reason["timestamp"], 1);
    }

    #[test]
    fn negative_reading_skips_row() {
        let mut r = reader("vehicle_id,timestamp,lat,lon,NO\na,0,23,113,-1\nb,0,23,113,x\n").unwrap();
        assert_eq!(r.by_ref().count(), 0);
        assert_eq!(r.stats().skipped, 2);
    }

    #[test]
    fn same_cell_same_day_counts_twice_one_day() {
        let idx = index(2);
        let visits = bin_visits(vec![record("a", 10, 100.0, 100.0, None), record("a", 20, 120.0, 110.0, None)], &idx);
        assert_eq!(visits.count(0, 0), 2);
        assert_eq!(visits.day_presence(0, 0), 1);
    }

    #[test]
    fn same_cell_two_days() {
        let idx = index(2);
        let visits = bin_visits(vec![record("a", 10, 100.0, 100.0, None), record("a", 86_410, 120.0, 110.0, None)], &idx);
        assert_eq!(visits.count(0, 0), 2);
        assert_eq!(visits.day_presence(0, 0), 2);
    }

    #[test]
    fn out_of_bounds_record_is_dropped() {
        let idx = index(1);
        let visits = bin_visits(vec![record("a", 10, -5.0, 100.0, None), record("a", 10, 5.0, 100.0, None)], &idx);
        assert_eq!(visits.drops, vec![1]);
        assert_eq!(visits.binned_records(0), 1);
        assert_eq!(visits.total_records, vec![2]);
    }

    #[test]
    fn records_outside_window_are_dropped() {
        let idx = index(1);
        let visits = bin_visits(vec![record("a", 10, 5.0, 5.0, None), record("a", 86_400 + 10, 5.0, 5.0, None)], &idx);
        assert_eq!(visits.count(0, 0), 1);
        assert_eq!(visits.drops, vec![1]);
    }

    #[test]
    fn inferred_window_starts_at_first_day() {
        let spec = GridSpec::new(23.0, 113.0, 500.0, 4, 4, 60, 1).unwrap();
        let idx = SpatiotemporalIndex::build(spec).unwrap();
        let base = 20_000 * 86_400;
        let visits = bin_visits(
            vec![record("a", base + 86_400 + 5, 5.0, 5.0, None), record("a", base + 5, 5.0, 5.0, None)],
            &idx,
        );
        assert_eq!(visits.count(0, 0), 1);
        assert_eq!(visits.drops, vec![1]);
    }

    #[test]
    fn reading_means_per_cell() {
        let idx = index(1);
        let pollutants = vec!["PM2.5".to_string()];
        let agg = bin_readings(
            vec![record("a", 10, 5.0, 5.0, Some(10.0)), record("a", 20, 5.0, 5.0, Some(20.0))],
            &pollutants,
            &idx,
            "PM2.5",
        )
        .unwrap();
        assert_eq!(agg.per_vehicle[0], vec![ReadingCell { k: 0, sum: 30.0, count: 2 }]);
        let means = agg.fleet_means();
        assert_eq!(means[0], Some(15.0));
        assert_eq!(means[1], None);
    }

    #[test]
    fn fleet_mean_pools_vehicles() {
        let idx = index(1);
        let pollutants = vec!["NO2".to_string()];
        let agg = bin_readings(
            vec![record("a", 10, 5.0, 5.0, Some(10.0)), record("b", 20, 5.0, 5.0, Some(30.0))],
            &pollutants,
            &idx,
            "NO2",
        )
        .unwrap();
        assert_eq!(agg.fleet_means()[0], Some(20.0));
        assert_eq!(agg.subset_means(&[1])[0], Some(30.0));
    }

    #[test]
    fn absent_pollutant_is_empty_aggregate() {
        let idx = index(1);
        let pollutants = vec!["NO".to_string()];
        let err = bin_readings(vec![record("a", 10, 5.0, 5.0, None)], &pollutants, &idx, "NO").unwrap_err();
        assert!(matches!(err, Error::EmptyAggregate(_)));
        assert!(bin_readings(Vec::new(), &pollutants, &idx, "PM10").is_err());
    }

    #[test]
    fn merge_matches_single_pass() {
        let idx = index(3);
        let records: Vec<_> = (0..60)
            .map(|i| record(&format!("v{}", i % 4), i * 7_000, (i * 131 % 2000) as f64, (i * 71 % 2000) as f64, None))
            .collect();
        let single = bin_visits(records.clone(), &idx);
        let mut left = Binner::new(idx.clone(), &[]);
        let mut right = Binner::new(idx.clone(), &[]);
        for (i, r) in records.iter().enumerate() {
            if i % 3 == 0 { left.add(r) } else { right.add(r) }
        }
        right.merge(left);
        assert_eq!(right.finish().visits, single);
    }
}
