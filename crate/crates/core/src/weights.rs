//! Spatiotemporal importance weights built from context features.
//!
//! Each feature is min-max scaled to `[0, 1]` and blended with the absolute value of
//! its Pearson correlation against observed concentrations. Static (per-cell) features
//! give a spatial score `s(g)`, dynamic (per-cell, per-interval) features a temporal
//! score `d(g, t)`. The variants combine them as
//!
//! | variant         | raw score          |
//! |-----------------|--------------------|
//! | `uniform`       | 1                  |
//! | `spatial_only`  | `s(g)`             |
//! | `temporal_only` | `d(g, t)`          |
//! | `full`          | `s(g) * d(g, t)`   |
//!
//! and the raw field is min-max normalized into `[epsilon_floor, 1]` so no cell is
//! weightless.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReadingAggregate;
use crate::numeric::PairwiseSum;

pub const DEFAULT_EPSILON_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    StaticSpatial,
    DynamicSpatiotemporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub kind: FeatureKind,
    pub feature_names: Vec<String>,
    pub n_cells: usize,
    /// 1 for static tables.
    pub n_intervals: usize,
    /// Row-major: `values[row * n_features + k]`, where `row` is `g` or `g * T + t`.
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new_static(feature_names: Vec<String>, n_cells: usize, values: Vec<f64>) -> Result<Self> {
        Self::checked(FeatureKind::StaticSpatial, feature_names, n_cells, 1, values)
    }

    pub fn new_dynamic(feature_names: Vec<String>, n_cells: usize, n_intervals: usize, values: Vec<f64>) -> Result<Self> {
        Self::checked(FeatureKind::DynamicSpatiotemporal, feature_names, n_cells, n_intervals, values)
    }

    fn checked(
        kind: FeatureKind,
        feature_names: Vec<String>,
        n_cells: usize,
        n_intervals: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = n_cells * n_intervals * feature_names.len();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature values must be finite".into()));
        }
        Ok(FeatureTable {
            kind,
            feature_names,
            n_cells,
            n_intervals,
            values,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_cells * self.n_intervals
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        let n_f = self.n_features();
        self.values.iter().skip(k).step_by(n_f).copied()
    }

    /// Loads `g,feature...` rows; every cell `0..n_cells` must appear exactly once.
    pub fn load_static(path: impl AsRef<Path>, n_cells: usize) -> Result<Self> {
        let path = path.as_ref();
        let (names, rows) = read_feature_rows(path, 1)?;
        let n_f = names.len();
        let mut values = vec![0.0; n_cells * n_f];
        let mut seen = vec![false; n_cells];
        for (keys, feats) in rows {
            let g = keys[0];
            if g >= n_cells || std::mem::replace(&mut seen[g], true) {
                return Err(Error::Validation(format!("{}: invalid or repeated cell {g}", path.display())));
            }
            values[g * n_f..(g + 1) * n_f].copy_from_slice(&feats);
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("{}: no row for cell {g}", path.display())));
        }
        Self::new_static(names, n_cells, values)
    }

    /// Loads `g,t,feature...` rows. Absent `(g, t)` rows are read as zero, i.e. no activity.
    pub fn load_dynamic(path: impl AsRef<Path>, n_cells: usize, n_intervals: usize) -> Result<Self> {
        let path = path.as_ref();
        let (names, rows) = read_feature_rows(path, 2)?;
        let n_f = names.len();
        let mut values = vec![0.0; n_cells * n_intervals * n_f];
        let mut seen = vec![false; n_cells * n_intervals];
        for (keys, feats) in rows {
            let (g, t) = (keys[0], keys[1]);
            if g >= n_cells || t >= n_intervals {
                return Err(Error::Validation(format!("{}: cell ({g}, {t}) outside the grid", path.display())));
            }
            let row = g * n_intervals + t;
            if std::mem::replace(&mut seen[row], true) {
                return Err(Error::Validation(format!("{}: repeated row ({g}, {t})", path.display())));
            }
            values[row * n_f..(row + 1) * n_f].copy_from_slice(&feats);
        }
        Self::new_dynamic(names, n_cells, n_intervals, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<&str> = match self.kind {
            FeatureKind::StaticSpatial => vec!["g"],
            FeatureKind::DynamicSpatiotemporal => vec!["g", "t"],
        };
        header.extend(self.feature_names.iter().map(String::as_str));
        writer.write_record(&header)?;
        let n_f = self.n_features();
        for row in 0..self.n_rows() {
            let mut fields = match self.kind {
                FeatureKind::StaticSpatial => vec![row.to_string()],
                FeatureKind::DynamicSpatiotemporal => {
                    vec![(row / self.n_intervals).to_string(), (row % self.n_intervals).to_string()]
                }
            };
            fields.extend(self.values[row * n_f..(row + 1) * n_f].iter().map(|v| v.to_string()));
            writer.write_record(&fields)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

type FeatureRows = (Vec<String>, Vec<(Vec<usize>, Vec<f64>)>);

fn read_feature_rows(path: &Path, n_keys: usize) -> Result<FeatureRows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let expected_keys = ["g", "t"];
    if headers.len() <= n_keys || headers.iter().take(n_keys).ne(expected_keys.iter().take(n_keys).copied()) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("expected header starting with {} followed by features", expected_keys[..n_keys].join(",")),
        });
    }
    let names: Vec<String> = headers.iter().skip(n_keys).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = || Error::Validation(format!("{}: malformed row {}", path.display(), i + 2));
        let keys = (0..n_keys)
            .map(|j| row[j].parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let feats = (n_keys..row.len())
            .map(|j| row[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        rows.push((keys, feats));
    }
    Ok((names, rows))
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.is_empty() || xs.len() != ys.len() {
        return 0.0;
    }
    let mean_x = xs.iter().copied().collect::<PairwiseSum>().total() / n;
    let mean_y = ys.iter().copied().collect::<PairwiseSum>().total() / n;
    let mut sxy = PairwiseSum::new();
    let mut sxx = PairwiseSum::new();
    let mut syy = PairwiseSum::new();
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let denom = (sxx.total() * syy.total()).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return 0.0;
    }
    (sxy.total() / denom).clamp(-1.0, 1.0)
}

/// Per-feature Pearson correlation against the full-fleet mean concentration.
///
/// Static features are paired with the per-cell mean pooled over all intervals,
/// dynamic features with the per-`(g, t)` mean. Only points with observed
/// concentration take part.
pub fn correlate_features(features: &FeatureTable, target: &ReadingAggregate) -> Result<Vec<f64>> {
    let n_points = features.n_cells * match features.kind {
        FeatureKind::StaticSpatial => target.n_points / features.n_cells.max(1),
        FeatureKind::DynamicSpatiotemporal => features.n_intervals,
    };
    if n_points != target.n_points {
        return Err(Error::Dimension {
            expected: n_points,
            actual: target.n_points,
        });
    }
    let all: Vec<usize> = (0..target.vehicle_ids.len()).collect();
    let (sums, counts) = target.subset_totals(&all);
    let target_means: Vec<Option<f64>> = match features.kind {
        FeatureKind::StaticSpatial => {
            let t_count = target.n_points / features.n_cells;
            (0..features.n_cells)
                .map(|g| {
                    let range = g * t_count..(g + 1) * t_count;
                    let c: u64 = counts[range.clone()].iter().sum();
                    let s: f64 = sums[range].iter().copied().collect::<PairwiseSum>().total();
                    (c > 0).then(|| s / c as f64)
                })
                .collect()
        }
        FeatureKind::DynamicSpatiotemporal => sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
    };
    correlate_with_means(features, &target_means)
}

/// Like [`correlate_features`] but against precomputed per-row target means.
pub fn correlate_with_means(features: &FeatureTable, target_means: &[Option<f64>]) -> Result<Vec<f64>> {
    if target_means.len() != features.n_rows() {
        return Err(Error::Dimension {
            expected: features.n_rows(),
            actual: target_means.len(),
        });
    }
    let observed: Vec<usize> = (0..target_means.len()).filter(|&r| target_means[r].is_some()).collect();
    if observed.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            found: observed.len(),
        });
    }
    let ys: Vec<f64> = observed.iter().map(|&r| target_means[r].unwrap()).collect();
    let n_f = features.n_features();
    Ok((0..n_f)
        .map(|k| {
            let xs: Vec<f64> = observed.iter().map(|&r| features.values[r * n_f + k]).collect();
            pearson(&xs, &ys)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    Uniform,
    SpatialOnly,
    TemporalOnly,
    Full,
}

impl WeightVariant {
    pub const ALL: [WeightVariant; 4] = [
        WeightVariant::Uniform,
        WeightVariant::SpatialOnly,
        WeightVariant::TemporalOnly,
        WeightVariant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightVariant::Uniform => "uniform",
            WeightVariant::SpatialOnly => "spatial_only",
            WeightVariant::TemporalOnly => "temporal_only",
            WeightVariant::Full => "full",
        }
    }
}

impl fmt::Display for WeightVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s || v.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown weight variant `{s}` (expected uniform, spatial_only, temporal_only or full)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    pub n_cells: usize,
    pub n_intervals: usize,
    pub w: Vec<f64>,
    pub variant: WeightVariant,
    pub epsilon_floor: f64,
}

impl WeightField {
    pub fn uniform(n_cells: usize, n_intervals: usize) -> Self {
        WeightField {
            n_cells,
            n_intervals,
            w: vec![1.0; n_cells * n_intervals],
            variant: WeightVariant::Uniform,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn n_points(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.n_cells * self.n_intervals {
            return Err(Error::Dimension {
                expected: self.n_cells * self.n_intervals,
                actual: self.w.len(),
            });
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 1.0) {
            return Err(Error::Validation(format!("epsilon_floor must lie in (0, 1), got {}", self.epsilon_floor)));
        }
        if let Some((k, w)) = self.w.iter().enumerate().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Validation(format!("weight {w} at point {k} outside [0, 1]")));
        }
        if let Some((k, w)) = self.w.iter().enumerate().find(|(_, &w)| w < self.epsilon_floor) {
            return Err(Error::Validation(format!(
                "weight {w} at point {k} below epsilon_floor {}",
                self.epsilon_floor
            )));
        }
        Ok(())
    }

    /// Writes `g,t,w` rows preceded by a `#` line recording the variant, floor and shape.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(
                out,
                "# variant={} epsilon_floor={} n_cells={} n_intervals={}",
                self.variant, self.epsilon_floor, self.n_cells, self.n_intervals
            )?;
            writeln!(out, "g,t,w")?;
            for (k, w) in self.w.iter().enumerate() {
                writeln!(out, "{},{},{}", k / self.n_intervals, k % self.n_intervals, w)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| schema("empty weight file".into()))?;
        let meta = header
            .strip_prefix('#')
            .ok_or_else(|| schema("first line must be `# variant=... epsilon_floor=...`".into()))?;
        let mut variant = None;
        let mut epsilon_floor = None;
        let mut n_cells = None;
        let mut n_intervals = None;
        for item in meta.split_whitespace() {
            let Some((key, value)) = item.split_once('=') else { continue };
            let bad = || schema(format!("invalid header value `{item}`"));
            match key {
                "variant" => variant = Some(value.parse::<WeightVariant>()?),
                "epsilon_floor" => epsilon_floor = Some(value.parse::<f64>().map_err(|_| bad())?),
                "n_cells" => n_cells = Some(value.parse::<usize>().map_err(|_| bad())?),
                "n_intervals" => n_intervals = Some(value.parse::<usize>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let (Some(variant), Some(epsilon_floor), Some(n_cells), Some(n_intervals)) =
            (variant, epsilon_floor, n_cells, n_intervals)
        else {
            return Err(schema("header must record variant, epsilon_floor, n_cells and n_intervals".into()));
        };
        match lines.next().transpose().map_err(|e| Error::io(path, e))? {
            Some(line) if line.trim() == "g,t,w" => {}
            _ => return Err(schema("second line must be `g,t,w`".into())),
        }

        let n_points = n_cells * n_intervals;
        let mut w = vec![f64::NAN; n_points];
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Validation(format!("{}: malformed row {}: `{line}`", path.display(), i + 3));
            let mut parts = line.split(',').map(str::trim);
            let g: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let t: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let value: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if g >= n_cells || t >= n_intervals {
                return Err(Error::Validation(format!("{}: cell ({g}, {t}) outside the grid", path.display())));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Validation(format!("weight {value} at g={g}, t={t} outside [0, 1]")));
            }
            let k = g * n_intervals + t;
            if !w[k].is_nan() {
                return Err(Error::Validation(format!("{}: repeated cell g={g}, t={t}", path.display())));
            }
            w[k] = value;
        }
        let gaps: Vec<usize> = (0..n_points).filter(|&k| w[k].is_nan()).collect();
        if let Some(&first) = gaps.first() {
            return Err(Error::MissingCells {
                count: gaps.len(),
                g: first / n_intervals,
                t: first % n_intervals,
            });
        }
        let field = WeightField {
            n_cells,
            n_intervals,
            w,
            variant,
            epsilon_floor,
        };
        field.validate()?;
        Ok(field)
    }
}

/// Min-max scales `values` to `[0, 1]`; a constant column maps to all zeros.
fn min_max(values: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    values
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// `sum_k |r_k| z_k(row)` over a feature table.
fn blended_score(table: &FeatureTable, correlations: &[f64]) -> Result<Vec<f64>> {
    if correlations.len() != table.n_features() {
        return Err(Error::Dimension {
            expected: table.n_features(),
            actual: correlations.len(),
        });
    }
    let mut score = vec![0.0; table.n_rows()];
    for (k, r) in correlations.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::Validation(format!("correlation for `{}` is not finite", table.feature_names[k])));
        }
        let z = min_max(table.column(k));
        for (s, z) in score.iter_mut().zip(z) {
            *s += r.abs() * z;
        }
    }
    Ok(score)
}

/// Builds a normalized weight field for the requested variant.
pub fn build_weight_field(
    static_features: &FeatureTable,
    dynamic_features: &FeatureTable,
    static_correlations: &[f64],
    dynamic_correlations: &[f64],
    variant: WeightVariant,
    epsilon_floor: f64,
) -> Result<WeightField> {
    if static_features.kind != FeatureKind::StaticSpatial || dynamic_features.kind != FeatureKind::DynamicSpatiotemporal {
        return Err(Error::Validation("expected one static and one dynamic feature table".into()));
    }
    if static_features.n_cells != dynamic_features.n_cells {
        return Err(Error::Dimension {
            expected: static_features.n_cells,
            actual: dynamic_features.n_cells,
        });
    }
    let spatial = blended_score(static_features, static_correlations)?;
    let temporal = blended_score(dynamic_features, dynamic_correlations)?;
    combine_scores(&spatial, &temporal, dynamic_features.n_intervals, variant, epsilon_floor)
}

/// Correlates both feature tables with the full-fleet readings of one pollutant and
/// builds the field for `variant`.
pub fn derive_weight_field(
    static_features: &FeatureTable,
    dynamic_features: &FeatureTable,
    target: &ReadingAggregate,
    variant: WeightVariant,
    epsilon_floor: f64,
) -> Result<WeightField> {
    let static_r = correlate_features(static_features, target)?;
    let dynamic_r = correlate_features(dynamic_features, target)?;
    build_weight_field(static_features, dynamic_features, &static_r, &dynamic_r, variant, epsilon_floor)
}

/// Combines a spatial score `s[g]` and a temporal score `d[g * T + t]` into a
/// normalized weight field.
pub fn combine_scores(
    spatial: &[f64],
    temporal: &[f64],
    n_intervals: usize,
    variant: WeightVariant,
    epsilon_floor: f64,
) -> Result<WeightField> {
    if !(epsilon_floor > 0.0 && epsilon_floor < 1.0) {
        return Err(Error::Validation(format!("epsilon_floor must lie in (0, 1), got {epsilon_floor}")));
    }
    let n_cells = spatial.len();
    if temporal.len() != n_cells * n_intervals {
        return Err(Error::Dimension {
            expected: n_cells * n_intervals,
            actual: temporal.len(),
        });
    }
    let mut field = WeightField::uniform(n_cells, n_intervals);
    field.epsilon_floor = epsilon_floor;
    field.variant = variant;
    if variant == WeightVariant::Uniform {
        return Ok(field);
    }

    let raw: Vec<f64> = (0..n_cells * n_intervals)
        .map(|k| {
            let g = k / n_intervals;
            match variant {
                WeightVariant::SpatialOnly => spatial[g],
                WeightVariant::TemporalOnly => temporal[k],
                WeightVariant::Full => spatial[g] * temporal[k],
                WeightVariant::Uniform => unreachable!(),
            }
        })
        .collect();

    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        if hi == 0.0 {
            warn!("{variant} weight field is identically zero, falling back to uniform weights");
        } else {
            warn!("{variant} weight field has no variation, using uniform weights");
        }
        return Ok(field);
    }
    let span = hi - lo;
    field.w = raw
        .into_iter()
        .map(|v| (epsilon_floor + (1.0 - epsilon_floor) * (v - lo) / span).clamp(epsilon_floor, 1.0))
        .collect();
    Ok(field)
}
