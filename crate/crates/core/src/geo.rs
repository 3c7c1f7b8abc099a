//! Event catalog ingestion, unit-square mapping and grid binning.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of an earthquake-style catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub longitude: f64,
    pub latitude: f64,
    pub magnitude: Option<f64>,
    pub timestamp: Option<String>,
}

/// Header names for the columns the parser understands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub longitude: String,
    pub latitude: String,
    pub magnitude: Option<String>,
    pub timestamp: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            longitude: "longitude".into(),
            latitude: "latitude".into(),
            magnitude: Some("mag".into()),
            timestamp: Some("time".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCatalog {
    pub events: Vec<RawEvent>,
    pub skipped: Vec<SkippedRow>,
}

/// Parses a header-driven CSV catalog.
///
/// Rows with missing, unparseable or out-of-range coordinates are skipped and
/// reported. A file with no header at all yields an empty catalog; a header
/// lacking the longitude or latitude column is a configuration error.
pub fn parse_usgs_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<ParsedCatalog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(ParsedCatalog::default());
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let required = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing mandatory column `{name}`")))
    };
    let lon_col = required(&columns.longitude)?;
    let lat_col = required(&columns.latitude)?;
    let mag_col = columns.magnitude.as_deref().and_then(|m| index.get(m).copied());
    let time_col = columns.timestamp.as_deref().and_then(|t| index.get(t).copied());

    let mut out = ParsedCatalog::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.skipped.push(SkippedRow { row, reason: e.to_string() });
                continue;
            }
        };
        let coord = |col: usize, name: &str, bound: f64| -> std::result::Result<f64, String> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| format!("unparseable {name} `{raw}`"))?;
            if !v.is_finite() || v.abs() > bound {
                return Err(format!("{name} {v} out of range"));
            }
            Ok(v)
        };
        let parsed = coord(lon_col, "longitude", 180.0)
            .and_then(|lon| coord(lat_col, "latitude", 90.0).map(|lat| (lon, lat)));
        let (longitude, latitude) = match parsed {
            Ok(p) => p,
            Err(reason) => {
                out.skipped.push(SkippedRow { row, reason });
                continue;
            }
        };
        let magnitude = mag_col
            .and_then(|c| record.get(c))
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|m| m.is_finite());
        let timestamp = time_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_owned);
        out.events.push(RawEvent { longitude, latitude, magnitude, timestamp });
    }
    Ok(out)
}

/// Keeps events whose magnitude is at least `min`. Events without a
/// magnitude are dropped.
pub fn filter_min_magnitude(events: Vec<RawEvent>, min: f64) -> Vec<RawEvent> {
    events
        .into_iter()
        .filter(|e| e.magnitude.is_some_and(|m| m >= min))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrameKind {
    /// Fixed ±180° / ±90° rectangle.
    #[default]
    Global,
    /// Bounding box of the data.
    BoundingBox,
}

/// Affine map from (lon, lat) to the unit square: `x = (lon - lon_offset) / lon_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceFrame {
    pub lon_offset: f64,
    pub lon_scale: f64,
    pub lat_offset: f64,
    pub lat_scale: f64,
}

impl SourceFrame {
    pub const GLOBAL: SourceFrame = SourceFrame {
        lon_offset: -180.0,
        lon_scale: 360.0,
        lat_offset: -90.0,
        lat_scale: 180.0,
    };

    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.lon_offset) / self.lon_scale,
            (lat - self.lat_offset) / self.lat_scale,
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.lon_scale + self.lon_offset,
            y * self.lat_scale + self.lat_offset,
        )
    }
}

/// Event locations in `[0,1]²` together with the transform that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub points: Vec<(f64, f64)>,
    pub frame: SourceFrame,
}

impl PointPattern {
    /// Builds a pattern from points already in the unit square.
    pub fn from_unit_points(points: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y))
        {
            return Err(Error::Domain(format!("point {p:?} outside the unit square")));
        }
        Ok(Self {
            points,
            frame: SourceFrame { lon_offset: 0.0, lon_scale: 1.0, lat_offset: 0.0, lat_scale: 1.0 },
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn to_unit_square(events: &[RawEvent], kind: FrameKind) -> PointPattern {
    let frame = match kind {
        FrameKind::Global => SourceFrame::GLOBAL,
        FrameKind::BoundingBox => bounding_frame(events),
    };
    let points = events
        .iter()
        .map(|e| {
            let (x, y) = frame.forward(e.longitude, e.latitude);
            (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
        })
        .collect();
    PointPattern { points, frame }
}

fn bounding_frame(events: &[RawEvent]) -> SourceFrame {
    if events.is_empty() {
        return SourceFrame::GLOBAL;
    }
    let (mut lon_lo, mut lon_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in events {
        lon_lo = lon_lo.min(e.longitude);
        lon_hi = lon_hi.max(e.longitude);
        lat_lo = lat_lo.min(e.latitude);
        lat_hi = lat_hi.max(e.latitude);
    }
    // A degenerate extent keeps unit scale so the map stays invertible.
    let scale = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    SourceFrame {
        lon_offset: lon_lo,
        lon_scale: scale(lon_lo, lon_hi),
        lat_offset: lat_lo,
        lat_scale: scale(lat_lo, lat_hi),
    }
}

/// Per-cell event counts over an `r × r` partition of the unit square.
///
/// Cell `(row, col)` has index `row * r + col`, with `row = floor(y r)` and
/// `col = floor(x r)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCounts {
    resolution: usize,
    counts: Vec<u64>,
}

impl GridCounts {
    pub fn new(resolution: usize, counts: Vec<u64>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Domain("grid resolution must be at least 1".into()));
        }
        if counts.len() != resolution * resolution {
            return Err(Error::Domain(format!(
                "expected {} counts for resolution {resolution}, got {}",
                resolution * resolution,
                counts.len()
            )));
        }
        Ok(Self { resolution, counts })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of cells `n = r²`.
    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn cell_area(&self) -> f64 {
        1.0 / self.counts.len() as f64
    }

    /// Cell containing `(x, y)`. Cells are half-open except the last row and
    /// column, which also take coordinates equal to 1.
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        cell_index(self.resolution, x, y)
    }

    /// Sums `factor × factor` blocks into a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<GridCounts> {
        if factor == 0 || !self.resolution.is_multiple_of(factor) {
            return Err(Error::Domain(format!(
                "factor {factor} does not divide resolution {}",
                self.resolution
            )));
        }
        let r = self.resolution / factor;
        let mut counts = vec![0; r * r];
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                counts[(row / factor) * r + col / factor] += self.counts[row * self.resolution + col];
            }
        }
        GridCounts::new(r, counts)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid(w, self.resolution, &self.counts)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<GridCounts> {
        let (resolution, counts) = read_grid(r)?;
        GridCounts::new(resolution, counts)
    }
}

pub(crate) fn cell_index(resolution: usize, x: f64, y: f64) -> usize {
    let idx = |v: f64| ((v * resolution as f64).floor().max(0.0) as usize).min(resolution - 1);
    idx(y) * resolution + idx(x)
}

pub fn bin_counts(pattern: &PointPattern, resolution: usize) -> Result<GridCounts> {
    if resolution == 0 {
        return Err(Error::Domain("grid resolution must be at least 1".into()));
    }
    let mut counts = vec![0u64; resolution * resolution];
    for &(x, y) in &pattern.points {
        counts[cell_index(resolution, x, y)] += 1;
    }
    GridCounts::new(resolution, counts)
}

/// Writes a row-major grid: `resolution,r` followed by `r` lines of `r`
/// comma-separated values, row 0 first.
pub fn write_grid<W: Write, T: Display>(mut w: W, resolution: usize, values: &[T]) -> Result<()> {
    if values.len() != resolution * resolution {
        return Err(Error::Domain(format!(
            "grid of resolution {resolution} needs {} values, got {}",
            resolution * resolution,
            values.len()
        )));
    }
    writeln!(w, "resolution,{resolution}")?;
    for row in values.chunks(resolution) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_grid<R: Read, T: FromStr>(r: R) -> Result<(usize, Vec<T>)> {
    let mut lines = std::io::BufReader::new(r).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Parse("empty grid file".into()))?;
    let resolution: usize = header
        .trim()
        .strip_prefix("resolution,")
        .and_then(|s| s.trim().parse().ok())
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::Parse(format!("bad grid header `{header}`")))?;
    let mut values = Vec::with_capacity(resolution * resolution);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let before = values.len();
        for field in line.split(',') {
            let v = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value `{}`", i + 2, field.trim())))?;
            values.push(v);
        }
        if values.len() - before != resolution {
            return Err(Error::Parse(format!(
                "line {}: expected {resolution} values, got {}",
                i + 2,
                values.len() - before
            )));
        }
    }
    if rows != resolution {
        return Err(Error::Parse(format!("expected {resolution} rows, got {rows}")));
    }
    Ok((resolution, values))
}

/// Writes points as `x,y` CSV with a header row.
pub fn write_points_csv<W: Write>(mut w: W, pattern: &PointPattern) -> Result<()> {
    writeln!(w, "x,y")?;
    for (x, y) in &pattern.points {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

/// Reads `x,y` CSV points in the unit square.
pub fn read_points_csv<R: Read>(r: R) -> Result<PointPattern> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad point on row {}", i + 1)))
        };
        points.push((field(0)?, field(1)?));
    }
    PointPattern::from_unit_points(points)
}
