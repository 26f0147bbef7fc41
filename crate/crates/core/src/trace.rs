//! Per-minute request workloads: CSV ingestion, synthetic generation and
//! train/validation/test windowing.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::forecaster::{SeasonalityParams, TrendParams};
use crate::rng::{stream_rng, TRACE_STREAM};

/// Canonical trace resolution in seconds.
pub const CANONICAL_RESOLUTION_S: u32 = 60;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace is empty")]
    Empty,
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("window of {requested} intervals exceeds trace length {available}")]
    Range { requested: usize, available: usize },
}

/// Request counts per interval starting at `start_epoch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    start_epoch: i64,
    resolution: u32,
    counts: Vec<u64>,
}

impl WorkloadTrace {
    pub fn new(start_epoch: i64, resolution: u32, counts: Vec<u64>) -> Result<Self, TraceError> {
        if counts.is_empty() {
            return Err(TraceError::Empty);
        }
        if resolution == 0 {
            return Err(TraceError::Invalid("resolution must be positive".into()));
        }
        Ok(Self {
            start_epoch,
            resolution,
            counts,
        })
    }

    /// Trace at the canonical resolution starting at epoch 0.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, TraceError> {
        Self::new(0, CANONICAL_RESOLUTION_S, counts)
    }

    pub fn start_epoch(&self) -> i64 {
        self.start_epoch
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start_epoch + i as i64 * self.resolution as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Column names used when reading a trace CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSchema {
    pub timestamp_column: String,
    pub count_column: String,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            count_column: "count".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    /// Interval indices that had no rows and were filled with zero.
    pub gaps: Vec<usize>,
    /// Number of rows that were summed into an already populated minute.
    pub merged_rows: usize,
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Load a trace CSV, bucketing rows into minutes. Rows in the same minute are
/// summed; minutes without rows are filled with zero and listed in the report.
pub fn load_trace(path: &Path, schema: &TraceSchema) -> Result<(WorkloadTrace, LoadReport), TraceError> {
    read_trace(std::fs::File::open(path)?, schema)
}

pub fn read_trace<R: Read>(reader: R, schema: &TraceSchema) -> Result<(WorkloadTrace, LoadReport), TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| TraceError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| TraceError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let ts_col = column(&schema.timestamp_column)?;
    let count_col = column(&schema.count_column)?;

    let res = CANONICAL_RESOLUTION_S as i64;
    let mut rows: Vec<(i64, u64)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TraceError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ts = record
            .get(ts_col)
            .and_then(parse_timestamp)
            .ok_or_else(|| TraceError::Parse {
                line,
                message: format!("unparseable timestamp {:?}", record.get(ts_col).unwrap_or("")),
            })?;
        let count = record
            .get(count_col)
            .and_then(|c| c.parse::<u64>().ok())
            .ok_or_else(|| TraceError::Parse {
                line,
                message: format!(
                    "count must be a non-negative integer, got {:?}",
                    record.get(count_col).unwrap_or("")
                ),
            })?;
        rows.push((ts.div_euclid(res), count));
    }
    if rows.is_empty() {
        return Err(TraceError::Empty);
    }
    rows.sort_by_key(|&(minute, _)| minute);
    let first = rows[0].0;
    let last = rows[rows.len() - 1].0;
    let mut counts = vec![0u64; (last - first + 1) as usize];
    let mut seen = vec![false; counts.len()];
    let mut report = LoadReport {
        rows: rows.len(),
        ..LoadReport::default()
    };
    for (minute, count) in rows {
        let idx = (minute - first) as usize;
        if seen[idx] {
            report.merged_rows += 1;
        }
        seen[idx] = true;
        counts[idx] += count;
    }
    report.gaps = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(i, _)| i)
        .collect();
    let trace = WorkloadTrace::new(first * res, CANONICAL_RESOLUTION_S, counts)?;
    Ok((trace, report))
}

/// Write a trace as `timestamp,count` with epoch-second timestamps.
pub fn write_trace(trace: &WorkloadTrace, path: &Path) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    write_trace_to(trace, std::io::BufWriter::new(file))
}

pub fn write_trace_to<W: Write>(trace: &WorkloadTrace, mut out: W) -> Result<(), TraceError> {
    writeln!(out, "timestamp,count")?;
    for (i, c) in trace.counts.iter().enumerate() {
        writeln!(out, "{},{}", trace.timestamp(i), c)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelShift {
    /// First interval affected.
    pub at: usize,
    pub delta: f64,
}

/// Parameters of the synthetic workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub base_level: f64,
    #[serde(default)]
    pub trend: Option<TrendParams>,
    #[serde(default)]
    pub harmonics: Vec<SeasonalityParams>,
    #[serde(default)]
    pub level_shifts: Vec<LevelShift>,
    #[serde(default)]
    pub noise_sigma: f64,
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_epoch: i64,
}

impl SyntheticSpec {
    pub fn constant(level: f64, length: usize) -> Self {
        Self {
            base_level: level,
            trend: None,
            harmonics: Vec::new(),
            level_shifts: Vec::new(),
            noise_sigma: 0.0,
            length,
            seed: 0,
            start_epoch: 0,
        }
    }

    fn validate(&self) -> Result<(), TraceError> {
        if self.length == 0 {
            return Err(TraceError::InvalidSpec("length must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(TraceError::InvalidSpec("noise_sigma must be a finite value >= 0".into()));
        }
        if let Some(t) = &self.trend {
            t.validate().map_err(|e| TraceError::InvalidSpec(e.to_string()))?;
        }
        for h in &self.harmonics {
            h.validate().map_err(|e| TraceError::InvalidSpec(e.to_string()))?;
        }
        Ok(())
    }
}

/// Deterministic part of the generator (before noise, rounding and clamping).
pub fn synthetic_signal(spec: &SyntheticSpec) -> Result<Vec<f64>, TraceError> {
    spec.validate()?;
    Ok((0..spec.length)
        .map(|i| {
            let t = i as f64;
            let mut v = spec.base_level;
            if let Some(trend) = &spec.trend {
                v += trend.eval(t);
            }
            v += spec.harmonics.iter().map(|h| h.eval(t)).sum::<f64>();
            v += spec
                .level_shifts
                .iter()
                .filter(|s| i >= s.at)
                .map(|s| s.delta)
                .sum::<f64>();
            v
        })
        .collect())
}

/// `counts[i] = max(0, round(signal(i) + noise_i))` with Gaussian noise drawn
/// from a stream fixed by `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<WorkloadTrace, TraceError> {
    let signal = synthetic_signal(spec)?;
    let mut rng = stream_rng(spec.seed, TRACE_STREAM);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| TraceError::InvalidSpec(e.to_string()))?;
    let counts = signal
        .into_iter()
        .map(|v| {
            let eps = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (v + eps).round().max(0.0) as u64
        })
        .collect();
    WorkloadTrace::new(spec.start_epoch, CANONICAL_RESOLUTION_S, counts)
}

/// Index arithmetic over a trace: `[offset, offset+W)` train, then validation,
/// then test.
#[derive(Debug, Clone, Copy)]
pub struct TraceWindow<'a> {
    trace: &'a WorkloadTrace,
    offset: usize,
    train_len: usize,
    validation_len: usize,
    test_len: usize,
}

pub fn split(
    trace: &WorkloadTrace,
    train_len: usize,
    validation_len: usize,
    test_len: usize,
) -> Result<TraceWindow<'_>, TraceError> {
    split_at(trace, 0, train_len, validation_len, test_len)
}

pub fn split_at(
    trace: &WorkloadTrace,
    offset: usize,
    train_len: usize,
    validation_len: usize,
    test_len: usize,
) -> Result<TraceWindow<'_>, TraceError> {
    if train_len == 0 {
        return Err(TraceError::Invalid("training window must be positive".into()));
    }
    let requested = offset + train_len + validation_len + test_len;
    if requested > trace.len() {
        return Err(TraceError::Range {
            requested,
            available: trace.len(),
        });
    }
    Ok(TraceWindow {
        trace,
        offset,
        train_len,
        validation_len,
        test_len,
    })
}

impl<'a> TraceWindow<'a> {
    pub fn trace(&self) -> &'a WorkloadTrace {
        self.trace
    }

    pub fn train_range(&self) -> Range<usize> {
        self.offset..self.offset + self.train_len
    }

    pub fn validation_range(&self) -> Range<usize> {
        let s = self.train_range().end;
        s..s + self.validation_len
    }

    pub fn test_range(&self) -> Range<usize> {
        let s = self.validation_range().end;
        s..s + self.test_len
    }

    pub fn unused(&self) -> usize {
        self.trace.len() - self.test_range().end
    }

    pub fn train_values(&self) -> Vec<f64> {
        self.trace.counts[self.train_range()].iter().map(|&c| c as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(text: &str) -> Result<(WorkloadTrace, LoadReport), TraceError> {
        read_trace(text.as_bytes(), &TraceSchema::default())
    }

    #[test]
    fn direct_mapping() {
        let (t, r) = load("timestamp,count\n0,5\n60,7\n120,9\n").unwrap();
        assert_eq!(t.counts(), &[5, 7, 9]);
        assert!(r.gaps.is_empty());
    }

    #[test]
    fn gaps_are_zero_filled_and_flagged() {
        let (t, r) = load("timestamp,count\n0,4\n120,6\n").unwrap();
        assert_eq!(t.counts(), &[4, 0, 6]);
        assert_eq!(r.gaps, vec![1]);
    }

    #[test]
    fn same_minute_rows_are_summed() {
        let (t, r) = load("timestamp,count\n0,3\n30,4\n").unwrap();
        assert_eq!(t.counts(), &[7]);
        assert_eq!(r.merged_rows, 1);
    }

    #[test]
    fn unsorted_rows_and_iso_timestamps() {
        let text = "timestamp,count\n2024-01-01T00:02:00Z,2\n2024-01-01 00:00:10,1\n2024-01-01T00:01:00,3\n";
        let (t, _) = load(text).unwrap();
        assert_eq!(t.counts(), &[1, 3, 2]);
        assert_eq!(t.start_epoch(), 1_704_067_200);
    }

    #[test]
    fn custom_schema() {
        let schema = TraceSchema {
            timestamp_column: "ts".into(),
            count_column: "requests".into(),
        };
        let (t, _) = read_trace("requests,ts\n9,0\n".as_bytes(), &schema).unwrap();
        assert_eq!(t.counts(), &[9]);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        match load("timestamp,count\n0,5\n60,-3\n") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match load("timestamp,count\nyesterday,5\n") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(load("timestamp,count\n"), Err(TraceError::Empty)));
        assert!(matches!(load(""), Err(TraceError::Empty) | Err(TraceError::Parse { .. })));
    }

    #[test]
    fn degenerate_generator() {
        let t = generate_synthetic(&SyntheticSpec::constant(100.0, 50)).unwrap();
        assert!(t.counts().iter().all(|&c| c == 100));
    }

    #[test]
    fn daily_harmonic_oscillates() {
        let mut spec = SyntheticSpec::constant(100.0, 2880);
        spec.harmonics.push(SeasonalityParams {
            period: 1440.0,
            order: 1,
            a: vec![0.0, 50.0],
            b: vec![0.0],
        });
        let t = generate_synthetic(&spec).unwrap();
        let c = t.counts();
        assert!(c.iter().all(|&v| (50..=150).contains(&v)));
        assert_eq!(c[0], 150);
        assert_eq!(c[720], 50);
        assert_eq!(&c[..1440], &c[1440..]);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let mut spec = SyntheticSpec::constant(100.0, 500);
        spec.noise_sigma = 10.0;
        spec.seed = 7;
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 8;
        assert_ne!(a, generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec::constant(1.0, 10);
        spec.harmonics.push(SeasonalityParams::zeros(0.0, 1));
        assert!(matches!(generate_synthetic(&spec), Err(TraceError::InvalidSpec(_))));
        let spec = SyntheticSpec::constant(1.0, 0);
        assert!(matches!(generate_synthetic(&spec), Err(TraceError::InvalidSpec(_))));
    }

    #[test]
    fn split_arithmetic() {
        let t = WorkloadTrace::from_counts(vec![1; 10_000]).unwrap();
        let w = split(&t, 6000, 500, 2500).unwrap();
        assert_eq!(w.train_range(), 0..6000);
        assert_eq!(w.validation_range(), 6000..6500);
        assert_eq!(w.test_range(), 6500..9000);
        assert_eq!(w.unused(), 1000);

        let t = WorkloadTrace::from_counts(vec![1; 100]).unwrap();
        assert!(split(&t, 90, 5, 5).is_ok());
        assert!(matches!(split(&t, 90, 10, 10), Err(TraceError::Range { .. })));
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(counts in prop::collection::vec(0u64..10_000, 1..200), start in 0i64..1_000_000) {
            let trace = WorkloadTrace::new(start * 60, 60, counts).unwrap();
            let mut buf = Vec::new();
            write_trace_to(&trace, &mut buf).unwrap();
            let (back, report) = read_trace(buf.as_slice(), &TraceSchema::default()).unwrap();
            prop_assert_eq!(back, trace);
            prop_assert!(report.gaps.is_empty());
        }

        #[test]
        fn gap_filling_preserves_totals(rows in prop::collection::vec((0i64..500, 0u64..100), 1..60)) {
            let mut text = String::from("timestamp,count\n");
            for (m, c) in &rows {
                text.push_str(&format!("{},{}\n", m * 60 + 7, c));
            }
            let (trace, _) = read_trace(text.as_bytes(), &TraceSchema::default()).unwrap();
            prop_assert_eq!(trace.total(), rows.iter().map(|r| r.1).sum::<u64>());
        }
    }
}
