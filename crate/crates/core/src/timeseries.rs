//! Uniformly sampled scalar channels: CSV ingestion, resampling and slicing.
//!
//! Every downstream stage assumes a uniform grid, so irregular timestamps are
//! linearly interpolated at load time and non-finite values are rejected.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether timestamps are already uniform.
const UNIFORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    channel_name: String,
    start_time: f64,
    sample_rate: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        channel_name: impl Into<String>,
        start_time: f64,
        sample_rate: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::arg(format!("sample rate must be positive, got {sample_rate}")));
        }
        if !start_time.is_finite() {
            return Err(Error::arg("start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::data_at(i, "non-finite sample value"));
        }
        Ok(Self { channel_name: channel_name.into(), start_time, sample_rate, samples })
    }

    pub fn channel_name(&self) -> &str {
        &self.channel_name
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timestamp of sample `i`: `start_time + i / sample_rate`.
    pub fn timestamp(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    /// Length of the half-open span covered by the samples.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    /// Writes a two-column CSV (`time,<channel>`) that [`load_csv`] reads back exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "time,{}", self.channel_name)?;
            for (i, v) in self.samples.iter().enumerate() {
                writeln!(out, "{},{}", self.timestamp(i), v)?;
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

/// Which columns of a CSV file hold the time axis and the channel values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub time: String,
    pub value: String,
    pub delimiter: u8,
}

impl ColumnSpec {
    pub fn new(time: impl Into<String>, value: impl Into<String>) -> Self {
        Self { time: time.into(), value: value.into(), delimiter: b',' }
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }
}

/// Loads one channel from a CSV file with a header row.
pub fn load_csv(path: &Path, spec: &ColumnSpec) -> Result<TimeSeries> {
    let mut channels = load_csv_channels(path, &spec.time, &[spec.value.as_str()], spec.delimiter)?;
    Ok(channels.remove(0))
}

/// Loads several value columns sharing one time column; one [`TimeSeries`] per column.
pub fn load_csv_channels(
    path: &Path,
    time_column: &str,
    value_columns: &[&str],
    delimiter: u8,
) -> Result<Vec<TimeSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("column '{name}' not found in {}", path.display())))
    };
    let time_idx = find(time_column)?;
    let value_idx = value_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut times = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); value_columns.len()];
    for (n, record) in reader.records().enumerate() {
        // header is line 1
        let line = n + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(idx)
                .ok_or_else(|| Error::Format(format!("line {line}: missing field '{name}'")))?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::data_at(line, format!("'{raw}' in column '{name}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::data_at(line, format!("non-finite value in column '{name}'")));
            }
            Ok(v)
        };
        let t = field(time_idx, time_column)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::data_at(line, "time column is not strictly increasing"));
            }
        }
        times.push(t);
        for (k, &idx) in value_idx.iter().enumerate() {
            values[k].push(field(idx, value_columns[k])?);
        }
    }
    if times.len() < 2 {
        return Err(Error::data("at least two rows are needed to infer a sample rate"));
    }

    value_columns
        .iter()
        .zip(values)
        .map(|(name, vals)| uniform_from_points(name, &times, &vals))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Builds a uniform series from strictly increasing sample points.
///
/// Uniform input is taken verbatim. Otherwise the grid step is the smallest
/// observed spacing, snapped so the last timestamp lands on the grid, and the
/// values are linearly interpolated onto it.
fn uniform_from_points(name: &str, times: &[f64], values: &[f64]) -> Result<TimeSeries> {
    let span = times[times.len() - 1] - times[0];
    let mean_step = span / (times.len() - 1) as f64;
    let uniform = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - mean_step).abs() <= UNIFORM_TOLERANCE * mean_step);
    if uniform {
        let rate = (times.len() - 1) as f64 / span;
        return TimeSeries::new(name, times[0], rate, values.to_vec());
    }

    let min_step = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let intervals = (span / min_step).round().max(1.0) as usize;
    let rate = intervals as f64 / span;
    let samples = (0..=intervals)
        .map(|i| interpolate_at(times, values, times[0] + i as f64 / rate))
        .collect();
    TimeSeries::new(name, times[0], rate, samples)
}

/// Piecewise-linear interpolation, holding the end values outside the support.
fn interpolate_at(times: &[f64], values: &[f64], t: f64) -> f64 {
    let last = times.len() - 1;
    if t <= times[0] {
        return values[0];
    }
    if t >= times[last] {
        return values[last];
    }
    let hi = times.partition_point(|&x| x <= t);
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    let v = values[lo] + w * (values[hi] - values[lo]);
    // keep rounding from leaving the bracket
    v.clamp(values[lo].min(values[hi]), values[lo].max(values[hi]))
}

/// Changes the sample rate, keeping `start_time` and the covered duration.
///
/// Upsampling interpolates linearly between neighbouring samples; downsampling
/// takes the nearest preceding source sample.
pub fn resample(ts: &TimeSeries, target_rate: f64) -> Result<TimeSeries> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::arg(format!("target rate must be positive, got {target_rate}")));
    }
    if ts.is_empty() {
        return Err(Error::arg("cannot resample an empty series"));
    }
    if target_rate == ts.sample_rate {
        return Ok(ts.clone());
    }
    let src = ts.samples();
    let ratio = ts.sample_rate / target_rate;
    let count = ((src.len() as f64 / ratio) + 1e-9).floor().max(1.0) as usize;
    let last = src.len() - 1;
    let samples = if target_rate > ts.sample_rate {
        (0..count)
            .map(|j| {
                let pos = j as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let w = pos - lo as f64;
                let v = src[lo] + w * (src[hi] - src[lo]);
                v.clamp(src[lo].min(src[hi]), src[lo].max(src[hi]))
            })
            .collect()
    } else {
        (0..count)
            .map(|j| src[((j as f64 * ratio + 1e-9).floor() as usize).min(last)])
            .collect()
    };
    TimeSeries::new(ts.channel_name.clone(), ts.start_time, target_rate, samples)
}

/// Cuts out `[t0, t1)` on the original grid; the new start is the first grid point `>= t0`.
pub fn slice(ts: &TimeSeries, t0: f64, t1: f64) -> Result<TimeSeries> {
    let eps = 1e-9;
    if !(t0 < t1) {
        return Err(Error::arg(format!("slice bounds must satisfy t0 < t1, got [{t0}, {t1})")));
    }
    if t0 < ts.start_time - eps || t1 > ts.end_time() + eps {
        return Err(Error::arg(format!(
            "slice [{t0}, {t1}) outside series span [{}, {})",
            ts.start_time,
            ts.end_time()
        )));
    }
    let index = |t: f64| (((t - ts.start_time) * ts.sample_rate - eps).ceil().max(0.0) as usize).min(ts.len());
    let (i0, i1) = (index(t0), index(t1));
    if i0 >= i1 {
        return Err(Error::arg(format!("slice [{t0}, {t1}) contains no samples")));
    }
    TimeSeries::new(
        ts.channel_name.clone(),
        ts.timestamp(i0),
        ts.sample_rate,
        ts.samples[i0..i1].to_vec(),
    )
}
