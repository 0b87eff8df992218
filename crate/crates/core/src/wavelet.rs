//! Continuous wavelet transform with a Gabor base wavelet.
//!
//! Coefficients follow
//!
//! ```text
//! W(a, b) = 1/sqrt(a) * integral f(t) * conj(psi((t - b) / a)) dt
//! psi(t)  = exp(i * omega0 * t) * exp(-t^2 / 2)
//! ```
//!
//! discretised on the sample grid with the signal extended by zeros. Two
//! routes are provided: [`cwt_fft`] (per-row FFT convolution, the production
//! path) and [`cwt_direct`] (quadratic direct summation, used as an oracle).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bandfilter::FilterBand;
use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

pub const DEFAULT_F_MIN: f64 = 0.0272;
pub const DEFAULT_F_MAX: f64 = 6.951;
pub const DEFAULT_VOICES_PER_OCTAVE: u32 = 12;
pub const DEFAULT_OMEGA0: f64 = 6.0;

/// Kernel taps are dropped once the Gaussian envelope falls below this.
const ENVELOPE_FLOOR: f64 = 1e-12;

/// Cone-of-influence half-width in units of the scale (envelope e-folding x4).
const COI_FACTOR: f64 = 4.0;

/// The Gabor base wavelet `exp(i*omega0*t) * exp(-t^2/2)`.
#[inline]
pub fn gabor(t: f64, omega0: f64) -> Complex64 {
    Complex64::from_polar((-0.5 * t * t).exp(), omega0 * t)
}

/// Scale/frequency pair for one scalogram row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    /// Wavelet scale `a` in seconds.
    pub scale: f64,
    /// Center frequency `omega0 / (2*pi*a)` in Hz.
    pub frequency: f64,
}

/// Log-spaced frequency axis, highest frequency first.
///
/// Both endpoints are pinned exactly; the step ratio is
/// `(f_max/f_min)^(1/(rows-1))`, which equals `2^(1/voices)` whenever the
/// range spans a whole number of voice steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    f_min: f64,
    f_max: f64,
    voices_per_octave: u32,
    omega0: f64,
    rows: Vec<ScaleRow>,
}

impl ScaleGrid {
    /// Grid over `[f_min, f_max]` with roughly `voices_per_octave` rows per octave.
    pub fn new(f_min: f64, f_max: f64, voices_per_octave: u32, omega0: f64) -> Result<Self> {
        validate_range(f_min, f_max, omega0)?;
        if voices_per_octave == 0 {
            return Err(Error::arg("voices_per_octave must be at least 1"));
        }
        let octaves = (f_max / f_min).log2();
        let steps = ((octaves * voices_per_octave as f64).round() as usize).max(1);
        Ok(Self::build(f_min, f_max, voices_per_octave, omega0, steps + 1))
    }

    /// Grid with an explicit row count, as recovered from a coefficient dump.
    pub fn with_rows(f_min: f64, f_max: f64, rows: usize, omega0: f64) -> Result<Self> {
        validate_range(f_min, f_max, omega0)?;
        if rows < 2 {
            return Err(Error::arg("a scale grid needs at least two rows"));
        }
        let octaves = (f_max / f_min).log2();
        let voices = (((rows - 1) as f64 / octaves).round() as u32).max(1);
        Ok(Self::build(f_min, f_max, voices, omega0, rows))
    }

    fn build(f_min: f64, f_max: f64, voices_per_octave: u32, omega0: f64, count: usize) -> Self {
        let steps = (count - 1) as f64;
        let rows = (0..count)
            .map(|r| {
                let frequency = if r == 0 {
                    f_max
                } else if r == count - 1 {
                    f_min
                } else {
                    f_max * (f_min / f_max).powf(r as f64 / steps)
                };
                ScaleRow { scale: omega0 / (2.0 * PI * frequency), frequency }
            })
            .collect();
        Self { f_min, f_max, voices_per_octave, omega0, rows }
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn voices_per_octave(&self) -> u32 {
        self.voices_per_octave
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn rows(&self) -> &[ScaleRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn frequency(&self, row: usize) -> f64 {
        self.rows[row].frequency
    }

    pub fn scale(&self, row: usize) -> f64 {
        self.rows[row].scale
    }

    /// Constant ratio between adjacent row frequencies.
    pub fn ratio(&self) -> f64 {
        (self.f_max / self.f_min).powf(1.0 / (self.rows.len() - 1) as f64)
    }

    /// Row whose center frequency is closest to `f` on a log axis.
    pub fn nearest_row(&self, f: f64) -> usize {
        let target = f.ln();
        let mut best = 0;
        for (r, row) in self.rows.iter().enumerate() {
            if (row.frequency.ln() - target).abs() < (self.rows[best].frequency.ln() - target).abs() {
                best = r;
            }
        }
        best
    }
}

fn validate_range(f_min: f64, f_max: f64, omega0: f64) -> Result<()> {
    if !(f_min > 0.0 && f_min < f_max && f_max.is_finite()) {
        return Err(Error::arg(format!("frequency range must satisfy 0 < f_min < f_max, got [{f_min}, {f_max}]")));
    }
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(Error::arg(format!("omega0 must be positive, got {omega0}")));
    }
    Ok(())
}

/// Builds the default-style grid; thin wrapper over [`ScaleGrid::new`].
pub fn build_scale_grid(f_min: f64, f_max: f64, voices_per_octave: u32, omega0: f64) -> Result<ScaleGrid> {
    ScaleGrid::new(f_min, f_max, voices_per_octave, omega0)
}

/// CWT result on a (scale row x sample column) lattice.
///
/// Row 0 is the highest frequency. Column `c` sits at `time_origin + c / sample_rate`.
/// Grids read back from a magnitude-only dump carry no complex coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramGrid {
    grid: ScaleGrid,
    cols: usize,
    coefficients: Option<Vec<Complex64>>,
    magnitudes: Vec<f64>,
    time_origin: f64,
    sample_rate: f64,
    cone_of_influence: Vec<usize>,
    band: Option<FilterBand>,
}

impl ScalogramGrid {
    fn from_coefficients(grid: ScaleGrid, cols: usize, coefficients: Vec<Complex64>, time_origin: f64, sample_rate: f64) -> Self {
        let magnitudes = coefficients.iter().map(|z| z.norm()).collect();
        let cone_of_influence = cone_of_influence(&grid, sample_rate);
        Self {
            grid,
            cols,
            coefficients: Some(coefficients),
            magnitudes,
            time_origin,
            sample_rate,
            cone_of_influence,
            band: None,
        }
    }

    /// Assembles a magnitude-only grid (no complex coefficients).
    pub fn from_magnitudes(
        grid: ScaleGrid,
        cols: usize,
        magnitudes: Vec<f64>,
        time_origin: f64,
        sample_rate: f64,
        band: Option<FilterBand>,
    ) -> Result<Self> {
        if magnitudes.len() != grid.len() * cols {
            return Err(Error::arg(format!(
                "magnitude buffer has {} cells, expected {} x {cols}",
                magnitudes.len(),
                grid.len()
            )));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::arg("sample rate must be positive"));
        }
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::data("magnitudes must be finite and non-negative"));
        }
        let cone_of_influence = cone_of_influence(&grid, sample_rate);
        Ok(Self { grid, cols, coefficients: None, magnitudes, time_origin, sample_rate, cone_of_influence, band })
    }

    pub fn scale_grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn time_origin(&self) -> f64 {
        self.time_origin
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Time covered by the columns, `cols / sample_rate`.
    pub fn duration(&self) -> f64 {
        self.cols as f64 / self.sample_rate
    }

    pub fn column_time(&self, col: usize) -> f64 {
        self.time_origin + col as f64 / self.sample_rate
    }

    pub fn band(&self) -> Option<FilterBand> {
        self.band
    }

    pub fn has_coefficients(&self) -> bool {
        self.coefficients.is_some()
    }

    pub fn coefficient(&self, row: usize, col: usize) -> Option<Complex64> {
        self.coefficients.as_ref().map(|c| c[row * self.cols + col])
    }

    pub fn coefficient_row(&self, row: usize) -> Option<&[Complex64]> {
        self.coefficients.as_ref().map(|c| &c[row * self.cols..(row + 1) * self.cols])
    }

    pub fn magnitude(&self, row: usize, col: usize) -> f64 {
        self.magnitudes[row * self.cols + col]
    }

    pub fn magnitude_row(&self, row: usize) -> &[f64] {
        &self.magnitudes[row * self.cols..(row + 1) * self.cols]
    }

    /// Row-major magnitude buffer.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Per-row half-width (in samples) of the edge region contaminated by zero padding.
    pub fn cone_of_influence(&self) -> &[usize] {
        &self.cone_of_influence
    }

    /// True when column `col` of `row` is farther than the cone half-width from both edges.
    pub fn is_interior(&self, row: usize, col: usize) -> bool {
        let coi = self.cone_of_influence[row];
        col >= coi && col + coi < self.cols
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn with_filtered(&self, magnitudes: Vec<f64>, band: FilterBand) -> Self {
        debug_assert_eq!(magnitudes.len(), self.magnitudes.len());
        Self { magnitudes, band: Some(band), ..self.clone() }
    }

    /// Columns `[c0, c1)` as an independent grid with a shifted time origin.
    pub(crate) fn sub_columns(&self, c0: usize, c1: usize) -> Self {
        let width = c1 - c0;
        let rows = self.rows();
        let take_rows = |buf: &[f64]| {
            let mut out = Vec::with_capacity(rows * width);
            for r in 0..rows {
                out.extend_from_slice(&buf[r * self.cols + c0..r * self.cols + c1]);
            }
            out
        };
        let coefficients = self.coefficients.as_ref().map(|coef| {
            let mut out = Vec::with_capacity(rows * width);
            for r in 0..rows {
                out.extend_from_slice(&coef[r * self.cols + c0..r * self.cols + c1]);
            }
            out
        });
        Self {
            grid: self.grid.clone(),
            cols: width,
            coefficients,
            magnitudes: take_rows(&self.magnitudes),
            time_origin: self.column_time(c0),
            sample_rate: self.sample_rate,
            cone_of_influence: self.cone_of_influence.clone(),
            band: self.band,
        }
    }
}

fn cone_of_influence(grid: &ScaleGrid, sample_rate: f64) -> Vec<usize> {
    grid.rows().iter().map(|row| (COI_FACTOR * row.scale * sample_rate).ceil() as usize).collect()
}

/// Half-width (in samples) beyond which the kernel envelope is below [`ENVELOPE_FLOOR`].
fn kernel_half_width(scale: f64, sample_rate: f64, n: usize) -> usize {
    let cutoff = (-2.0 * ENVELOPE_FLOOR.ln()).sqrt();
    ((cutoff * scale * sample_rate).ceil() as usize).min(n.saturating_sub(1))
}

fn check_input(ts: &TimeSeries) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::arg("cannot transform an empty series"));
    }
    Ok(())
}

/// FFT-convolution CWT.
///
/// Each row is the linear convolution of the zero-extended signal with the
/// sampled wavelet `psi(m*dt/a)`, scaled by `dt/sqrt(a)`, computed with an
/// FFT of length `next_pow2(n + kernel support)`. Rows are processed in
/// parallel; the result does not depend on the thread count.
pub fn cwt_fft(ts: &TimeSeries, grid: &ScaleGrid) -> Result<ScalogramGrid> {
    check_input(ts)?;
    let n = ts.len();
    let rate = ts.sample_rate();
    let dt = 1.0 / rate;
    let omega0 = grid.omega0();

    let half_widths: Vec<usize> = grid.rows().iter().map(|r| kernel_half_width(r.scale, rate, n)).collect();
    let lengths: Vec<usize> = half_widths.iter().map(|&m| (n + 2 * m + 1).next_power_of_two()).collect();

    // one plan pair and one signal spectrum per distinct FFT length
    let mut planner = FftPlanner::<f64>::new();
    let mut spectra: BTreeMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>, Vec<Complex64>)> = BTreeMap::new();
    for &len in &lengths {
        spectra.entry(len).or_insert_with(|| {
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            for (slot, &v) in buf.iter_mut().zip(ts.samples()) {
                slot.re = v;
            }
            forward.process(&mut buf);
            (forward, inverse, buf)
        });
    }

    let rows: Vec<Vec<Complex64>> = grid
        .rows()
        .par_iter()
        .enumerate()
        .map(|(r, row)| {
            let len = lengths[r];
            let m = half_widths[r] as isize;
            let (forward, inverse, signal) = &spectra[&len];
            let mut kernel = vec![Complex64::new(0.0, 0.0); len];
            for k in -m..=m {
                let idx = k.rem_euclid(len as isize) as usize;
                kernel[idx] = gabor(k as f64 * dt / row.scale, omega0);
            }
            forward.process(&mut kernel);
            for (kv, sv) in kernel.iter_mut().zip(signal) {
                *kv *= sv;
            }
            inverse.process(&mut kernel);
            let norm = dt / (row.scale.sqrt() * len as f64);
            kernel.truncate(n);
            kernel.iter_mut().for_each(|z| *z *= norm);
            kernel
        })
        .collect();

    let coefficients = rows.into_iter().flatten().collect();
    Ok(ScalogramGrid::from_coefficients(grid.clone(), n, coefficients, ts.start_time(), rate))
}

/// Direct-summation CWT, `O(rows * n^2)`; the correctness oracle for [`cwt_fft`].
///
/// The trapezoid rule over the zero-extended signal on its own uniform grid
/// reduces to `dt * sum_k f_k * conj(psi((t_k - b)/a)) / sqrt(a)`; no kernel
/// truncation is applied. Intended for inputs up to a few thousand samples.
pub fn cwt_direct(ts: &TimeSeries, grid: &ScaleGrid) -> Result<ScalogramGrid> {
    check_input(ts)?;
    let n = ts.len();
    let rate = ts.sample_rate();
    let dt = 1.0 / rate;
    let omega0 = grid.omega0();
    let x = ts.samples();

    let rows: Vec<Vec<Complex64>> = grid
        .rows()
        .par_iter()
        .map(|row| {
            // lag table: conj(psi(d*dt/a)) for d = k - c in [-(n-1), n-1]
            let lags: Vec<Complex64> = (0..2 * n - 1)
                .map(|i| gabor((i as f64 - (n - 1) as f64) * dt / row.scale, omega0).conj())
                .collect();
            let norm = dt / row.scale.sqrt();
            (0..n)
                .map(|c| {
                    let base = n - 1 - c;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, &v) in x.iter().enumerate() {
                        acc += lags[base + k] * v;
                    }
                    acc * norm
                })
                .collect()
        })
        .collect();

    let coefficients = rows.into_iter().flatten().collect();
    Ok(ScalogramGrid::from_coefficients(grid.clone(), n, coefficients, ts.start_time(), rate))
}

const DUMP_HEADER_LEN: usize = 6;

/// Writes the complex coefficients as a little-endian f64 dump.
///
/// Layout: header `[rows, cols, f_min, f_max, omega0, sample_rate]`, then
/// row-major `(re, im)` pairs.
pub fn write_coefficient_dump(grid: &ScalogramGrid, path: &Path) -> Result<()> {
    let coef = grid
        .coefficients
        .as_ref()
        .ok_or_else(|| Error::State("grid has no complex coefficients to dump".into()))?;
    write_dump(grid, path, coef.iter().flat_map(|z| [z.re, z.im]))
}

/// Writes magnitudes only: same header, then one row-major f64 per cell.
pub fn write_magnitude_dump(grid: &ScalogramGrid, path: &Path) -> Result<()> {
    write_dump(grid, path, grid.magnitudes.iter().copied())
}

fn write_dump(grid: &ScalogramGrid, path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = [
        grid.rows() as f64,
        grid.cols as f64,
        grid.grid.f_min,
        grid.grid.f_max,
        grid.grid.omega0,
        grid.sample_rate,
    ];
    let emit = || -> std::io::Result<()> {
        for v in header.into_iter().chain(values) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reads either dump flavour; the payload size tells which one it is.
///
/// The dump does not record the time origin, so the caller supplies it.
pub fn read_dump(path: &Path, time_origin: f64, band: Option<FilterBand>) -> Result<ScalogramGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 || bytes.len() < DUMP_HEADER_LEN * 8 {
        return Err(Error::Format(format!("{}: truncated coefficient dump", path.display())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let (header, payload) = values.split_at(DUMP_HEADER_LEN);
    let rows = header[0] as usize;
    let cols = header[1] as usize;
    if rows as f64 != header[0] || cols as f64 != header[1] || cols == 0 {
        return Err(Error::Format(format!("{}: bad dump dimensions", path.display())));
    }
    let grid = ScaleGrid::with_rows(header[2], header[3], rows, header[4])?;
    let cells = rows * cols;
    let sample_rate = header[5];
    if payload.len() == 2 * cells {
        if band.is_some() {
            return Err(Error::State("a band is only attached to magnitude dumps".into()));
        }
        let coefficients = payload.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(ScalogramGrid::from_coefficients(grid, cols, coefficients, time_origin, sample_rate))
    } else if payload.len() == cells {
        ScalogramGrid::from_magnitudes(grid, cols, payload.to_vec(), time_origin, sample_rate, band)
    } else {
        Err(Error::Format(format!(
            "{}: payload of {} values matches neither {cells} magnitudes nor {cells} complex cells",
            path.display(),
            payload.len()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gabor_basic_values() {
        assert_eq!(gabor(0.0, 6.0), Complex64::new(1.0, 0.0));
        assert_eq!(gabor(0.0, 1.3), Complex64::new(1.0, 0.0));
        assert!((gabor(1.0, 6.0).norm() - 0.606_530_659_712_633_4).abs() < 1e-15);
        for &t in &[0.3, 1.7, -2.2, 5.0] {
            assert_eq!(gabor(-t, 6.0), gabor(t, 6.0).conj());
            assert!((gabor(t, 6.0).norm() - (-t * t / 2.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn default_grid_endpoints_and_row_count() {
        let g = ScaleGrid::new(DEFAULT_F_MIN, DEFAULT_F_MAX, 12, DEFAULT_OMEGA0).unwrap();
        assert_eq!(g.len(), 97);
        assert_eq!(g.frequency(0), 6.951);
        assert_eq!(g.frequency(96), 0.0272);
        let ratio = g.frequency(0) / g.frequency(1);
        for r in 0..g.len() - 1 {
            assert!((g.frequency(r) / g.frequency(r + 1) - ratio).abs() < 1e-12);
        }
        for row in g.rows() {
            assert!((row.frequency - 6.0 / (2.0 * PI * row.scale)).abs() <= 1e-12 * row.frequency);
        }
    }

    #[test]
    fn one_octave_one_voice() {
        let g = ScaleGrid::new(1.0, 2.0, 1, 6.0).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.frequency(0), 2.0);
        assert_eq!(g.frequency(1), 1.0);
        assert!((g.ratio() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert!(ScaleGrid::new(0.0, 1.0, 12, 6.0).is_err());
        assert!(ScaleGrid::new(2.0, 1.0, 12, 6.0).is_err());
        assert!(ScaleGrid::new(1.0, 1.0, 12, 6.0).is_err());
        assert!(ScaleGrid::new(1.0, 2.0, 0, 6.0).is_err());
        assert!(ScaleGrid::new(1.0, 2.0, 4, 0.0).is_err());
    }

    #[test]
    fn with_rows_reproduces_grid() {
        let g = ScaleGrid::new(DEFAULT_F_MIN, DEFAULT_F_MAX, 12, DEFAULT_OMEGA0).unwrap();
        let h = ScaleGrid::with_rows(DEFAULT_F_MIN, DEFAULT_F_MAX, g.len(), DEFAULT_OMEGA0).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn zero_signal_gives_zero_grid() {
        let ts = TimeSeries::new("z", 0.0, 100.0, vec![0.0; 300]).unwrap();
        let g = ScaleGrid::new(0.5, 6.0, 4, 6.0).unwrap();
        for grid in [cwt_fft(&ts, &g).unwrap(), cwt_direct(&ts, &g).unwrap()] {
            assert!(grid.magnitudes().iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn empty_series_is_an_argument_error() {
        let ts = TimeSeries::new("e", 0.0, 100.0, vec![]).unwrap();
        let g = ScaleGrid::new(0.5, 6.0, 4, 6.0).unwrap();
        assert!(matches!(cwt_fft(&ts, &g), Err(Error::Argument(_))));
        assert!(matches!(cwt_direct(&ts, &g), Err(Error::Argument(_))));
    }

    #[test]
    fn magnitudes_match_coefficients() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let ts = TimeSeries::new("x", 0.0, 100.0, x).unwrap();
        let g = ScaleGrid::new(0.5, 6.0, 6, 6.0).unwrap();
        let s = cwt_fft(&ts, &g).unwrap();
        for r in 0..s.rows() {
            for c in 0..s.cols() {
                assert!((s.magnitude(r, c) - s.coefficient(r, c).unwrap().norm()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cone_of_influence_width() {
        let ts = TimeSeries::new("x", 0.0, 50.0, vec![0.0; 10]).unwrap();
        let g = ScaleGrid::new(1.0, 2.0, 1, 6.0).unwrap();
        let s = cwt_fft(&ts, &g).unwrap();
        let want: Vec<usize> = g.rows().iter().map(|r| (4.0 * r.scale * 50.0).ceil() as usize).collect();
        assert_eq!(s.cone_of_influence(), want.as_slice());
    }

    #[test]
    fn dumps_round_trip_bit_exact() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let ts = TimeSeries::new("x", 3.5, 100.0, x).unwrap();
        let g = ScaleGrid::new(0.3, 6.9, 12, 6.0).unwrap();
        let s = cwt_fft(&ts, &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cpath = dir.path().join("a.cwt");
        write_coefficient_dump(&s, &cpath).unwrap();
        let back = read_dump(&cpath, 3.5, None).unwrap();
        assert_eq!(back, s);
        let bytes = std::fs::read(&cpath).unwrap();
        assert_eq!(bytes.len(), 8 * (6 + 2 * s.rows() * s.cols()));
        assert_eq!(f64::from_le_bytes(bytes[0..8].try_into().unwrap()), s.rows() as f64);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 100.0);

        let mpath = dir.path().join("a.mag");
        write_magnitude_dump(&s, &mpath).unwrap();
        let mags = read_dump(&mpath, 3.5, None).unwrap();
        assert!(!mags.has_coefficients());
        assert_eq!(mags.magnitudes(), s.magnitudes());
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cwt");
        std::fs::write(&p, [0u8; 20]).unwrap();
        assert!(matches!(read_dump(&p, 0.0, None), Err(Error::Format(_))));
    }
}
