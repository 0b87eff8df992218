//! Magnitude band filter: zero below `c1`, saturate above `c2`.
//!
//! Cells exactly at `c1` or `c2` pass unchanged. The filter only touches
//! magnitudes; complex coefficients are carried through as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::ScalogramGrid;

pub const DEFAULT_COVERAGE: f64 = 0.99;
pub const DEFAULT_MARGIN: f64 = 0.10;

/// Minimum number of pooled cells a calibration box set must provide.
const MIN_BOX_CELLS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBand {
    pub c1: f64,
    pub c2: f64,
}

impl FilterBand {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let band = Self { c1, c2 };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1.is_finite() && self.c2.is_finite() && self.c1 >= 0.0 && self.c1 < self.c2) {
            return Err(Error::arg(format!(
                "filter band must satisfy 0 <= c1 < c2, got ({}, {})",
                self.c1, self.c2
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, value: f64) -> f64 {
        if value < self.c1 {
            0.0
        } else if value > self.c2 {
            self.c2
        } else {
            value
        }
    }
}

/// Filters a copy of `grid` and tags it with `band`.
pub fn apply_band_filter(grid: &ScalogramGrid, band: FilterBand) -> ScalogramGrid {
    let filtered = grid.magnitudes().iter().map(|&m| band.apply(m)).collect();
    grid.with_filtered(filtered, band)
}

/// Axis-aligned region of the time-frequency plane.
///
/// A cell belongs to the box when its column time lies in `[t_start, t_end)`
/// and its row frequency in `[f_low, f_high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeFrequencyBox {
    pub t_start: f64,
    pub t_end: f64,
    pub f_low: f64,
    pub f_high: f64,
}

impl TimeFrequencyBox {
    pub fn contains(&self, t: f64, f: f64) -> bool {
        t >= self.t_start && t < self.t_end && f >= self.f_low && f <= self.f_high
    }

    /// Magnitudes of all cells of `grid` inside the box.
    pub fn cells(&self, grid: &ScalogramGrid) -> Vec<f64> {
        let rate = grid.sample_rate();
        let origin = grid.time_origin();
        let c0 = (((self.t_start - origin) * rate).ceil().max(0.0) as usize).min(grid.cols());
        let c1 = (((self.t_end - origin) * rate).ceil().max(0.0) as usize).min(grid.cols());
        let mut out = Vec::new();
        for (r, row) in grid.scale_grid().rows().iter().enumerate() {
            if row.frequency < self.f_low || row.frequency > self.f_high {
                continue;
            }
            for c in c0..c1 {
                if self.contains(grid.column_time(c), row.frequency) {
                    out.push(grid.magnitude(r, c));
                }
            }
        }
        out
    }
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Running pool of in-box magnitudes, for calibrating over many recordings
/// without keeping their grids alive.
#[derive(Debug, Clone, Default)]
pub struct CalibrationPool {
    cells: Vec<f64>,
    largest_box: usize,
}

impl CalibrationPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, grid: &ScalogramGrid, boxes: &[TimeFrequencyBox]) {
        for b in boxes {
            let cells = b.cells(grid);
            self.largest_box = self.largest_box.max(cells.len());
            self.cells.extend(cells);
        }
    }

    /// Appends another pool; the result does not depend on merge order.
    pub fn merge(&mut self, other: CalibrationPool) {
        self.largest_box = self.largest_box.max(other.largest_box);
        self.cells.extend(other.cells);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `c1 = q(1 - coverage) / (1 + margin)`, `c2 = q(coverage) * (1 + margin)`.
    pub fn band(mut self, coverage: f64, margin: f64) -> Result<FilterBand> {
        if !(coverage > 0.5 && coverage <= 1.0) {
            return Err(Error::arg(format!("coverage must lie in (0.5, 1], got {coverage}")));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::arg(format!("margin must be non-negative, got {margin}")));
        }
        if self.cells.is_empty() {
            return Err(Error::arg("calibration boxes contain no scalogram cells"));
        }
        if self.largest_box < MIN_BOX_CELLS {
            return Err(Error::arg(format!("no calibration box covers at least {MIN_BOX_CELLS} cells")));
        }
        self.cells.sort_by(f64::total_cmp);
        let c1 = quantile(&self.cells, 1.0 - coverage) / (1.0 + margin);
        let mut c2 = quantile(&self.cells, coverage) * (1.0 + margin);
        if c2 <= 0.0 {
            return Err(Error::arg("calibration boxes hold only zero magnitudes"));
        }
        if c1 >= c2 {
            c2 = c1 + (c1.abs() * 1e-9).max(f64::MIN_POSITIVE);
        }
        FilterBand::new(c1, c2)
    }
}

/// Chooses `(c1, c2)` from magnitudes inside labeled event boxes.
///
/// All in-box cells are pooled; see [`CalibrationPool::band`].
pub fn calibrate_band(
    labeled: &[(&ScalogramGrid, Vec<TimeFrequencyBox>)],
    coverage: f64,
    margin: f64,
) -> Result<FilterBand> {
    let mut pool = CalibrationPool::new();
    for (grid, boxes) in labeled {
        pool.add(grid, boxes);
    }
    pool.band(coverage, margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::ScaleGrid;

    fn grid_from(mags: Vec<f64>, rows: usize) -> ScalogramGrid {
        let cols = mags.len() / rows;
        let g = ScaleGrid::with_rows(1.0, 4.0, rows, 6.0).unwrap();
        ScalogramGrid::from_magnitudes(g, cols, mags, 0.0, 10.0, None).unwrap()
    }

    fn everything() -> TimeFrequencyBox {
        TimeFrequencyBox { t_start: -1e9, t_end: 1e9, f_low: 0.0, f_high: 1e9 }
    }

    #[test]
    fn cell_rules() {
        let band = FilterBand::new(1.0, 3.0).unwrap();
        assert_eq!(band.apply(0.0), 0.0);
        assert_eq!(band.apply(0.999), 0.0);
        assert_eq!(band.apply(1.0), 1.0);
        assert_eq!(band.apply(2.0), 2.0);
        assert_eq!(band.apply(3.0), 3.0);
        assert_eq!(band.apply(6.0), 3.0);
    }

    #[test]
    fn filter_tags_grid_and_keeps_original() {
        let g = grid_from(vec![0.0, 0.5, 2.0, 7.0, 1.0, 3.0], 2);
        let band = FilterBand::new(1.0, 3.0).unwrap();
        let f = apply_band_filter(&g, band);
        assert_eq!(f.magnitudes(), &[0.0, 0.0, 2.0, 3.0, 1.0, 3.0]);
        assert_eq!(f.band(), Some(band));
        assert_eq!(g.band(), None);
        assert_eq!(g.magnitudes()[3], 7.0);
    }

    #[test]
    fn invalid_bands() {
        assert!(FilterBand::new(2.0, 1.0).is_err());
        assert!(FilterBand::new(1.0, 1.0).is_err());
        assert!(FilterBand::new(-1.0, 1.0).is_err());
        assert!(FilterBand::new(0.0, f64::INFINITY).is_err());
        assert!(FilterBand::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn constant_pool_gives_margin_band() {
        let g = grid_from(vec![2.0; 40], 2);
        let band = calibrate_band(&[(&g, vec![everything()])], DEFAULT_COVERAGE, DEFAULT_MARGIN).unwrap();
        assert!((band.c1 - 2.0 / 1.1).abs() < 1e-12);
        assert!((band.c2 - 2.2).abs() < 1e-12);
    }

    #[test]
    fn full_coverage_no_margin_is_min_max() {
        let mags: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.25).collect();
        let g = grid_from(mags, 4);
        let band = calibrate_band(&[(&g, vec![everything()])], 1.0, 0.0).unwrap();
        assert_eq!(band.c1, 1.0);
        assert_eq!(band.c2, 1.0 + 39.0 * 0.25);
    }

    #[test]
    fn pooling_two_grids_equals_one_list() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 1.7).sin().abs() + 0.1).collect();
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos().abs() + 0.2).collect();
        let ga = grid_from(a.clone(), 2);
        let gb = grid_from(b.clone(), 3);
        let split = calibrate_band(&[(&ga, vec![everything()]), (&gb, vec![everything()])], 0.9, 0.05).unwrap();
        let mut all = a;
        all.extend(b);
        let gall = grid_from(all, 5);
        let pooled = calibrate_band(&[(&gall, vec![everything()])], 0.9, 0.05).unwrap();
        assert_eq!(split, pooled);
    }

    #[test]
    fn empty_or_tiny_pool_is_rejected() {
        let g = grid_from(vec![1.0; 40], 2);
        let outside = TimeFrequencyBox { t_start: 100.0, t_end: 200.0, f_low: 0.0, f_high: 10.0 };
        assert!(calibrate_band(&[(&g, vec![outside])], 0.99, 0.1).is_err());
        let tiny = TimeFrequencyBox { t_start: 0.0, t_end: 0.2, f_low: 3.9, f_high: 4.1 };
        assert_eq!(tiny.cells(&g).len(), 2);
        assert!(calibrate_band(&[(&g, vec![tiny])], 0.99, 0.1).is_err());
        assert!(calibrate_band(&[], 0.99, 0.1).is_err());
    }

    #[test]
    fn box_selects_time_and_frequency() {
        // 3 rows at 4, 2, 1 Hz; 10 columns at 10 Hz
        let mags: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let g = grid_from(mags, 3);
        let b = TimeFrequencyBox { t_start: 0.2, t_end: 0.5, f_low: 1.5, f_high: 4.0 };
        assert_eq!(b.cells(&g), vec![2.0, 3.0, 4.0, 12.0, 13.0, 14.0]);
    }
}
