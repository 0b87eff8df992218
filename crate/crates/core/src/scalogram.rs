//! Pixel geometry, rendering and segmentation of scalograms.
//!
//! Horizontally, 10 ms of signal occupy 1.024 px (102.4 px/s). Vertically,
//! pixel row 0 is `f_max` and the bottom edge is `f_min`, log-interpolated.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::ScalogramGrid;

pub const DEFAULT_PX_PER_SECOND: f64 = 102.4;
pub const DEFAULT_IMAGE_HEIGHT: u32 = 512;
pub const DEFAULT_SEGMENT_SECONDS: f64 = 40.0;

/// Slack for range checks on pixel and time coordinates.
const EDGE_SLACK: f64 = 1e-9;

/// Round half up, used for image widths.
fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Bidirectional mapping between image pixels and time/frequency.
///
/// Serialises to the mapping sidecar JSON read by back-projection and label export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelMapping {
    pub time_origin: f64,
    pub px_per_second: f64,
    pub f_min: f64,
    pub f_max: f64,
    #[serde(rename = "height")]
    pub image_height: u32,
    #[serde(rename = "width")]
    pub image_width: u32,
    pub source_id: String,
}

impl PixelMapping {
    /// Mapping for a whole grid: width is `round(duration * px_per_second)`.
    pub fn for_grid(grid: &ScalogramGrid, px_per_second: f64, image_height: u32, source_id: impl Into<String>) -> Result<Self> {
        Self::for_span(grid, grid.time_origin(), px_per_second, image_height, source_id)
    }

    /// Mapping for a grid that is one part of a longer recording starting at
    /// `recording_origin`. The width is the difference of the rounded global
    /// pixel positions of the part's edges, so part widths add up to the
    /// width of the unsegmented image.
    pub fn for_span(
        grid: &ScalogramGrid,
        recording_origin: f64,
        px_per_second: f64,
        image_height: u32,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if !(px_per_second > 0.0 && px_per_second.is_finite()) {
            return Err(Error::arg(format!("px_per_second must be positive, got {px_per_second}")));
        }
        if image_height == 0 {
            return Err(Error::arg("image height must be positive"));
        }
        let start = grid.time_origin() - recording_origin;
        let end = start + grid.duration();
        let width = round_half_up(end * px_per_second) - round_half_up(start * px_per_second);
        if width < 1.0 {
            return Err(Error::arg("grid is too short to cover a single pixel column"));
        }
        let sg = grid.scale_grid();
        Ok(Self {
            time_origin: grid.time_origin(),
            px_per_second,
            f_min: sg.f_min(),
            f_max: sg.f_max(),
            image_height,
            image_width: width as u32,
            source_id: source_id.into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.px_per_second > 0.0 && self.px_per_second.is_finite()) {
            return Err(Error::arg("px_per_second must be positive"));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::arg("mapping frequency range must satisfy 0 < f_min < f_max"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::arg("mapping image dimensions must be positive"));
        }
        if !self.time_origin.is_finite() {
            return Err(Error::arg("mapping time origin must be finite"));
        }
        Ok(())
    }

    /// Seconds covered by the image width.
    pub fn duration(&self) -> f64 {
        self.image_width as f64 / self.px_per_second
    }

    pub fn end_time(&self) -> f64 {
        self.time_origin + self.duration()
    }

    pub fn time_to_px(&self, t: f64) -> Result<f64> {
        let x = (t - self.time_origin) * self.px_per_second;
        if !(x >= -EDGE_SLACK && x <= self.image_width as f64 + EDGE_SLACK) {
            return Err(Error::arg(format!(
                "time {t} outside mapped range [{}, {}]",
                self.time_origin,
                self.end_time()
            )));
        }
        Ok(x)
    }

    pub fn px_to_time(&self, x: f64) -> Result<f64> {
        if !(x >= -EDGE_SLACK && x <= self.image_width as f64 + EDGE_SLACK) {
            return Err(Error::arg(format!("pixel column {x} outside [0, {}]", self.image_width)));
        }
        Ok(self.time_origin + x / self.px_per_second)
    }

    /// Frequency at pixel-row coordinate `y` (0 = top edge, height = bottom edge).
    pub fn px_to_frequency(&self, y: f64) -> Result<f64> {
        let h = self.image_height as f64;
        if !(y >= -EDGE_SLACK && y <= h + EDGE_SLACK) {
            return Err(Error::arg(format!("pixel row {y} outside [0, {h}]")));
        }
        let frac = (y / h).clamp(0.0, 1.0);
        Ok(self.f_max * (self.f_min / self.f_max).powf(frac))
    }

    pub fn frequency_to_px(&self, f: f64) -> Result<f64> {
        if !(f >= self.f_min * (1.0 - EDGE_SLACK) && f <= self.f_max * (1.0 + EDGE_SLACK)) {
            return Err(Error::arg(format!("frequency {f} outside [{}, {}]", self.f_min, self.f_max)));
        }
        Ok((f / self.f_max).ln() / (self.f_min / self.f_max).ln() * self.image_height as f64)
    }

    /// Frequencies of the `height + 1` pixel-row edges, top to bottom.
    pub fn row_band_edges(&self) -> Vec<f64> {
        (0..=self.image_height)
            .map(|y| self.f_max * (self.f_min / self.f_max).powf(y as f64 / self.image_height as f64))
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mapping: Self = serde_json::from_str(&text)?;
        mapping.validate()?;
        Ok(mapping)
    }
}

/// Piecewise-linear RGB ramp over normalised magnitude `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    stops: Vec<(f64, [u8; 3])>,
}

impl Default for Colormap {
    /// white -> blue -> green -> yellow -> red at 0, 0.25, 0.5, 0.75, 1.
    fn default() -> Self {
        Self {
            stops: vec![
                (0.0, [255, 255, 255]),
                (0.25, [0, 0, 255]),
                (0.5, [0, 255, 0]),
                (0.75, [255, 255, 0]),
                (1.0, [255, 0, 0]),
            ],
        }
    }
}

impl Colormap {
    /// Stops must start at 0, end at 1 and be strictly increasing.
    pub fn new(stops: Vec<(f64, [u8; 3])>) -> Result<Self> {
        let ok = stops.len() >= 2
            && stops[0].0 == 0.0
            && stops[stops.len() - 1].0 == 1.0
            && stops.windows(2).all(|w| w[0].0 < w[1].0);
        if !ok {
            return Err(Error::arg("colormap stops must increase strictly from 0 to 1"));
        }
        Ok(Self { stops })
    }

    pub fn top(&self) -> [u8; 3] {
        self.stops[self.stops.len() - 1].1
    }

    pub fn lookup(&self, v: f64) -> [u8; 3] {
        let v = v.clamp(0.0, 1.0);
        if v <= 0.0 {
            return self.stops[0].1;
        }
        let hi = self.stops.iter().position(|s| s.0 >= v).unwrap_or(self.stops.len() - 1);
        let (p0, c0) = self.stops[hi - 1];
        let (p1, c1) = self.stops[hi];
        let w = (v - p0) / (p1 - p0);
        let mix = |a: u8, b: u8| (a as f64 + w * (b as f64 - a as f64)).round() as u8;
        [mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2])]
    }
}

/// Geometry and colour choices for [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub px_per_second: f64,
    pub image_height: u32,
    pub colormap: Colormap,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self { px_per_second: DEFAULT_PX_PER_SECOND, image_height: DEFAULT_IMAGE_HEIGHT, colormap: Colormap::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub pixels: RgbImage,
    pub mapping: PixelMapping,
    pub source_id: String,
}

impl ScalogramImage {
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.pixels.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.png_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Renders magnitudes to an RGB raster.
///
/// Scale row `r` covers pixel rows `[r*H/R, (r+1)*H/R)`. Pixel column `x`
/// samples the magnitude row at fractional column `x * rate / px_per_second`
/// by linear interpolation. Values are normalised by `c2` when the grid
/// carries a filter band, otherwise by the grid maximum.
pub fn render(grid: &ScalogramGrid, spec: &RenderSpec, source_id: &str) -> Result<ScalogramImage> {
    let mapping = PixelMapping::for_grid(grid, spec.px_per_second, spec.image_height, source_id)?;
    render_with_mapping(grid, spec, mapping)
}

pub fn render_with_mapping(grid: &ScalogramGrid, spec: &RenderSpec, mapping: PixelMapping) -> Result<ScalogramImage> {
    if grid.rows() == 0 || grid.cols() == 0 {
        return Err(Error::arg("cannot render an empty grid"));
    }
    if grid.magnitudes().iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::data("magnitudes must be finite and non-negative"));
    }
    let scale = match grid.band() {
        Some(band) => band.c2,
        None => grid.max_magnitude(),
    };
    let (width, height) = (mapping.image_width, mapping.image_height);
    let rows = grid.rows();
    let last_col = grid.cols() - 1;
    let step = grid.sample_rate() / mapping.px_per_second;

    // interpolation weights are shared by every row
    let taps: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| {
            let pos = x as f64 * step;
            let lo = (pos.floor() as usize).min(last_col);
            let hi = (lo + 1).min(last_col);
            (lo, hi, (pos - lo as f64).clamp(0.0, 1.0))
        })
        .collect();

    let mut pixels = RgbImage::new(width, height);
    let mut line: Vec<[u8; 3]> = vec![[0; 3]; width as usize];
    let mut current_row = usize::MAX;
    for y in 0..height {
        let r = ((y as usize * rows) / height as usize).min(rows - 1);
        if r != current_row {
            let mags = grid.magnitude_row(r);
            for (px, &(lo, hi, w)) in line.iter_mut().zip(&taps) {
                let v = mags[lo] + w * (mags[hi] - mags[lo]);
                *px = if scale > 0.0 { spec.colormap.lookup(v / scale) } else { spec.colormap.lookup(0.0) };
            }
            current_row = r;
        }
        for (x, px) in line.iter().enumerate() {
            pixels.put_pixel(x as u32, y, Rgb(*px));
        }
    }
    let source_id = mapping.source_id.clone();
    Ok(ScalogramImage { pixels, mapping, source_id })
}

/// Splits `grid` into consecutive parts of at most `max_width_s` seconds.
///
/// With `keep_regions` (training mode) parts whose span intersects none of
/// the given `(start, end)` intervals are dropped. Every part keeps the
/// global timestamp of its first column as its time origin.
pub fn segment(grid: &ScalogramGrid, max_width_s: f64, keep_regions: Option<&[(f64, f64)]>) -> Result<Vec<ScalogramGrid>> {
    if !(max_width_s > 0.0 && max_width_s.is_finite()) {
        return Err(Error::arg(format!("segment length must be positive, got {max_width_s}")));
    }
    let per_part = ((max_width_s * grid.sample_rate() + 1e-9).floor() as usize).max(1);
    let mut parts = Vec::new();
    let mut c0 = 0;
    while c0 < grid.cols() {
        let c1 = (c0 + per_part).min(grid.cols());
        let (t0, t1) = (grid.column_time(c0), grid.column_time(c1));
        let keep = keep_regions.is_none_or(|regions| regions.iter().any(|&(a, b)| a < t1 && b > t0));
        if keep {
            parts.push(if c0 == 0 && c1 == grid.cols() { grid.clone() } else { grid.sub_columns(c0, c1) });
        }
        c0 = c1;
    }
    Ok(parts)
}
