//! Pipeline configuration and the stage functions shared by the fused and
//! staged runs.
//!
//! transform -> filter -> segment + detect -> map back. Every stage output
//! can be persisted losslessly, so a run that hands artifacts through files
//! gives the same results as an in-memory run.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandfilter::{apply_band_filter, CalibrationPool, FilterBand, DEFAULT_COVERAGE, DEFAULT_MARGIN};
use crate::detector::{
    detect_blobs, export_yolo_labels, import_detections, nms, write_voc, BBox, BlobParams, Detection,
    InterchangeFormat, LabeledBox, VocAnnotation, CLASS_NAMES, DEFAULT_CS_THRESHOLD, DEFAULT_MIN_AREA,
    DEFAULT_NMS_IOU,
};
use crate::error::{Error, Result};
use crate::mapback::{gate_by_frequency, merge_adjacent, to_event_interval, EventInterval, DEFAULT_MERGE_GAP_S};
use crate::metrics::{GroundTruth, DEFAULT_OVERLAP_THRESHOLD};
use crate::scalogram::{
    render_with_mapping, segment, PixelMapping, RenderSpec, DEFAULT_IMAGE_HEIGHT, DEFAULT_PX_PER_SECOND,
    DEFAULT_SEGMENT_SECONDS,
};
use crate::synth::{calibration_boxes, generate_test, CorpusManifest, SynthSpec};
use crate::timeseries::{ColumnSpec, TimeSeries};
use crate::wavelet::{
    cwt_fft, ScaleGrid, ScalogramGrid, DEFAULT_F_MAX, DEFAULT_F_MIN, DEFAULT_OMEGA0, DEFAULT_VOICES_PER_OCTAVE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub time_column: String,
    pub value_column: String,
    pub delimiter: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { time_column: "time".into(), value_column: crate::synth::CHANNEL_NAME.into(), delimiter: ",".into() }
    }
}

impl IoConfig {
    pub fn column_spec(&self) -> Result<ColumnSpec> {
        match self.delimiter.as_bytes() {
            [d] => Ok(ColumnSpec::new(&self.time_column, &self.value_column).with_delimiter(*d)),
            _ => Err(Error::config("io.delimiter", "must be a single ASCII character")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CwtConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub voices: u32,
    pub omega0: f64,
}

impl Default for CwtConfig {
    fn default() -> Self {
        Self { f_min: DEFAULT_F_MIN, f_max: DEFAULT_F_MAX, voices: DEFAULT_VOICES_PER_OCTAVE, omega0: DEFAULT_OMEGA0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub px_per_second: f64,
    pub height: u32,
    pub merge_gap_s: f64,
    /// Optional `[f_low, f_high]` band an interval must overlap to be kept.
    pub freq_gate: Option<[f64; 2]>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            px_per_second: DEFAULT_PX_PER_SECOND,
            height: DEFAULT_IMAGE_HEIGHT,
            merge_gap_s: DEFAULT_MERGE_GAP_S,
            freq_gate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    pub cs_threshold: f64,
    pub nms_iou: f64,
    pub min_area: usize,
    /// Directory of YOLO text files, one per image part, for external mode.
    pub external_dir: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mode: DetectorMode::Builtin,
            cs_threshold: DEFAULT_CS_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            min_area: DEFAULT_MIN_AREA,
            external_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub overlap_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { overlap_threshold: DEFAULT_OVERLAP_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub max_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { max_s: DEFAULT_SEGMENT_SECONDS }
    }
}

/// Band calibration settings used when no explicit band is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub coverage: f64,
    pub margin: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { coverage: DEFAULT_COVERAGE, margin: DEFAULT_MARGIN }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub io: IoConfig,
    pub cwt: CwtConfig,
    pub mapping: MappingConfig,
    /// No default band ships; calibrate or set it explicitly.
    pub filter: Option<FilterBand>,
    pub calibration: CalibrationConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
    pub segment: SegmentConfig,
}

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl PipelineConfig {
    /// Parses JSON, reporting the dotted path of the first offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(if field == "." { String::new() } else { field }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.io.column_spec()?;
        let c = &self.cwt;
        check(c.f_min > 0.0 && c.f_min.is_finite(), "cwt.f_min", "must be positive")?;
        check(c.f_max > c.f_min && c.f_max.is_finite(), "cwt.f_max", "must exceed cwt.f_min")?;
        check(c.voices >= 1, "cwt.voices", "must be at least 1")?;
        check(c.omega0 > 0.0 && c.omega0.is_finite(), "cwt.omega0", "must be positive")?;
        let m = &self.mapping;
        check(m.px_per_second > 0.0 && m.px_per_second.is_finite(), "mapping.px_per_second", "must be positive")?;
        check(m.height >= 1, "mapping.height", "must be positive")?;
        check(m.merge_gap_s >= 0.0 && m.merge_gap_s.is_finite(), "mapping.merge_gap_s", "must be non-negative")?;
        if let Some([lo, hi]) = m.freq_gate {
            check(lo.is_finite() && hi.is_finite() && lo <= hi, "mapping.freq_gate", "must satisfy f_low <= f_high")?;
        }
        if let Some(band) = self.filter {
            band.validate().map_err(|e| Error::config("filter", e.to_string()))?;
        }
        let cal = &self.calibration;
        check(cal.coverage > 0.5 && cal.coverage <= 1.0, "calibration.coverage", "must lie in (0.5, 1]")?;
        check(cal.margin >= 0.0 && cal.margin.is_finite(), "calibration.margin", "must be non-negative")?;
        let d = &self.detector;
        check(unit(d.cs_threshold), "detector.cs_threshold", "must lie in [0, 1]")?;
        check(unit(d.nms_iou), "detector.nms_iou", "must lie in [0, 1]")?;
        check(d.min_area >= 1, "detector.min_area", "must be at least 1")?;
        check(
            d.mode == DetectorMode::Builtin || d.external_dir.is_some(),
            "detector.external_dir",
            "required in external mode",
        )?;
        let thr = self.eval.overlap_threshold;
        check(thr > 0.0 && thr <= 1.0, "eval.overlap_threshold", "must lie in (0, 1]")?;
        check(self.segment.max_s > 0.0 && self.segment.max_s.is_finite(), "segment.max_s", "must be positive")?;
        Ok(())
    }

    pub fn scale_grid(&self) -> Result<ScaleGrid> {
        ScaleGrid::new(self.cwt.f_min, self.cwt.f_max, self.cwt.voices, self.cwt.omega0)
    }

    pub fn band(&self) -> Result<FilterBand> {
        self.filter.ok_or_else(|| Error::config("filter", "no band configured; calibrate or set filter.c1/c2"))
    }

    pub fn blob_params(&self) -> BlobParams {
        BlobParams { min_area: self.detector.min_area, cs_threshold: self.detector.cs_threshold }
    }

    pub fn render_spec(&self) -> RenderSpec {
        RenderSpec { px_per_second: self.mapping.px_per_second, image_height: self.mapping.height, ..RenderSpec::default() }
    }
}

/// Image/label basename of part `index` of a recording.
pub fn part_name(source_id: &str, index: usize) -> String {
    format!("{source_id}_p{index:02}")
}

pub fn transform(ts: &TimeSeries, cfg: &PipelineConfig) -> Result<ScalogramGrid> {
    cwt_fft(ts, &cfg.scale_grid()?)
}

pub fn filter(grid: &ScalogramGrid, cfg: &PipelineConfig) -> Result<ScalogramGrid> {
    Ok(apply_band_filter(grid, cfg.band()?))
}

/// Detections of one image part, in that part's pixel frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDetections {
    pub index: usize,
    pub name: String,
    pub mapping: PixelMapping,
    pub detections: Vec<Detection>,
}

/// Segments a filtered grid and detects objects in every part.
pub fn detect(filtered: &ScalogramGrid, recording_origin: f64, source_id: &str, cfg: &PipelineConfig) -> Result<Vec<PartDetections>> {
    let parts = segment(filtered, cfg.segment.max_s, None)?;
    let params = cfg.blob_params();
    parts
        .iter()
        .enumerate()
        .map(|(index, part)| {
            let name = part_name(source_id, index);
            let mapping =
                PixelMapping::for_span(part, recording_origin, cfg.mapping.px_per_second, cfg.mapping.height, source_id)?;
            let raw = match cfg.detector.mode {
                DetectorMode::Builtin => detect_blobs(part, &mapping, &params)?,
                DetectorMode::External => {
                    let dir = cfg.detector.external_dir.as_deref().unwrap_or(Path::new("."));
                    import_detections(&dir.join(format!("{name}.txt")), InterchangeFormat::YoloText, &mapping)?
                        .into_iter()
                        .filter(|d| d.confidence >= cfg.detector.cs_threshold)
                        .collect()
                }
            };
            Ok(PartDetections { index, name, mapping, detections: nms(raw, cfg.detector.nms_iou) })
        })
        .collect()
}

/// Maps part detections to global intervals, merges neighbours and applies the optional gate.
pub fn map_back(parts: &[PartDetections], cfg: &PipelineConfig) -> Result<Vec<EventInterval>> {
    let mut intervals = Vec::new();
    for part in parts {
        for det in &part.detections {
            intervals.push(to_event_interval(det, &part.mapping)?);
        }
    }
    let merged = merge_adjacent(&intervals, cfg.mapping.merge_gap_s);
    Ok(match cfg.mapping.freq_gate {
        Some([lo, hi]) => gate_by_frequency(merged, lo, hi),
        None => merged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub parts: Vec<PartDetections>,
    pub intervals: Vec<EventInterval>,
}

/// Fused in-memory run over one recording.
pub fn run(ts: &TimeSeries, source_id: &str, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let grid = transform(ts, cfg)?;
    let filtered = filter(&grid, cfg)?;
    drop(grid);
    let parts = detect(&filtered, ts.start_time(), source_id, cfg)?;
    let intervals = map_back(&parts, cfg)?;
    Ok(PipelineRun { parts, intervals })
}

/// Sidecar describing a persisted grid dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub source_id: String,
    pub time_origin: f64,
    pub band: Option<FilterBand>,
}

impl GridMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Full-precision detections of one recording, as handed from detect to map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub source_id: String,
    pub parts: Vec<PartDetections>,
}

impl DetectionsFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Adds the labelled event cells of one synthetic test to a calibration pool.
pub fn pool_synthetic(pool: &mut CalibrationPool, ts: &TimeSeries, spec: &SynthSpec, cfg: &PipelineConfig) -> Result<()> {
    if spec.events.is_empty() {
        return Ok(());
    }
    let grid = transform(ts, cfg)?;
    pool.add(&grid, &calibration_boxes(spec, grid.scale_grid()));
    Ok(())
}

/// Calibrates a band from the events of the listed corpus tests.
pub fn calibrate_corpus(manifest: &CorpusManifest, ids: &[String], cfg: &PipelineConfig) -> Result<FilterBand> {
    let pools = manifest
        .tests
        .par_iter()
        .filter(|t| ids.contains(&t.id))
        .map(|t| {
            let (ts, _) = generate_test(&t.spec, &t.id)?;
            let mut pool = CalibrationPool::new();
            pool_synthetic(&mut pool, &ts, &t.spec, cfg)?;
            Ok(pool)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = CalibrationPool::new();
    for p in pools {
        all.merge(p);
    }
    all.band(cfg.calibration.coverage, cfg.calibration.margin)
}

/// Renders and runs every corpus test; output order follows the manifest.
pub fn run_corpus(manifest: &CorpusManifest, cfg: &PipelineConfig) -> Result<Vec<(GroundTruth, PipelineRun)>> {
    manifest
        .tests
        .par_iter()
        .map(|t| {
            let (ts, truth) = generate_test(&t.spec, &t.id)?;
            Ok((truth, run(&ts, &t.id, cfg)?))
        })
        .collect()
}

/// Files written for one training image part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedPart {
    pub name: String,
    pub png: PathBuf,
    pub yolo: PathBuf,
    pub voc: PathBuf,
    pub mapping: PathBuf,
    pub boxes: usize,
}

/// Training-data preparation for one labelled recording.
///
/// Only parts overlapping a ground-truth interval are kept. Each truth
/// interval becomes one box spanning its clipped time range and the rows
/// holding in-band energy over that range (the full height if none).
pub fn export_labels(ts: &TimeSeries, truth: &GroundTruth, cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<ExportedPart>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let grid = transform(ts, cfg)?;
    let filtered = filter(&grid, cfg)?;
    drop(grid);
    let regions: Vec<(f64, f64)> = truth.intervals.iter().map(|iv| (iv[0], iv[1])).collect();
    let all_parts = segment(&filtered, cfg.segment.max_s, None)?;
    let spec = cfg.render_spec();
    let mut out = Vec::new();
    for (index, part) in all_parts.iter().enumerate() {
        let (t0, t1) = (part.time_origin(), part.time_origin() + part.duration());
        let hits: Vec<(f64, f64)> = regions.iter().copied().filter(|&(a, b)| a < t1 && b > t0).collect();
        if hits.is_empty() {
            continue;
        }
        let name = part_name(&truth.source_id, index);
        let mapping =
            PixelMapping::for_span(part, ts.start_time(), cfg.mapping.px_per_second, cfg.mapping.height, &truth.source_id)?;
        let boxes = hits
            .iter()
            .map(|&(a, b)| truth_box(part, &mapping, a.max(t0), b.min(mapping.end_time())))
            .collect::<Result<Vec<BBox>>>()?;
        let labeled: Vec<LabeledBox> = boxes
            .iter()
            .map(|&bbox| LabeledBox { bbox, class_name: CLASS_NAMES[0].into(), image_ref: format!("{name}.png") })
            .collect();

        let files = ExportedPart {
            name: name.clone(),
            png: out_dir.join(format!("{name}.png")),
            yolo: out_dir.join(format!("{name}.txt")),
            voc: out_dir.join(format!("{name}.xml")),
            mapping: out_dir.join(format!("{name}.json")),
            boxes: labeled.len(),
        };
        render_with_mapping(part, &spec, mapping.clone())?.write_png(&files.png)?;
        fs::write(&files.yolo, export_yolo_labels(&labeled, &mapping)?).map_err(|e| Error::io(&files.yolo, e))?;
        let ann = VocAnnotation {
            folder: out_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            filename: format!("{name}.png"),
            width: mapping.image_width,
            height: mapping.image_height,
            depth: 3,
            objects: labeled.clone(),
        };
        fs::write(&files.voc, write_voc(&ann)).map_err(|e| Error::io(&files.voc, e))?;
        mapping.write_json(&files.mapping)?;
        out.push(files);
    }
    Ok(out)
}

fn truth_box(part: &ScalogramGrid, mapping: &PixelMapping, t0: f64, t1: f64) -> Result<BBox> {
    let rate = part.sample_rate();
    let c0 = (((t0 - part.time_origin()) * rate).floor().max(0.0) as usize).min(part.cols());
    let c1 = (((t1 - part.time_origin()) * rate).ceil().max(0.0) as usize).min(part.cols());
    let active: Vec<usize> =
        (0..part.rows()).filter(|&r| part.magnitude_row(r)[c0..c1].iter().any(|&v| v > 0.0)).collect();
    let h = mapping.image_height as f64;
    let px_per_row = h / part.rows() as f64;
    let (y0, y1) = match (active.first(), active.last()) {
        (Some(&lo), Some(&hi)) => (lo as f64 * px_per_row, ((hi + 1) as f64 * px_per_row).min(h)),
        _ => (0.0, h),
    };
    BBox::new(mapping.time_to_px(t0)?, y0, mapping.time_to_px(t1)?, y1)
}
