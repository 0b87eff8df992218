//! Back-projection of pixel detections onto the time and frequency axes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{BBox, Detection};
use crate::error::{Error, Result};
use crate::scalogram::PixelMapping;

pub const DEFAULT_MERGE_GAP_S: f64 = 0.05;

/// A detected event in global recording time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventInterval {
    pub source_id: String,
    #[serde(rename = "start_s")]
    pub start: f64,
    #[serde(rename = "end_s")]
    pub end: f64,
    #[serde(rename = "f_low_hz")]
    pub f_low: f64,
    #[serde(rename = "f_high_hz")]
    pub f_high: f64,
    pub confidence: f64,
}

impl EventInterval {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Maps a pixel box to a time interval and frequency band.
///
/// `x_min`/`x_max` give start and end; the top edge `y_min` gives `f_high`
/// and the bottom edge `y_max` gives `f_low`.
pub fn to_event_interval(det: &Detection, mapping: &PixelMapping) -> Result<EventInterval> {
    let b = det.bbox;
    if !b.within(mapping.image_width as f64, mapping.image_height as f64) {
        return Err(Error::arg(format!(
            "box {b:?} outside {}x{} mapping",
            mapping.image_width, mapping.image_height
        )));
    }
    Ok(EventInterval {
        source_id: mapping.source_id.clone(),
        start: mapping.px_to_time(b.x_min)?,
        end: mapping.px_to_time(b.x_max)?,
        f_low: mapping.px_to_frequency(b.y_max)?,
        f_high: mapping.px_to_frequency(b.y_min)?,
        confidence: det.confidence,
    })
}

/// Inverse of [`to_event_interval`]: the pixel box an interval occupies.
pub fn interval_to_bbox(interval: &EventInterval, mapping: &PixelMapping) -> Result<BBox> {
    BBox::new(
        mapping.time_to_px(interval.start)?,
        mapping.frequency_to_px(interval.f_high)?,
        mapping.time_to_px(interval.end)?,
        mapping.frequency_to_px(interval.f_low)?,
    )
}

/// Joins intervals of the same source separated by at most `gap_s`.
///
/// Merged intervals take the outer time bounds, the union frequency band
/// and the highest confidence. Output is sorted by source, then start.
pub fn merge_adjacent(intervals: &[EventInterval], gap_s: f64) -> Vec<EventInterval> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });
    let mut out: Vec<EventInterval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if last.source_id == iv.source_id && iv.start - last.end <= gap_s => {
                last.end = last.end.max(iv.end);
                last.f_low = last.f_low.min(iv.f_low);
                last.f_high = last.f_high.max(iv.f_high);
                last.confidence = last.confidence.max(iv.confidence);
            }
            _ => out.push(iv),
        }
    }
    out
}

/// Keeps intervals whose band overlaps `[f_low, f_high]`.
pub fn gate_by_frequency(intervals: Vec<EventInterval>, f_low: f64, f_high: f64) -> Vec<EventInterval> {
    intervals.into_iter().filter(|iv| iv.f_high >= f_low && iv.f_low <= f_high).collect()
}

pub fn write_results(path: &Path, intervals: &[EventInterval]) -> Result<()> {
    let text = serde_json::to_string_pretty(intervals)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<EventInterval>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectionSource;

    fn mapping(origin: f64, width: u32) -> PixelMapping {
        PixelMapping {
            time_origin: origin,
            px_per_second: 102.4,
            f_min: 0.0272,
            f_max: 6.951,
            image_height: 512,
            image_width: width,
            source_id: "lss_017".into(),
        }
    }

    fn det(x0: f64, x1: f64) -> Detection {
        Detection {
            bbox: BBox::new(x0, 100.0, x1, 200.0).unwrap(),
            confidence: 0.8,
            class_id: 0,
            source: DetectionSource::Builtin,
        }
    }

    fn iv(start: f64, end: f64) -> EventInterval {
        EventInterval { source_id: "s".into(), start, end, f_low: 3.0, f_high: 6.0, confidence: 0.5 }
    }

    #[test]
    fn full_width_box() {
        let e = to_event_interval(&det(0.0, 4096.0), &mapping(0.0, 4096)).unwrap();
        assert_eq!((e.start, e.end), (0.0, 40.0));
        assert_eq!(e.source_id, "lss_017");
        assert!(e.f_low < e.f_high);
    }

    #[test]
    fn figure_box_projects_to_reported_interval() {
        let d = det(9.70 * 102.4, 10.38 * 102.4);
        let e = to_event_interval(&d, &mapping(0.0, 4096)).unwrap();
        assert!((e.start - 9.70).abs() < 1e-9 && (e.end - 10.38).abs() < 1e-9);
        let e5 = to_event_interval(&d, &mapping(5.0, 4096)).unwrap();
        assert!((e5.start - 14.70).abs() < 1e-9 && (e5.end - 15.38).abs() < 1e-9);
    }

    #[test]
    fn box_outside_mapping_is_rejected() {
        assert!(to_event_interval(&det(4000.0, 4200.0), &mapping(0.0, 4096)).is_err());
    }

    #[test]
    fn interval_box_inverse() {
        let m = mapping(3.0, 4096);
        let e = to_event_interval(&det(123.4, 567.8), &m).unwrap();
        let b = interval_to_bbox(&e, &m).unwrap();
        assert!((b.x_min - 123.4).abs() < 1e-9 && (b.x_max - 567.8).abs() < 1e-9);
        assert!((b.y_min - 100.0).abs() < 1e-9 && (b.y_max - 200.0).abs() < 1e-9);
    }

    #[test]
    fn merge_cases() {
        let apart = vec![iv(1.0, 2.0), iv(3.0, 4.0)];
        assert_eq!(merge_adjacent(&apart, 0.05), apart);
        assert_eq!(merge_adjacent(&[iv(1.0, 2.0)], 0.05), vec![iv(1.0, 2.0)]);

        let mut a = iv(39.8, 40.0);
        a.confidence = 0.4;
        let mut b = iv(40.0, 40.6);
        b.confidence = 0.7;
        b.f_high = 6.5;
        let merged = merge_adjacent(&[b, a], 0.0);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start, merged[0].end), (39.8, 40.6));
        assert_eq!(merged[0].confidence, 0.7);
        assert_eq!(merged[0].f_high, 6.5);
    }

    #[test]
    fn merge_respects_source_and_gap() {
        let mut other = iv(2.01, 3.0);
        other.source_id = "t".into();
        let out = merge_adjacent(&[iv(1.0, 2.0), other, iv(2.2, 2.5)], 0.05);
        assert_eq!(out.len(), 3);
        let close = merge_adjacent(&[iv(1.0, 2.0), iv(2.04, 2.5)], 0.05);
        assert_eq!(close.len(), 1);
    }

    #[test]
    fn frequency_gate() {
        let kept = gate_by_frequency(vec![iv(0.0, 1.0)], 5.0, 7.0);
        assert_eq!(kept.len(), 1);
        assert!(gate_by_frequency(vec![iv(0.0, 1.0)], 0.1, 1.0).is_empty());
    }

    #[test]
    fn results_file_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_results(&p, &[iv(1.0, 2.0)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        for key in ["source_id", "start_s", "end_s", "f_low_hz", "f_high_hz", "confidence"] {
            assert!(text.contains(key), "{key}");
        }
        assert_eq!(read_results(&p).unwrap(), vec![iv(1.0, 2.0)]);
    }
}
