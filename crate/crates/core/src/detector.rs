//! Event localisation in filtered scalograms.
//!
//! The built-in detector labels 8-connected foreground components of a
//! band-filtered grid. External detectors plug in through YOLO text and
//! LabelImg-style Pascal VOC XML files.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalogram::PixelMapping;
use crate::wavelet::ScalogramGrid;

/// Class table; the index is the class id.
pub const CLASS_NAMES: [&str; 1] = ["ldw_event"];
pub const DEFAULT_MIN_AREA: usize = 64;
pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_CS_THRESHOLD: f64 = 0.40;

/// Slack allowed when checking that a box lies inside the image.
const BOUNDS_SLACK: f64 = 1e-6;

pub fn class_id(name: &str) -> Option<u32> {
    CLASS_NAMES.iter().position(|&c| c == name).map(|i| i as u32)
}

pub fn class_name(id: u32) -> Option<&'static str> {
    CLASS_NAMES.get(id as usize).copied()
}

/// Axis-aligned pixel box, `x_min < x_max`, `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(Error::arg("box coordinates must be finite"));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::arg(format!("degenerate box ({x_min}, {y_min}, {x_max}, {y_max})")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= -BOUNDS_SLACK
            && self.y_min >= -BOUNDS_SLACK
            && self.x_max <= width + BOUNDS_SLACK
            && self.y_max <= height + BOUNDS_SLACK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: u32,
    pub source: DetectionSource,
}

/// Ground-truth style box as drawn in an annotation tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_name: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub min_area: usize,
    pub cs_threshold: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self { min_area: DEFAULT_MIN_AREA, cs_threshold: DEFAULT_CS_THRESHOLD }
    }
}

/// One 8-connected foreground component, in grid cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub cells: usize,
    pub sum: f64,
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl Component {
    pub fn bbox_cells(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // smaller index stays root so the result is independent of merge order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Labels 8-connected components of cells with `values > 0` (row-major buffer).
///
/// Components are returned in order of their first cell in row-major scan.
pub fn label_components(values: &[f64], rows: usize, cols: usize) -> Vec<Component> {
    debug_assert_eq!(values.len(), rows * cols);
    let fg = |i: usize| values[i] > 0.0;
    let mut parent: Vec<usize> = (0..values.len()).collect();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !fg(i) {
                continue;
            }
            if c > 0 && fg(i - 1) {
                union(&mut parent, i, i - 1);
            }
            if r > 0 {
                let up = i - cols;
                if fg(up) {
                    union(&mut parent, i, up);
                }
                if c > 0 && fg(up - 1) {
                    union(&mut parent, i, up - 1);
                }
                if c + 1 < cols && fg(up + 1) {
                    union(&mut parent, i, up + 1);
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; values.len()];
    let mut comps: Vec<Component> = Vec::new();
    for i in 0..values.len() {
        if !fg(i) {
            continue;
        }
        let root = find(&mut parent, i);
        let (r, c) = (i / cols, i % cols);
        if slot[root] == usize::MAX {
            slot[root] = comps.len();
            comps.push(Component { cells: 0, sum: 0.0, row_min: r, row_max: r, col_min: c, col_max: c });
        }
        let comp = &mut comps[slot[root]];
        comp.cells += 1;
        comp.sum += values[i];
        comp.row_min = comp.row_min.min(r);
        comp.row_max = comp.row_max.max(r);
        comp.col_min = comp.col_min.min(c);
        comp.col_max = comp.col_max.max(c);
    }
    comps
}

fn by_confidence(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Built-in detector over a band-filtered grid.
///
/// Each component with at least `min_area` cells becomes one detection with
/// confidence `fill_ratio * mean_magnitude / c2`, where `fill_ratio` is the
/// component's share of its bounding box and the mean is taken over the
/// component's cells. Detections below `cs_threshold` are dropped; the rest
/// are sorted by descending confidence. Boxes are expressed in the pixel
/// frame of `mapping`, which must describe this grid.
pub fn detect_blobs(filtered: &ScalogramGrid, mapping: &PixelMapping, params: &BlobParams) -> Result<Vec<Detection>> {
    let band = filtered
        .band()
        .ok_or_else(|| Error::State("blob detection needs a band-filtered grid".into()))?;
    if !(0.0..=1.0).contains(&params.cs_threshold) {
        return Err(Error::arg(format!("cs_threshold must lie in [0, 1], got {}", params.cs_threshold)));
    }
    let (rows, cols) = (filtered.rows(), filtered.cols());
    let width = mapping.image_width as f64;
    let height = mapping.image_height as f64;
    let px_per_col = mapping.px_per_second / filtered.sample_rate();
    let offset = (filtered.time_origin() - mapping.time_origin) * mapping.px_per_second;
    let px_per_row = height / rows as f64;

    let mut dets: Vec<Detection> = label_components(filtered.magnitudes(), rows, cols)
        .into_iter()
        .filter(|comp| comp.cells >= params.min_area)
        .filter_map(|comp| {
            let fill = comp.cells as f64 / comp.bbox_cells() as f64;
            let mean = comp.sum / comp.cells as f64;
            let confidence = (fill * mean / band.c2).clamp(0.0, 1.0);
            let bbox = BBox {
                x_min: (offset + comp.col_min as f64 * px_per_col).clamp(0.0, width),
                x_max: (offset + (comp.col_max + 1) as f64 * px_per_col).clamp(0.0, width),
                y_min: comp.row_min as f64 * px_per_row,
                y_max: ((comp.row_max + 1) as f64 * px_per_row).min(height),
            };
            (confidence >= params.cs_threshold && bbox.x_min < bbox.x_max).then_some(Detection {
                bbox,
                confidence,
                class_id: 0,
                source: DetectionSource::Builtin,
            })
        })
        .collect();
    dets.sort_by(by_confidence);
    Ok(dets)
}

/// Greedy non-maximum suppression.
///
/// Repeatedly keeps the most confident remaining box and removes every box
/// whose IoU with it exceeds `iou_threshold`. Equal confidences are ordered
/// by smaller `x_min`, then smaller `y_min`.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(by_confidence);
    let mut keep: Vec<Detection> = Vec::with_capacity(dets.len());
    for det in dets {
        if keep.iter().all(|k| k.bbox.iou(&det.bbox) <= iou_threshold) {
            keep.push(det);
        }
    }
    keep
}

fn yolo_geometry(bbox: &BBox, mapping: &PixelMapping) -> Result<[f64; 4]> {
    let (w, h) = (mapping.image_width as f64, mapping.image_height as f64);
    if !bbox.within(w, h) {
        return Err(Error::arg(format!("box {bbox:?} outside {w}x{h} image")));
    }
    Ok([
        (bbox.x_min + bbox.x_max) / 2.0 / w,
        (bbox.y_min + bbox.y_max) / 2.0 / h,
        bbox.width() / w,
        bbox.height() / h,
    ])
}

/// YOLO label text: one `class cx cy w h` line per box, normalised, 6 decimals.
pub fn export_yolo_labels(boxes: &[LabeledBox], mapping: &PixelMapping) -> Result<String> {
    let mut out = String::new();
    for b in boxes {
        let id = class_id(&b.class_name).ok_or_else(|| Error::arg(format!("unknown class '{}'", b.class_name)))?;
        let [cx, cy, w, h] = yolo_geometry(&b.bbox, mapping)?;
        writeln!(out, "{id} {cx:.6} {cy:.6} {w:.6} {h:.6}").unwrap();
    }
    Ok(out)
}

/// YOLO prediction text with a trailing confidence column.
///
/// Confidences are written in shortest round-trip form so re-importing
/// reproduces them exactly.
pub fn export_yolo_detections(dets: &[Detection], mapping: &PixelMapping) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        let [cx, cy, w, h] = yolo_geometry(&d.bbox, mapping)?;
        writeln!(out, "{} {cx:.6} {cy:.6} {w:.6} {h:.6} {}", d.class_id, d.confidence).unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterchangeFormat {
    YoloText,
    VocXml,
}

/// Reads detections written by an external detector (YOLO text) or an
/// annotation tool (VOC XML, confidence 1.0).
pub fn import_detections(path: &Path, format: InterchangeFormat, mapping: &PixelMapping) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    match format {
        InterchangeFormat::YoloText => parse_yolo(&text, mapping, &label),
        InterchangeFormat::VocXml => {
            let ann = parse_voc(&text, &label)?;
            ann.objects
                .iter()
                .map(|b| {
                    let id = class_id(&b.class_name)
                        .ok_or_else(|| Error::data(format!("{label}: unknown class '{}'", b.class_name)))?;
                    Ok(Detection { bbox: b.bbox, confidence: 1.0, class_id: id, source: DetectionSource::External })
                })
                .collect()
        }
    }
}

/// Parses YOLO text lines `class cx cy w h [conf]`; blank lines are skipped.
pub fn parse_yolo(text: &str, mapping: &PixelMapping, label: &str) -> Result<Vec<Detection>> {
    let (w, h) = (mapping.image_width as f64, mapping.image_height as f64);
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let loc = || format!("{label}:{}", n + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 && fields.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 5 or 6 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("bad class id '{}'", fields[0])))?;
        let mut nums = [1.0f64; 5];
        for (slot, raw) in nums.iter_mut().zip(&fields[1..]) {
            *slot = raw.parse().map_err(|_| Error::parse(loc(), format!("bad number '{raw}'")))?;
            if !(0.0..=1.0).contains(slot) {
                return Err(Error::data(format!("{}: value {raw} outside [0, 1]", loc())));
            }
        }
        let [cx, cy, bw, bh, confidence] = nums;
        let bbox = BBox {
            x_min: ((cx - bw / 2.0) * w).clamp(0.0, w),
            x_max: ((cx + bw / 2.0) * w).clamp(0.0, w),
            y_min: ((cy - bh / 2.0) * h).clamp(0.0, h),
            y_max: ((cy + bh / 2.0) * h).clamp(0.0, h),
        };
        if !(bbox.x_min < bbox.x_max && bbox.y_min < bbox.y_max) {
            return Err(Error::data(format!("{}: box has zero extent", loc())));
        }
        out.push(Detection { bbox, confidence, class_id, source: DetectionSource::External });
    }
    Ok(out)
}

/// Fields of a LabelImg Pascal VOC annotation that this crate uses.
#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub folder: String,
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<LabeledBox>,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text(node: roxmltree::Node<'_, '_>, name: &str, loc: &str) -> Result<String> {
    child(node, name)
        .map(|c| c.text().unwrap_or("").trim().to_string())
        .ok_or_else(|| Error::parse(format!("{loc}/{name}"), "missing element"))
}

fn child_num<T: std::str::FromStr>(node: roxmltree::Node<'_, '_>, name: &str, loc: &str) -> Result<T> {
    let raw = child_text(node, name, loc)?;
    raw.parse().map_err(|_| Error::parse(format!("{loc}/{name}"), format!("bad number '{raw}'")))
}

pub fn parse_voc(text: &str, label: &str) -> Result<VocAnnotation> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::parse(label, e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::parse(label, format!("root element is <{}>, expected <annotation>", root.tag_name().name())));
    }
    let base = format!("{label}:annotation");
    let filename = child_text(root, "filename", &base)?;
    let folder = child(root, "folder").and_then(|n| n.text()).unwrap_or("").trim().to_string();
    let size = child(root, "size").ok_or_else(|| Error::parse(format!("{base}/size"), "missing element"))?;
    let size_loc = format!("{base}/size");
    let width = child_num(size, "width", &size_loc)?;
    let height = child_num(size, "height", &size_loc)?;
    let depth = child(size, "depth").map_or(Ok(3), |_| child_num(size, "depth", &size_loc))?;

    let mut objects = Vec::new();
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let loc = format!("{base}/object[{i}]");
        let class_name = child_text(obj, "name", &loc)?;
        let bnd = child(obj, "bndbox").ok_or_else(|| Error::parse(format!("{loc}/bndbox"), "missing element"))?;
        let bloc = format!("{loc}/bndbox");
        let coords: [f64; 4] = [
            child_num(bnd, "xmin", &bloc)?,
            child_num(bnd, "ymin", &bloc)?,
            child_num(bnd, "xmax", &bloc)?,
            child_num(bnd, "ymax", &bloc)?,
        ];
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| Error::parse(bloc.clone(), e.to_string()))?;
        objects.push(LabeledBox { bbox, class_name, image_ref: filename.clone() });
    }
    Ok(VocAnnotation { folder, filename, width, height, depth, objects })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Serialises an annotation the way LabelImg writes it (integer pixel coordinates).
pub fn write_voc(ann: &VocAnnotation) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    writeln!(s, "\t<folder>{}</folder>", xml_escape(&ann.folder)).unwrap();
    writeln!(s, "\t<filename>{}</filename>", xml_escape(&ann.filename)).unwrap();
    writeln!(s, "\t<path>{}</path>", xml_escape(&format!("{}/{}", ann.folder, ann.filename))).unwrap();
    s.push_str("\t<source>\n\t\t<database>Unknown</database>\n\t</source>\n");
    writeln!(
        s,
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>{}</depth>\n\t</size>",
        ann.width, ann.height, ann.depth
    )
    .unwrap();
    s.push_str("\t<segmented>0</segmented>\n");
    for obj in &ann.objects {
        let b = obj.bbox;
        writeln!(
            s,
            "\t<object>\n\t\t<name>{}</name>\n\t\t<pose>Unspecified</pose>\n\t\t<truncated>0</truncated>\n\t\t<difficult>0</difficult>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>",
            xml_escape(&obj.class_name),
            b.x_min.round() as i64,
            b.y_min.round() as i64,
            b.x_max.round() as i64,
            b.y_max.round() as i64
        )
        .unwrap();
    }
    s.push_str("</annotation>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplitPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub inference: PathBuf,
}

/// Hyperparameters handed to an external detector trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub momentum: f64,
    pub weight_decay: f64,
    pub initial_lr: f64,
    pub optimizer: String,
    pub classes: Vec<String>,
    pub dataset: DatasetSplitPaths,
}

impl TrainingConfig {
    /// Defaults with split lists `train.txt`, `val.txt`, `inference.txt` under `dataset_dir`.
    pub fn new(dataset_dir: &Path) -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            momentum: 0.937,
            weight_decay: 0.0005,
            initial_lr: 0.01,
            optimizer: "sgd".into(),
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            dataset: DatasetSplitPaths {
                train: dataset_dir.join("train.txt"),
                val: dataset_dir.join("val.txt"),
                inference: dataset_dir.join("inference.txt"),
            },
        }
    }
}

pub const TRAINING_CONFIG_FILE: &str = "train_config.json";

/// Writes `train_config.json` into `dir` and returns its path.
pub fn export_training_config(dir: &Path, config: &TrainingConfig) -> Result<PathBuf> {
    let path = dir.join(TRAINING_CONFIG_FILE);
    let text = serde_json::to_string_pretty(config)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
