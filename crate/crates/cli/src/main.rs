//! `scalodet` command-line front end.
//!
//! Every stage reads and writes plain files so the full flow can be run
//! piecewise; `pipeline` runs the same stages in memory.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use scalodet::bandfilter::CalibrationPool;
use scalodet::detector::{export_training_config, export_yolo_detections, TrainingConfig};
use scalodet::mapback::{read_results, write_results, EventInterval};
use scalodet::metrics::{evaluate, read_ground_truth, write_ground_truth, GroundTruth};
use scalodet::pipeline::{self, DetectionsFile, GridMeta, PipelineConfig};
use scalodet::scalogram::{render_with_mapping, segment, PixelMapping};
use scalodet::synth::{dataset_split, generate_corpus, generate_test, CorpusManifest, CorpusPreset, SynthSpec};
use scalodet::timeseries::{load_csv, TimeSeries};
use scalodet::wavelet::{read_dump, write_coefficient_dump, write_magnitude_dump};
use scalodet::Error;

const MANIFEST_FILE: &str = "manifest.json";
const GROUND_TRUTH_FILE: &str = "ground_truth.json";
const RESULTS_FILE: &str = "results.json";
const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "scalodet", version, about = "Detect frequency events in sensor recordings through wavelet scalograms")]
struct Cli {
    /// Print structured JSON results on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Maximum number of recordings processed in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Pipeline configuration (JSON). Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override detector.cs_threshold.
    #[arg(long)]
    cs: Option<f64>,
    /// Override filter.c1 (needs --c2).
    #[arg(long)]
    c1: Option<f64>,
    /// Override filter.c2 (needs --c1).
    #[arg(long)]
    c2: Option<f64>,
    /// Override segment.max_s.
    #[arg(long)]
    segment_max_s: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                require(path)?;
                PipelineConfig::read(path)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(cs) = self.cs {
            cfg.detector.cs_threshold = cs;
        }
        match (self.c1, self.c2) {
            (Some(c1), Some(c2)) => cfg.filter = Some(scalodet::bandfilter::FilterBand { c1, c2 }),
            (None, None) => {}
            _ => return Err(config_error("filter", "--c1 and --c2 must be given together")),
        }
        if let Some(s) = self.segment_max_s {
            cfg.segment.max_s = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic recordings: one spec, or a whole corpus with --corpus.
    Synth {
        #[arg(long, conflicts_with = "corpus")]
        spec: Option<PathBuf>,
        #[arg(long)]
        corpus: bool,
        /// Corpus preset (JSON); the built-in preset is used when omitted.
        #[arg(long, requires = "corpus")]
        preset: Option<PathBuf>,
        /// Test id for --spec; defaults to the spec file stem.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the filter band to the events of a synthetic corpus and write a config.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// File listing the test ids to calibrate on, one per line.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CSV recordings -> complex coefficient dumps.
    Transform {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coefficient dumps -> band-filtered magnitude dumps (and PNG parts with --png).
    Filter {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: bool,
    },
    /// Filtered dumps -> detections per image part.
    Detect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write YOLO text detections per part.
        #[arg(long)]
        yolo: bool,
    },
    /// Detections -> event intervals in recording time.
    Map {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Results file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score event intervals against ground truth.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// transform -> filter -> detect -> map (-> eval with --truth) in one go.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        inputs: Vec<PathBuf>,
        /// Run every recording of a synthetic corpus directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training images with YOLO/VOC labels and mapping sidecars.
    ExportLabels {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/val/inference split of test ids.
    Split {
        #[arg(long, conflicts_with = "list")]
        manifest: Option<PathBuf>,
        /// File with one test id per line.
        #[arg(long)]
        list: Option<PathBuf>,
        /// List the PNG parts of each test found in this directory instead of ids.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value = "0.55,0.15,0.30")]
        fractions: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the detector training configuration.
    TrainConfig {
        /// Directory holding train.txt, val.txt and inference.txt.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_error(field: &str, message: &str) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io { path: path.into(), source: std::io::Error::new(ErrorKind::NotFound, "input does not exist") })
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn write_text(path: &Path, text: String) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_text(path: &Path) -> Result<String, Error> {
    require(path)?;
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Recording id of an input path: the file name up to its first dot.
fn stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_series(path: &Path, cfg: &PipelineConfig) -> Result<TimeSeries, Error> {
    require(path)?;
    load_csv(path, &cfg.io.column_spec()?)
}

fn sorted(mut intervals: Vec<EventInterval>) -> Vec<EventInterval> {
    intervals.sort_by(|a, b| {
        a.source_id.cmp(&b.source_id).then(a.start.total_cmp(&b.start)).then(a.end.total_cmp(&b.end))
    });
    intervals
}

fn read_manifest(path: &Path) -> Result<CorpusManifest, Error> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn read_id_list(path: &Path) -> Result<Vec<String>, Error> {
    Ok(read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn parse_fractions(text: &str) -> Result<(f64, f64, f64), Error> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Argument(format!("--fractions: {e}")))?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Argument("--fractions needs three comma-separated values".into())),
    }
}

#[derive(Serialize)]
struct Written {
    files: Vec<PathBuf>,
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    match cli.command {
        Command::Synth { spec, corpus, preset, id, out } => {
            create_dir(&out)?;
            if corpus {
                let preset: CorpusPreset = match preset {
                    Some(p) => serde_json::from_str(&read_text(&p)?)?,
                    None => CorpusPreset::default(),
                };
                let manifest = generate_corpus(&preset)?;
                let truths = manifest
                    .tests
                    .par_iter()
                    .map(|t| {
                        let (ts, truth) = generate_test(&t.spec, &t.id)?;
                        ts.write_csv(&out.join(format!("{}.csv", t.id)))?;
                        Ok(truth)
                    })
                    .collect::<Result<Vec<GroundTruth>, Error>>()?;
                write_text(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
                write_ground_truth(&out.join(GROUND_TRUTH_FILE), &truths)?;
                let events: usize = truths.iter().map(|t| t.intervals.len()).sum();
                Ok(json!({ "tests": truths.len(), "events": events, "dir": out }))
            } else {
                let path = spec.ok_or_else(|| Error::Argument("synth needs --spec or --corpus".into()))?;
                let spec: SynthSpec = serde_json::from_str(&read_text(&path)?)?;
                let id = id.unwrap_or_else(|| stem(&path));
                let (ts, truth) = generate_test(&spec, &id)?;
                let csv = out.join(format!("{id}.csv"));
                let gt = out.join(format!("{id}.truth.json"));
                ts.write_csv(&csv)?;
                write_ground_truth(&gt, &[truth])?;
                Ok(serde_json::to_value(Written { files: vec![csv, gt] })?)
            }
        }
        Command::Calibrate { cfg, manifest, ids, out } => {
            let mut config = cfg.load()?;
            let m = read_manifest(&manifest)?;
            let dir = manifest.parent().unwrap_or(Path::new("."));
            let wanted = match ids {
                Some(p) => read_id_list(&p)?,
                None => m.ids(),
            };
            let pools = m
                .tests
                .par_iter()
                .filter(|t| wanted.contains(&t.id))
                .map(|t| {
                    let ts = load_series(&dir.join(format!("{}.csv", t.id)), &config)?;
                    let mut pool = CalibrationPool::new();
                    pipeline::pool_synthetic(&mut pool, &ts, &t.spec, &config)?;
                    Ok(pool)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let mut all = CalibrationPool::new();
            for p in pools {
                all.merge(p);
            }
            let band = all.band(config.calibration.coverage, config.calibration.margin)?;
            config.filter = Some(band);
            write_text(&out, config.to_json()? + "\n")?;
            Ok(json!({ "c1": band.c1, "c2": band.c2, "config": out }))
        }
        Command::Transform { cfg, inputs, out } => {
            let config = cfg.load()?;
            create_dir(&out)?;
            let files = inputs
                .par_iter()
                .map(|input| {
                    let ts = load_series(input, &config)?;
                    let id = stem(input);
                    let grid = pipeline::transform(&ts, &config)?;
                    let dump = out.join(format!("{id}.cwt"));
                    write_coefficient_dump(&grid, &dump)?;
                    GridMeta { source_id: id, time_origin: grid.time_origin(), band: None }.write(&sidecar(&dump))?;
                    Ok(dump)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(serde_json::to_value(Written { files })?)
        }
        Command::Filter { cfg, inputs, out, png } => {
            let config = cfg.load()?;
            let band = config.band()?;
            create_dir(&out)?;
            let files = inputs
                .par_iter()
                .map(|input| {
                    require(input)?;
                    let meta = GridMeta::read(&sidecar(input))?;
                    let grid = read_dump(input, meta.time_origin, None)?;
                    let filtered = pipeline::filter(&grid, &config)?;
                    let dump = out.join(format!("{}.mag", meta.source_id));
                    write_magnitude_dump(&filtered, &dump)?;
                    let mut files = vec![dump.clone()];
                    if png {
                        let spec = config.render_spec();
                        for (k, part) in segment(&filtered, config.segment.max_s, None)?.iter().enumerate() {
                            let name = pipeline::part_name(&meta.source_id, k);
                            let mapping = PixelMapping::for_span(
                                part,
                                meta.time_origin,
                                config.mapping.px_per_second,
                                config.mapping.height,
                                &meta.source_id,
                            )?;
                            let png_path = out.join(format!("{name}.png"));
                            render_with_mapping(part, &spec, mapping.clone())?.write_png(&png_path)?;
                            mapping.write_json(&out.join(format!("{name}.json")))?;
                            files.push(png_path);
                        }
                    }
                    GridMeta { band: Some(band), ..meta }.write(&sidecar(&dump))?;
                    Ok(files)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(serde_json::to_value(Written { files: files.concat() })?)
        }
        Command::Detect { cfg, inputs, out, yolo } => {
            let config = cfg.load()?;
            create_dir(&out)?;
            let results = inputs
                .par_iter()
                .map(|input| {
                    require(input)?;
                    let meta = GridMeta::read(&sidecar(input))?;
                    let band = meta.band.ok_or_else(|| Error::State(format!("{} is not band-filtered", input.display())))?;
                    let filtered = read_dump(input, meta.time_origin, Some(band))?;
                    let parts = pipeline::detect(&filtered, meta.time_origin, &meta.source_id, &config)?;
                    let path = out.join(format!("{}.det.json", meta.source_id));
                    if yolo {
                        for p in &parts {
                            write_text(&out.join(format!("{}.txt", p.name)), export_yolo_detections(&p.detections, &p.mapping)?)?;
                        }
                    }
                    let count: usize = parts.iter().map(|p| p.detections.len()).sum();
                    DetectionsFile { source_id: meta.source_id, parts }.write(&path)?;
                    Ok(json!({ "file": path, "detections": count }))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(json!({ "outputs": results }))
        }
        Command::Map { cfg, inputs, out } => {
            let config = cfg.load()?;
            let mut all = Vec::new();
            for input in &inputs {
                require(input)?;
                let dets = DetectionsFile::read(input)?;
                all.extend(pipeline::map_back(&dets.parts, &config)?);
            }
            let all = sorted(all);
            write_results(&out, &all)?;
            Ok(serde_json::to_value(&all)?)
        }
        Command::Eval { cfg, results, truth, out } => {
            let config = cfg.load()?;
            require(&results)?;
            require(&truth)?;
            let preds = read_results(&results)?;
            let truths = read_ground_truth(&truth)?;
            let report = evaluate(&preds, &truths, config.eval.overlap_threshold)?;
            if let Some(out) = out {
                write_text(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if !cli.json {
                print!("{}", report.to_table());
            }
            Ok(serde_json::to_value(&report)?)
        }
        Command::Pipeline { cfg, inputs, manifest, truth, out } => {
            let config = cfg.load()?;
            let mut inputs = inputs;
            let mut truth = truth;
            if let Some(m) = &manifest {
                let dir = m.parent().unwrap_or(Path::new("."));
                inputs.extend(read_manifest(m)?.ids().iter().map(|id| dir.join(format!("{id}.csv"))));
                if truth.is_none() && dir.join(GROUND_TRUTH_FILE).exists() {
                    truth = Some(dir.join(GROUND_TRUTH_FILE));
                }
            }
            if inputs.is_empty() {
                return Err(Error::Argument("pipeline needs input recordings or --manifest".into()));
            }
            for input in &inputs {
                require(input)?;
            }
            create_dir(&out)?;
            let runs = inputs
                .par_iter()
                .map(|input| {
                    let ts = load_series(input, &config)?;
                    Ok(pipeline::run(&ts, &stem(input), &config)?.intervals)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let all = sorted(runs.concat());
            let results_path = out.join(RESULTS_FILE);
            write_results(&results_path, &all)?;
            let mut summary = json!({ "results": results_path, "intervals": all.len() });
            if let Some(t) = truth {
                require(&t)?;
                let truths = read_ground_truth(&t)?;
                let report = evaluate(&all, &truths, config.eval.overlap_threshold)?;
                let report_path = out.join(REPORT_FILE);
                write_text(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
                if !cli.json {
                    print!("{}", report.to_table());
                }
                summary["report"] = json!(report_path);
                summary["counts"] = serde_json::to_value(report.counts)?;
                summary["metrics"] = serde_json::to_value(report.metrics)?;
            }
            Ok(summary)
        }
        Command::ExportLabels { cfg, inputs, truth, out } => {
            let config = cfg.load()?;
            require(&truth)?;
            let truths = read_ground_truth(&truth)?;
            let parts = inputs
                .par_iter()
                .map(|input| {
                    let id = stem(input);
                    let ts = load_series(input, &config)?;
                    let gt = truths
                        .iter()
                        .find(|t| t.source_id == id)
                        .ok_or_else(|| Error::Argument(format!("no ground truth for '{id}'")))?;
                    pipeline::export_labels(&ts, gt, &config, &out)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(json!({ "parts": parts.concat() }))
        }
        Command::Split { manifest, list, images, fractions, seed, out } => {
            let ids = match (manifest, list) {
                (Some(m), _) => read_manifest(&m)?.ids(),
                (None, Some(l)) => read_id_list(&l)?,
                (None, None) => return Err(Error::Argument("split needs --manifest or --list".into())),
            };
            let split = dataset_split(&ids, parse_fractions(&fractions)?, seed)?;
            create_dir(&out)?;
            let listing = |ids: &[String]| -> Result<String, Error> {
                let mut lines = Vec::new();
                match &images {
                    Some(dir) => {
                        require(dir)?;
                        let mut names: Vec<String> = fs::read_dir(dir)
                            .map_err(|e| Error::Io { path: dir.clone(), source: e })?
                            .filter_map(|e| e.ok())
                            .map(|e| e.file_name().to_string_lossy().into_owned())
                            .filter(|n| n.ends_with(".png"))
                            .collect();
                        names.sort();
                        for id in ids {
                            let prefix = format!("{id}_p");
                            for n in names.iter().filter(|n| n.starts_with(&prefix)) {
                                lines.push(dir.join(n).display().to_string());
                            }
                        }
                    }
                    None => lines.extend(ids.iter().cloned()),
                }
                Ok(lines.into_iter().map(|l| l + "\n").collect())
            };
            for (name, part) in [("train", &split.train), ("val", &split.val), ("inference", &split.inference)] {
                write_text(&out.join(format!("{name}.txt")), listing(part)?)?;
            }
            Ok(json!({ "train": split.train.len(), "val": split.val.len(), "inference": split.inference.len() }))
        }
        Command::TrainConfig { dataset, out } => {
            create_dir(&out)?;
            let path = export_training_config(&out, &TrainingConfig::new(&dataset))?;
            Ok(json!({ "config": path }))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 3,
        _ => 1,
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Format(_) => "format",
        Error::Data { .. } => "data",
        Error::Config { .. } => "config",
        Error::Argument(_) => "argument",
        Error::State(_) => "state",
        Error::Parse { .. } => "parse",
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => "missing_input",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Image(_) => "image",
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    match e {
        Error::Config { field, .. } => v["field"] = json!(field),
        Error::Io { path, .. } => v["path"] = json!(path),
        Error::Data { row: Some(r), .. } => v["row"] = json!(r),
        _ => {}
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    let json_out = cli.json;
    match run(cli) {
        Ok(value) => {
            if json_out {
                println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
