use scalodet::bandfilter::CalibrationPool;
use scalodet::mapback::{read_results, write_results};
use scalodet::pipeline::{self, DetectionsFile, GridMeta, PipelineConfig};
use scalodet::scalogram::{render, segment};
use scalodet::synth::{generate_test, Background, DriftTone, Envelope, SynthEvent, SynthSpec};
use scalodet::wavelet::{read_dump, write_coefficient_dump, write_magnitude_dump};

fn spec(events: Vec<SynthEvent>) -> SynthSpec {
    SynthSpec {
        duration: 60.0,
        sample_rate: 100.0,
        background: Background { noise_std: 0.1, drift: vec![DriftTone { freq: 0.4, amplitude: 0.02 }] },
        events,
        seed: 42,
    }
}

fn event(start: f64, duration: f64) -> SynthEvent {
    SynthEvent { start, duration, carrier_freq: 5.5, amplitude: 1.0, envelope: Envelope::default() }
}

fn calibrated() -> PipelineConfig {
    let s = spec(vec![event(12.0, 0.9), event(47.5, 0.7)]);
    let (ts, _) = generate_test(&s, "cal").unwrap();
    let mut cfg = PipelineConfig::default();
    let mut pool = CalibrationPool::new();
    pipeline::pool_synthetic(&mut pool, &ts, &s, &cfg).unwrap();
    cfg.filter = Some(pool.band(0.99, 0.10).unwrap());
    cfg
}

#[test]
fn zero_event_test_gives_empty_results() {
    let cfg = calibrated();
    let (ts, _) = generate_test(&SynthSpec { seed: 7, ..spec(vec![]) }, "quiet").unwrap();
    let run = pipeline::run(&ts, "quiet", &cfg).unwrap();
    assert!(run.intervals.is_empty());
}

#[test]
fn staged_file_handoff_equals_fused_run() {
    let cfg = calibrated();
    let s = SynthSpec { seed: 9, ..spec(vec![event(8.0, 0.8), event(39.6, 0.8), event(51.0, 1.0)]) };
    let (ts, _) = generate_test(&s, "st").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let fused = pipeline::run(&ts, "st", &cfg).unwrap();
    write_results(&d.join("fused.json"), &fused.intervals).unwrap();

    let grid = pipeline::transform(&ts, &cfg).unwrap();
    write_coefficient_dump(&grid, &d.join("st.cwt")).unwrap();
    let meta = GridMeta { source_id: "st".into(), time_origin: grid.time_origin(), band: None };
    meta.write(&d.join("st.cwt.json")).unwrap();

    let meta = GridMeta::read(&d.join("st.cwt.json")).unwrap();
    let grid = read_dump(&d.join("st.cwt"), meta.time_origin, None).unwrap();
    let filtered = pipeline::filter(&grid, &cfg).unwrap();
    write_magnitude_dump(&filtered, &d.join("st.mag")).unwrap();
    GridMeta { band: filtered.band(), ..meta }.write(&d.join("st.mag.json")).unwrap();

    let meta = GridMeta::read(&d.join("st.mag.json")).unwrap();
    let filtered = read_dump(&d.join("st.mag"), meta.time_origin, meta.band).unwrap();
    let parts = pipeline::detect(&filtered, ts.start_time(), "st", &cfg).unwrap();
    DetectionsFile { source_id: "st".into(), parts }.write(&d.join("st.det.json")).unwrap();

    let dets = DetectionsFile::read(&d.join("st.det.json")).unwrap();
    let intervals = pipeline::map_back(&dets.parts, &cfg).unwrap();
    write_results(&d.join("staged.json"), &intervals).unwrap();

    assert_eq!(fused.intervals.len(), 3);
    assert_eq!(read_results(&d.join("staged.json")).unwrap(), fused.intervals);
    assert_eq!(std::fs::read(d.join("staged.json")).unwrap(), std::fs::read(d.join("fused.json")).unwrap());
}

#[test]
fn renders_are_byte_identical_across_runs() {
    let cfg = calibrated();
    let (ts, _) = generate_test(&SynthSpec { seed: 11, ..spec(vec![event(20.0, 0.8)]) }, "png").unwrap();
    let bytes = || {
        let filtered = pipeline::filter(&pipeline::transform(&ts, &cfg).unwrap(), &cfg).unwrap();
        let parts = segment(&filtered, 40.0, None).unwrap();
        parts.iter().map(|p| render(p, &cfg.render_spec(), "png").unwrap().png_bytes().unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (bytes(), bytes());
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
}

#[test]
fn label_export_writes_one_set_per_event_part() {
    let cfg = calibrated();
    let s = SynthSpec { seed: 13, ..spec(vec![event(20.0, 0.8)]) };
    let (ts, truth) = generate_test(&s, "lab").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let parts = pipeline::export_labels(&ts, &truth, &cfg, dir.path()).unwrap();
    assert_eq!(parts.len(), 1);
    let p = &parts[0];
    assert_eq!(p.name, "lab_p00");
    assert_eq!(p.boxes, 1);
    for f in [&p.png, &p.yolo, &p.voc, &p.mapping] {
        assert!(f.exists(), "{f:?}");
    }
    let yolo = std::fs::read_to_string(&p.yolo).unwrap();
    let fields: Vec<f64> = yolo.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    // centre of (20.0 s, 20.8 s) in a 4096 px wide part
    assert!((fields[0] - 20.4 * 102.4 / 4096.0).abs() < 1e-6);
}
