use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scalodet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(&[&["--json"], args].concat());
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    config: PathBuf,
}

/// Small calibrated corpus shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        let preset = serde_json::json!({
            "tests": 8, "events": 6, "double_event_share": 0.0, "seed": 5, "sample_rate": 100.0,
            "test_duration_s": [30.0, 50.0], "event_duration_s": [0.64, 1.10], "carrier_hz": [5.0, 6.0],
            "amplitude": [1.0, 1.0], "snr_db": [6.0, 20.0], "drift_hz": [0.2, 1.5], "drift_amplitude": [0.01, 0.03],
            "drift_tones": 2, "spacing_s": 2.0
        });
        let preset_path = root.join("preset.json");
        fs::write(&preset_path, preset.to_string()).unwrap();
        let v = ok(&["synth", "--corpus", "--preset", s(&preset_path), "--out", s(&corpus)]);
        assert_eq!(v["tests"], 8);
        assert_eq!(v["events"], 6);
        let config = root.join("config.json");
        ok(&["calibrate", "--manifest", s(&corpus.join("manifest.json")), "--out", s(&config)]);
        Fixture { _dir: dir, root, corpus, config }
    })
}

fn csvs(f: &Fixture) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(&f.corpus)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

fn scratch(name: &str) -> PathBuf {
    let p = fixture().root.join(name);
    fs::create_dir_all(&p).unwrap();
    p
}

#[test]
fn corpus_pipeline_scores_the_corpus() {
    let f = fixture();
    let out = scratch("fused_corpus");
    let v = ok(&["pipeline", "--config", s(&f.config), "--manifest", s(&f.corpus.join("manifest.json")), "--out", s(&out)]);
    assert!(out.join("results.json").exists());
    assert!(out.join("report.json").exists());
    assert_eq!(v["counts"]["tp"], 6);
    assert_eq!(v["counts"]["fp"], 0);
}

#[test]
fn staged_stages_reproduce_pipeline_bytes() {
    let f = fixture();
    let inputs: Vec<PathBuf> = csvs(f).into_iter().take(3).collect();
    let names: Vec<&str> = inputs.iter().map(|p| s(p)).collect();
    let cfg = s(&f.config);

    let fused = scratch("fused3");
    ok(&[&["pipeline", "--config", cfg, "--out", s(&fused)], &names[..]].concat());

    let st = scratch("staged3");
    let cwt = st.join("cwt");
    let mag = st.join("mag");
    let det = st.join("det");
    ok(&[&["transform", "--config", cfg, "--out", s(&cwt)], &names[..]].concat());
    let dumps: Vec<PathBuf> = inputs.iter().map(|p| cwt.join(format!("{}.cwt", p.file_stem().unwrap().to_str().unwrap()))).collect();
    ok(&[&["filter", "--config", cfg, "--out", s(&mag)], &dumps.iter().map(|p| s(p)).collect::<Vec<_>>()[..]].concat());
    let mags: Vec<PathBuf> = inputs.iter().map(|p| mag.join(format!("{}.mag", p.file_stem().unwrap().to_str().unwrap()))).collect();
    ok(&[&["detect", "--config", cfg, "--out", s(&det)], &mags.iter().map(|p| s(p)).collect::<Vec<_>>()[..]].concat());
    let dets: Vec<PathBuf> = inputs.iter().map(|p| det.join(format!("{}.det.json", p.file_stem().unwrap().to_str().unwrap()))).collect();
    let results = st.join("results.json");
    ok(&[&["map", "--config", cfg, "--out", s(&results)], &dets.iter().map(|p| s(p)).collect::<Vec<_>>()[..]].concat());

    assert_eq!(fs::read(&results).unwrap(), fs::read(fused.join("results.json")).unwrap());
}

#[test]
fn quiet_recording_yields_empty_results() {
    let f = fixture();
    let dir = scratch("quiet");
    let spec = dir.join("quiet.json");
    fs::write(&spec, r#"{"duration": 45, "background": {"noise_std": 0.1, "drift": [{"freq": 0.5, "amplitude": 0.02}]}, "seed": 3}"#).unwrap();
    ok(&["synth", "--spec", s(&spec), "--out", s(&dir)]);
    let out = dir.join("run");
    ok(&["pipeline", "--config", s(&f.config), "--out", s(&out), s(&dir.join("quiet.csv"))]);
    let results: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results, serde_json::json!([]));
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let f = fixture();
    let dir = scratch("perfect");
    let truths: Value = serde_json::from_str(&fs::read_to_string(f.corpus.join("ground_truth.json")).unwrap()).unwrap();
    let mut preds = Vec::new();
    for t in truths.as_array().unwrap() {
        for iv in t["intervals"].as_array().unwrap() {
            preds.push(serde_json::json!({
                "source_id": t["source_id"], "start_s": iv[0], "end_s": iv[1],
                "f_low_hz": 5.0, "f_high_hz": 6.0, "confidence": 1.0
            }));
        }
    }
    let results = dir.join("results.json");
    fs::write(&results, Value::Array(preds).to_string()).unwrap();
    let v = ok(&["eval", "--results", s(&results), "--truth", s(&f.corpus.join("ground_truth.json"))]);
    for k in ["precision", "recall", "accuracy", "f1"] {
        assert_eq!(v["metrics"][k], 1.0, "{k}");
    }
}

#[test]
fn higher_cs_never_detects_more() {
    let f = fixture();
    let inputs = csvs(f);
    let names: Vec<&str> = inputs.iter().map(|p| s(p)).collect();
    let cwt = scratch("cs_cwt");
    let mag = scratch("cs_mag");
    ok(&[&["transform", "--config", s(&f.config), "--out", s(&cwt)], &names[..]].concat());
    let dumps: Vec<String> = inputs.iter().map(|p| s(&cwt.join(format!("{}.cwt", p.file_stem().unwrap().to_str().unwrap()))).to_string()).collect();
    let dumps: Vec<&str> = dumps.iter().map(String::as_str).collect();
    ok(&[&["filter", "--config", s(&f.config), "--out", s(&mag)], &dumps[..]].concat());
    let mags: Vec<String> = inputs.iter().map(|p| s(&mag.join(format!("{}.mag", p.file_stem().unwrap().to_str().unwrap()))).to_string()).collect();
    let mags: Vec<&str> = mags.iter().map(String::as_str).collect();
    let counts = |cs: &str| -> Vec<u64> {
        let out = scratch(&format!("cs_{cs}"));
        let v = ok(&[&["detect", "--config", s(&f.config), "--cs", cs, "--out", s(&out)], &mags[..]].concat());
        v["outputs"].as_array().unwrap().iter().map(|o| o["detections"].as_u64().unwrap()).collect()
    };
    let (lo, mid, hi) = (counts("0.40"), counts("0.60"), counts("0.75"));
    for i in 0..lo.len() {
        assert!(lo[i] >= mid[i] && mid[i] >= hi[i]);
    }
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr not json: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn config_violations_exit_2_with_field() {
    let dir = scratch("badcfg");
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"detector": {"nms_iou": 2.0}}"#).unwrap();
    let input = s(&csvs(fixture())[0]).to_string();
    let out = run(&["pipeline", "--config", s(&bad), "--out", s(&dir), &input]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "detector.nms_iou");

    fs::write(&bad, r#"{"segment": {"max_s": 40, "overlap": 1}}"#).unwrap();
    let out = run(&["pipeline", "--config", s(&bad), "--out", s(&dir), &input]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["field"].as_str().unwrap().starts_with("segment"));

    let out = run(&["pipeline", "--config", s(&fixture().config), "--cs", "1.5", "--out", s(&dir), &input]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "detector.cs_threshold");

    // no band configured
    let out = run(&["pipeline", "--out", s(&dir), &input]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "filter");
}

#[test]
fn missing_input_exits_3() {
    let dir = scratch("missing");
    let out = run(&["pipeline", "--config", s(&fixture().config), "--out", s(&dir), "/nonexistent/x.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "missing_input");
    let out = run(&["transform", "--config", "/nonexistent/cfg.json", "--out", s(&dir), "/nonexistent/x.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn png_artifacts_are_deterministic() {
    let f = fixture();
    let input = csvs(f)[0].clone();
    let id = input.file_stem().unwrap().to_str().unwrap().to_string();
    let mut bytes = Vec::new();
    for run_name in ["png_a", "png_b"] {
        let cwt = scratch(&format!("{run_name}_cwt"));
        let mag = scratch(run_name);
        ok(&["transform", "--config", s(&f.config), "--out", s(&cwt), s(&input)]);
        let v = ok(&["--jobs", "1", "filter", "--png", "--config", s(&f.config), "--out", s(&mag), s(&cwt.join(format!("{id}.cwt")))]);
        let pngs: Vec<PathBuf> = v["files"].as_array().unwrap().iter().map(|p| PathBuf::from(p.as_str().unwrap())).filter(|p| p.extension().is_some_and(|e| e == "png")).collect();
        assert!(!pngs.is_empty());
        bytes.push(pngs.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn training_flow_files() {
    let f = fixture();
    let labels = scratch("labels");
    let inputs = csvs(f);
    let names: Vec<&str> = inputs.iter().map(|p| s(p)).collect();
    let v = ok(&[&["export-labels", "--config", s(&f.config), "--truth", s(&f.corpus.join("ground_truth.json")), "--out", s(&labels)], &names[..]].concat());
    let parts = v["parts"].as_array().unwrap();
    assert!(!parts.is_empty());
    let boxes: u64 = parts.iter().map(|p| p["boxes"].as_u64().unwrap()).sum();
    // an event straddling a cut is labelled in both parts
    assert!(boxes >= 6);

    let lists = scratch("lists");
    let v = ok(&["split", "--manifest", s(&f.corpus.join("manifest.json")), "--images", s(&labels), "--seed", "1", "--out", s(&lists)]);
    assert_eq!(v["train"].as_u64().unwrap() + v["val"].as_u64().unwrap() + v["inference"].as_u64().unwrap(), 8);
    let listed: usize = ["train", "val", "inference"]
        .iter()
        .map(|n| fs::read_to_string(lists.join(format!("{n}.txt"))).unwrap().lines().count())
        .sum();
    assert_eq!(listed, parts.len());

    let v = ok(&["train-config", "--dataset", s(&lists), "--out", s(&lists)]);
    let cfg: Value = serde_json::from_str(&fs::read_to_string(v["config"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(cfg["epochs"], 150);
    assert_eq!(cfg["batch_size"], 16);
    assert_eq!(cfg["momentum"], 0.937);
    assert_eq!(cfg["weight_decay"], 0.0005);
    assert_eq!(cfg["initial_lr"], 0.01);
    assert_eq!(cfg["optimizer"], "sgd");
    assert_eq!(cfg["classes"], serde_json::json!(["ldw_event"]));
}

#[test]
fn job_count_does_not_change_results() {
    let f = fixture();
    let manifest = f.corpus.join("manifest.json");
    let a = scratch("jobs1");
    let b = scratch("jobs4");
    ok(&["--jobs", "1", "pipeline", "--config", s(&f.config), "--manifest", s(&manifest), "--out", s(&a)]);
    ok(&["--jobs", "4", "pipeline", "--config", s(&f.config), "--manifest", s(&manifest), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("results.json")).unwrap(), fs::read(b.join("results.json")).unwrap());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}
