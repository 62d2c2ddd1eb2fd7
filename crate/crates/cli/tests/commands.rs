mod common;

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use common::*;
use scrapsight_cli::output::{DetectionRecord, DetectionsFile, ImageDetections, SCHEMA_VERSION};
use scrapsight_cli::{cmd_augment, cmd_classify, cmd_detect, cmd_evaluate, cmd_inspect, cmd_render};
use scrapsight_cli::{Exit, Format, RunConfig, Settings};
use scrapsight_core::{Annotation, AugmentationPreset, BBox, Image, OverlapMetric};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scrapsight"))
}

fn one_box_labels(n: usize) -> Vec<Vec<Annotation>> {
    (0..n)
        .map(|i| vec![Annotation::new(i % 3, BBox::new(0.5, 0.5, 0.25, 0.25))])
        .collect()
}

#[test]
fn augment_counts_and_preset_none() {
    let src = tempfile::tempdir().unwrap();
    let manifest = write_dataset(src.path(), "xray.txt", &one_box_labels(12));
    let out = tempfile::tempdir().unwrap();
    let mut config = RunConfig {
        manifest: Some(manifest.clone()),
        out: Some(out.path().join("aug")),
        ..RunConfig::default()
    };
    let (exit, text) = capture(|o| cmd_augment(&config, o));
    assert_eq!(exit, Exit::Success);
    assert!(text.starts_with("wrote 108 images\n"), "{text}");

    config.preset = AugmentationPreset::none();
    config.out = Some(out.path().join("plain"));
    let (_, text) = capture(|o| cmd_augment(&config, o));
    assert!(text.starts_with("wrote 12 images\n"), "{text}");
}

#[test]
fn augment_missing_label_exits_two_naming_file() {
    let src = tempfile::tempdir().unwrap();
    let manifest = write_dataset(src.path(), "xray.txt", &one_box_labels(3));
    fs::remove_file(src.path().join("img_002.txt")).unwrap();
    let out = bin()
        .args(["augment", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(src.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("img_002.txt"));
}

#[test]
fn detect_blank_image_at_high_threshold_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let blank = write_image(&dir.path().join("blank.png"), &Image::filled(4, 4, 1, 0).unwrap());
    let config = RunConfig { conf_threshold: 0.99, ..model_config(&files) };
    let (exit, json) = capture(|o| cmd_detect(&config, &[blank], o));
    assert_eq!(exit, Exit::Success);
    let doc: DetectionsFile = serde_json::from_str(&json).unwrap();
    assert_eq!(doc.schema, SCHEMA_VERSION);
    assert_eq!(doc.images.len(), 1);
    assert!(doc.images[0].detections.is_empty());
    assert!(json.contains("\"detections\": []"));
}

#[test]
fn detect_unreadable_image_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let good = write_image(&dir.path().join("a.png"), &fixture_image());
    let bad = dir.path().join("missing.png");
    fs::write(dir.path().join("junk.png"), b"not an image").unwrap();
    let junk = dir.path().join("junk.png");
    let config = model_config(&files);
    let (exit, json) = capture(|o| cmd_detect(&config, &[good, bad, junk], o));
    assert_eq!(exit, Exit::Partial);
    let doc: DetectionsFile = serde_json::from_str(&json).unwrap();
    assert_eq!(doc.images[0].detections.len(), 1);
    assert!(doc.images[1].error.as_deref().unwrap().contains("missing.png"));
    assert!(doc.images[2].error.is_some());
}

#[test]
fn detect_formats_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let out = dir.path().join("out");
    let config = RunConfig {
        out: Some(out.clone()),
        render: true,
        format: Some(Format::Csv),
        ..model_config(&files)
    };
    let (_, csv) = capture(|o| cmd_detect(&config, std::slice::from_ref(&img), o));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",0,full-ammo,1,0.625,0.375,0.5,0.5"), "{csv}");
    assert!(out.join("detections.json").is_file());
    let drawn = Image::load(out.join("scrap_det.png")).unwrap();
    assert_ne!(drawn, fixture_image());

    let config = RunConfig { format: Some(Format::Text), ..model_config(&files) };
    let (_, text) = capture(|o| cmd_detect(&config, &[img], o));
    assert!(text.contains("1 detections") && text.contains("full-ammo 1.0000"), "{text}");
}

#[test]
fn render_redraws_from_detections_file() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let out = dir.path().join("det");
    let config = RunConfig { out: Some(out.clone()), render: true, ..model_config(&files) };
    capture(|o| cmd_detect(&config, &[img], o));
    let config = RunConfig {
        detections: Some(out.join("detections.json")),
        out: Some(dir.path().join("drawn")),
        ..RunConfig::default()
    };
    let (exit, text) = capture(|o| cmd_render(&config, o));
    assert_eq!(exit, Exit::Success);
    assert!(text.starts_with("rendered 1 images"), "{text}");
    assert_eq!(
        fs::read(dir.path().join("drawn/scrap_det.png")).unwrap(),
        fs::read(out.join("scrap_det.png")).unwrap()
    );
}

#[test]
fn classify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let blank = write_image(&dir.path().join("blank.png"), &Image::filled(4, 4, 1, 0).unwrap());

    let unsafe_model = write_hand_model(dir.path(), "full-ammo");
    let config = model_config(&unsafe_model);
    let (exit, text) = capture(|o| cmd_classify(&config, std::slice::from_ref(&img), o));
    assert_eq!(exit, Exit::Unsafe);
    assert!(text.contains("scrap.png: MPPEH (full-ammo 1.000)"), "{text}");

    let safe_dir = tempfile::tempdir().unwrap();
    let safe_model = write_hand_model(safe_dir.path(), "casing");
    let config = RunConfig { format: Some(Format::Json), ..model_config(&safe_model) };
    let (exit, json) = capture(|o| cmd_classify(&config, std::slice::from_ref(&img), o));
    assert_eq!(exit, Exit::Success);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["images"][0]["verdict"], "MDAS");
    assert_eq!(v["summary"]["mdas"], 1);

    let text_config = model_config(&safe_model);
    let (exit, text) = capture(|o| cmd_classify(&text_config, &[blank], o));
    assert_eq!(exit, Exit::Unsafe);
    assert!(text.contains("INDETERMINATE (no detections)"), "{text}");

    let (exit, _) = capture(|o| cmd_classify(&config, &[img, dir.path().join("gone.png")], o));
    assert_eq!(exit, Exit::Partial);
}

#[test]
fn classify_writes_reports_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let config = RunConfig { out: Some(dir.path().join("r")), ..model_config(&files) };
    capture(|o| cmd_classify(&config, &[img], o));
    let csv = fs::read_to_string(dir.path().join("r/safety_report.csv")).unwrap();
    assert!(csv.contains("scrap.png,MPPEH,1,1,0"), "{csv}");
    assert!(dir.path().join("r/safety_report.json").is_file());
}

/// One image per object so counts come out exactly.
fn crafted_eval(dir: &std::path::Path, tp: usize, fp: usize, fn_: usize) -> (PathBuf, PathBuf) {
    let b = BBox::new(0.5, 0.5, 0.25, 0.25);
    let mut labels = Vec::new();
    let mut dets = Vec::new();
    for _ in 0..tp {
        labels.push(vec![Annotation::new(0, b)]);
        dets.push(vec![b]);
    }
    for _ in 0..fp {
        labels.push(vec![]);
        dets.push(vec![b]);
    }
    for _ in 0..fn_ {
        labels.push(vec![Annotation::new(0, b)]);
        dets.push(vec![]);
    }
    let manifest = write_dataset(dir, "test.txt", &labels);
    let names = scrapsight_core::default_class_names();
    let images = dets
        .iter()
        .enumerate()
        .map(|(i, boxes)| ImageDetections {
            image: dir.join(format!("img_{i:03}.png")).display().to_string(),
            width: Some(8),
            height: Some(8),
            detections: boxes
                .iter()
                .map(|b| DetectionRecord { class_id: 0, name: names[0].clone(), confidence: 0.9, objectness: 0.9, bbox: *b })
                .collect(),
            error: None,
        })
        .collect();
    let doc = DetectionsFile {
        schema: 1,
        class_names: names,
        conf_threshold: 0.25,
        nms_threshold: 0.45,
        nms_metric: OverlapMetric::Iou,
        images,
    };
    let det_path = dir.join("dets.json");
    fs::write(&det_path, serde_json::to_string(&doc).unwrap()).unwrap();
    (manifest, det_path)
}

#[test]
fn evaluate_crafted_counts_print_reference_row() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, dets) = crafted_eval(dir.path(), 159, 50, 21);
    let config = RunConfig {
        manifest: Some(manifest),
        detections: Some(dets),
        out: Some(dir.path().join("report")),
        ..RunConfig::default()
    };
    let (exit, text) = capture(|o| cmd_evaluate(&config, o));
    assert_eq!(exit, Exit::Success);
    let row = text.lines().find(|l| l.starts_with("full-ammo")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[2..8], ["159", "50", "21", "76.08%", "88.33%", "81.75%"], "{row}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], 1);
    assert_eq!(json["classes"][0]["tp"], 159);
    assert!(dir.path().join("report/report.csv").is_file());
}

#[test]
fn evaluate_rejects_empty_manifest_and_mismatched_classes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty_test.txt"), "").unwrap();
    let out = bin()
        .args(["evaluate", "--detections", "x.json", "--manifest"])
        .arg(dir.path().join("empty_test.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground truth"));

    let (manifest, dets) = crafted_eval(dir.path(), 2, 1, 1);
    fs::write(dir.path().join("other.names"), "bolt\nnut\nwasher\n").unwrap();
    let out = bin()
        .args(["evaluate", "--names"])
        .arg(dir.path().join("other.names"))
        .arg("--manifest")
        .arg(&manifest)
        .arg("--detections")
        .arg(&dets)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class table mismatch"));
}

#[test]
fn evaluate_from_file_equals_live_model() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    // Grey levels spread the confidences on both sides of 0.25.
    let levels = [0u8, 110, 128, 134, 150, 255];
    let mut list = String::new();
    let mut images = Vec::new();
    for i in 0..8 {
        let mut data = vec![0u8; 16];
        data[(i * 5) % 16] = levels[i % levels.len()];
        data[(i * 3 + 7) % 16] = levels[(i + 2) % levels.len()];
        let name = format!("s{i}.png");
        let path = write_image(&dir.path().join(&name), &Image::gray(4, 4, data).unwrap());
        let x = (i * 5) % 4;
        let y = (i * 5) % 16 / 4;
        let label = format!("0 {} {} 0.5 0.5\n", (x as f64 + 0.5) / 4.0, (y as f64 + 0.5) / 4.0);
        fs::write(dir.path().join(format!("s{i}.txt")), if i % 3 == 0 { String::new() } else { label }).unwrap();
        list.push_str(&name);
        list.push('\n');
        images.push(path);
    }
    fs::write(dir.path().join("set_test.txt"), list).unwrap();
    fs::write(dir.path().join("set_test.names"), "full-ammo\n").unwrap();

    let floor = RunConfig {
        conf_threshold: 0.005,
        out: Some(dir.path().join("d")),
        ..model_config(&files)
    };
    capture(|o| cmd_detect(&floor, &images, o));

    let base = RunConfig { manifest: Some(dir.path().join("set_test.txt")), ..model_config(&files) };
    let from_file = RunConfig { detections: Some(dir.path().join("d/detections.json")), ..base.clone() };
    for format in [Format::Text, Format::Json] {
        let live = RunConfig { format: Some(format), ..base.clone() };
        let file = RunConfig { format: Some(format), ..from_file.clone() };
        let (_, a) = capture(|o| cmd_evaluate(&live, o));
        let (_, b) = capture(|o| cmd_evaluate(&file, o));
        assert_eq!(a, b);
    }
    let (_, text) = capture(|o| cmd_evaluate(&base, o));
    assert!(text.contains("full-ammo"), "{text}");
}

#[test]
fn inspect_json_reports_layers_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let config = RunConfig { format: Some(Format::Json), ..model_config(&files) };
    let (exit, json) = capture(|o| cmd_inspect(&config, o));
    assert_eq!(exit, Exit::Success);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["input"], "4x4x1");
    assert_eq!(v["layers"][1]["output"], "4x4x6");
    assert_eq!(v["weights"]["parameters"], 12);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let toml = "cfg = \"hand.cfg\"\nweights = \"hand.weights\"\nnames = \"hand.names\"\nnms_metric = \"diou\"\nconf = 0.5\n".to_string();
    fs::write(dir.path().join("run.toml"), toml).unwrap();
    let out = bin()
        .arg("detect")
        .arg("--config")
        .arg(dir.path().join("run.toml"))
        .args(["--conf", "0.3"])
        .arg(&img)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: DetectionsFile = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.conf_threshold, 0.3);
    assert_eq!(doc.nms_metric, OverlapMetric::Diou);
    assert_eq!(doc.nms_threshold, 0.45);
    let _ = files;
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_hand_model(dir.path(), "full-ammo");
    let img = write_image(&dir.path().join("scrap.png"), &fixture_image());
    let out = bin()
        .env("SCRAPSIGHT_THREADS", "lots")
        .args(["detect", "--cfg"])
        .arg(&files.cfg)
        .arg("--weights")
        .arg(&files.weights)
        .arg("--names")
        .arg(&files.names)
        .arg(&img)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let ok = bin()
        .env("SCRAPSIGHT_THREADS", "2")
        .args(["detect", "--cfg"])
        .arg(&files.cfg)
        .arg("--weights")
        .arg(&files.weights)
        .arg("--names")
        .arg(&files.names)
        .arg(&img)
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn help_lists_defaults() {
    let expect = [
        ("detect", vec!["--conf", "0.25", "--nms", "0.45", "--nms-metric", "iou", "--render", "--format"]),
        ("classify", vec!["--conf", "0.25", "--nms", "0.45", "--out"]),
        ("evaluate", vec!["--iou", "0.5", "--points", "auc", "--detections", "--manifest", "0.25"]),
        ("augment", vec!["--preset", "default", "--manifest", "--out", "--names"]),
        ("render", vec!["--detections", "--out"]),
    ];
    for (cmd, needles) in expect {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        let help = String::from_utf8_lossy(&out.stdout);
        for n in needles {
            assert!(help.contains(n), "{cmd} --help lacks {n}:\n{help}");
        }
    }
    let out = bin().args(["model", "inspect", "--help"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("--cfg"));
}

#[test]
fn settings_layering_via_library() {
    let flags = Settings { nms: Some(0.3), ..Settings::default() };
    let file = Settings { nms: Some(0.6), conf: Some(0.4), ..Settings::default() };
    let rc = RunConfig::resolve(flags.over(file)).unwrap();
    assert_eq!((rc.nms_threshold, rc.conf_threshold), (0.3, 0.4));
}
