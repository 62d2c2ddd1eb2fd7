use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use scrapsight_core::annotations::{self, DatasetManifest};
use scrapsight_core::darknet::{self, LayerDef};
use scrapsight_core::eval::{self, EvalConfig};
use scrapsight_core::imgops;
use scrapsight_core::inference::{self, ForwardOptions};
use scrapsight_core::postproc;
use scrapsight_core::safety;
use scrapsight_core::{Detection, Image, LoadedNetwork};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::{
    ClassifyEntry, ClassifyFile, DetectionRecord, DetectionsFile, EvalFile, ImageDetections, SCHEMA_VERSION,
};
use crate::Exit;

/// Lowest confidence kept when `evaluate` runs the model itself, so AP sees
/// the low-scoring tail as well.
pub const AP_FLOOR: f64 = 0.005;

pub struct Model {
    pub net: LoadedNetwork,
    pub class_names: Vec<String>,
}

fn yolo_classes(net: &LoadedNetwork) -> Option<usize> {
    net.def().layers.iter().find_map(|l| match l {
        LayerDef::Yolo(y) => Some(y.classes),
        _ => None,
    })
}

pub fn load_class_names(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => annotations::load_names(p).with_context(|| format!("loading class names {}", p.display())),
        None => Ok(scrapsight_core::default_class_names()),
    }
}

pub fn load_model(config: &RunConfig) -> Result<Model> {
    let cfg_path = config.existing(&config.cfg, "--cfg")?;
    let weights_path = config.existing(&config.weights, "--weights")?;
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let def = darknet::parse_cfg(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let bytes = fs::read(&weights_path).with_context(|| format!("reading {}", weights_path.display()))?;
    let net = darknet::parse_weights(&bytes, &def).with_context(|| format!("loading {}", weights_path.display()))?;
    let class_names = load_class_names(config.names.as_deref())?;
    if let Some(classes) = yolo_classes(&net) {
        if classes != class_names.len() {
            bail!(
                "class table has {} names but the network predicts {classes} classes",
                class_names.len()
            );
        }
    }
    Ok(Model { net, class_names })
}

/// Forward pass followed by per-class NMS.
pub fn detect_image(model: &Model, img: &Image, config: &RunConfig, conf: f64) -> Result<Vec<Detection>> {
    let opts = ForwardOptions {
        conf_threshold: conf,
        letterbox: config.letterbox,
    };
    let raw = inference::network_forward(&model.net, img, &opts)?;
    Ok(postproc::nms(&raw, config.nms_threshold, config.nms_metric))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker threads")
}

struct Processed {
    path: PathBuf,
    outcome: Result<(Image, Vec<Detection>)>,
}

/// Runs detection over `images` in parallel; results keep input order.
fn process_images(model: &Model, images: &[PathBuf], config: &RunConfig, conf: f64) -> Result<Vec<Processed>> {
    let pool = thread_pool(config.threads)?;
    Ok(pool.install(|| {
        images
            .par_iter()
            .map(|path| {
                let outcome = Image::load(path)
                    .map_err(anyhow::Error::from)
                    .and_then(|img| {
                        let dets = detect_image(model, &img, config, conf)?;
                        Ok((img, dets))
                    })
                    .with_context(|| path.display().to_string());
                Processed { path: path.clone(), outcome }
            })
            .collect()
    }))
}

fn rendered_path(out_dir: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    out_dir.join(format!("{stem}_det.png"))
}

fn render_one(img: &Image, dets: &[Detection], names: &[String], out_dir: &Path, image: &Path) -> Result<()> {
    let drawn = imgops::draw_detections(img, dets, names)?;
    drawn.save(rendered_path(out_dir, image))?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_out_dir(config: &RunConfig) -> Result<Option<PathBuf>> {
    match &config.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

pub fn cmd_augment(config: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let manifest_path = config.existing(&config.manifest, "--manifest")?;
    let manifest = match &config.names {
        Some(n) => annotations::load_manifest_with_names(&manifest_path, load_class_names(Some(n))?)?,
        None => annotations::load_manifest(&manifest_path)?,
    };
    let out_dir = config.out_dir()?;
    let pool = thread_pool(config.threads)?;
    let augmented = pool.install(|| annotations::augment_dataset(&manifest, &config.preset, &out_dir))?;
    writeln!(out, "wrote {} images", augmented.len())?;
    writeln!(
        out,
        "manifest {}",
        out_dir.join(format!("{}.txt", augmented.name)).display()
    )?;
    Ok(Exit::Success)
}

#[derive(Serialize)]
struct InspectLayer {
    index: usize,
    kind: &'static str,
    output: String,
}

#[derive(Serialize)]
struct InspectWeights {
    major: i32,
    minor: i32,
    revision: i32,
    seen: u64,
    parameters: usize,
    bytes: usize,
}

#[derive(Serialize)]
struct InspectFile {
    schema: u32,
    input: String,
    layers: Vec<InspectLayer>,
    counts: std::collections::BTreeMap<&'static str, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<InspectWeights>,
}

pub fn cmd_inspect(config: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let cfg_path = config.existing(&config.cfg, "--cfg")?;
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let (def, warnings) =
        darknet::parse_cfg_with_warnings(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let shapes = darknet::validate_shapes(&def)?;
    let weights = match &config.weights {
        Some(_) => {
            let path = config.existing(&config.weights, "--weights")?;
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let net = darknet::parse_weights(&bytes, &def).with_context(|| format!("loading {}", path.display()))?;
            let h = net.header();
            Some(InspectWeights {
                major: h.major,
                minor: h.minor,
                revision: h.revision,
                seen: h.seen,
                parameters: (bytes.len() - h.byte_len()) / 4,
                bytes: bytes.len(),
            })
        }
        None => None,
    };
    let counts = def.kind_counts();
    match config.format.unwrap_or(Format::Text) {
        Format::Json => {
            let doc = InspectFile {
                schema: SCHEMA_VERSION,
                input: def.input_shape().to_string(),
                layers: def
                    .layers
                    .iter()
                    .zip(&shapes)
                    .enumerate()
                    .map(|(index, (l, s))| InspectLayer { index, kind: l.kind(), output: s.to_string() })
                    .collect(),
                counts,
                weights,
            };
            out.write_all(write_json(&doc)?.as_bytes())?;
        }
        Format::Csv => bail!("model inspect writes text or json, not csv"),
        Format::Text => {
            writeln!(out, "input {}", def.input_shape())?;
            out.write_all(darknet::shape_table(&def, &shapes).as_bytes())?;
            let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(out, "layers: {}", summary.join(" "))?;
            if let Some(w) = weights {
                writeln!(
                    out,
                    "weights: version {}.{}.{}, seen {}, {} parameters, {} bytes",
                    w.major, w.minor, w.revision, w.seen, w.parameters, w.bytes
                )?;
            }
        }
    }
    Ok(Exit::Success)
}

fn detections_text(doc: &DetectionsFile) -> String {
    let mut s = String::new();
    for img in &doc.images {
        if let Some(e) = &img.error {
            let _ = writeln!(s, "{}: error: {e}", img.image);
            continue;
        }
        let _ = writeln!(s, "{}: {} detections", img.image, img.detections.len());
        for d in &img.detections {
            let _ = writeln!(
                s,
                "  {} {:.4} box {:.4} {:.4} {:.4} {:.4}",
                d.name, d.confidence, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h
            );
        }
    }
    s
}

fn detections_csv(doc: &DetectionsFile) -> String {
    let mut s = String::from("image,class_id,name,confidence,cx,cy,w,h\n");
    for img in &doc.images {
        for d in &img.detections {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                img.image, d.class_id, d.name, d.confidence, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h
            );
        }
    }
    s
}

pub fn cmd_detect(config: &RunConfig, images: &[PathBuf], out: &mut dyn Write) -> Result<Exit> {
    let model = load_model(config)?;
    let out_dir = ensure_out_dir(config)?;
    if config.render && out_dir.is_none() {
        bail!("--render needs --out");
    }
    let processed = process_images(&model, images, config, config.conf_threshold)?;
    let mut failures = 0;
    let mut records = Vec::with_capacity(processed.len());
    for p in processed {
        let image = p.path.display().to_string();
        let rendered = match (&p.outcome, &out_dir) {
            (Ok((img, dets)), Some(dir)) if config.render => render_one(img, dets, &model.class_names, dir, &p.path),
            _ => Ok(()),
        };
        let record = match (p.outcome, rendered) {
            (Ok((img, dets)), Ok(())) => ImageDetections {
                image,
                width: Some(img.width()),
                height: Some(img.height()),
                detections: dets.iter().map(|d| DetectionRecord::new(d, &model.class_names)).collect(),
                error: None,
            },
            (Err(e), _) | (_, Err(e)) => {
                log::error!("{e:#}");
                failures += 1;
                ImageDetections { image, width: None, height: None, detections: vec![], error: Some(format!("{e:#}")) }
            }
        };
        records.push(record);
    }
    let doc = DetectionsFile {
        schema: SCHEMA_VERSION,
        class_names: model.class_names.clone(),
        conf_threshold: config.conf_threshold,
        nms_threshold: config.nms_threshold,
        nms_metric: config.nms_metric,
        images: records,
    };
    let json = write_json(&doc)?;
    if let Some(dir) = &out_dir {
        write_file(dir, "detections.json", &json)?;
    }
    match config.format.unwrap_or(Format::Json) {
        Format::Json => out.write_all(json.as_bytes())?,
        Format::Text => out.write_all(detections_text(&doc).as_bytes())?,
        Format::Csv => out.write_all(detections_csv(&doc).as_bytes())?,
    }
    Ok(if failures > 0 { Exit::Partial } else { Exit::Success })
}

fn path_key(p: &Path) -> PathBuf {
    p.canonicalize().unwrap_or_else(|_| p.to_path_buf())
}

/// Per-manifest-entry detections from a detections file. Entries are matched
/// by path, falling back to a unique file name.
fn detections_for_manifest(doc: &DetectionsFile, manifest: &DatasetManifest) -> Result<Vec<Vec<Detection>>> {
    let mut by_path = HashMap::new();
    let mut by_name: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, rec) in doc.images.iter().enumerate() {
        let p = Path::new(&rec.image);
        by_path.insert(path_key(p), i);
        if let Some(name) = p.file_name() {
            by_name.entry(name.to_string_lossy().into_owned()).or_default().push(i);
        }
    }
    manifest
        .entries
        .iter()
        .map(|e| {
            let name = e.image.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let idx = by_path.get(&path_key(&e.image)).copied().or_else(|| match by_name.get(&name) {
                Some(v) if v.len() == 1 => Some(v[0]),
                _ => None,
            });
            let rec = &doc.images[idx.ok_or_else(|| anyhow!("no detections for image {}", e.image.display()))?];
            if let Some(err) = &rec.error {
                bail!("detections file records an error for {}: {err}", rec.image);
            }
            Ok(rec.detections.iter().map(DetectionRecord::detection).collect())
        })
        .collect()
}

pub fn cmd_evaluate(config: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let manifest_path = config.existing(&config.manifest, "--manifest")?;
    let manifest = match &config.names {
        Some(n) => annotations::load_manifest_with_names(&manifest_path, load_class_names(Some(n))?)?,
        None => annotations::load_manifest(&manifest_path)?,
    };
    if manifest.is_empty() {
        bail!("no ground truth: {} lists no images", manifest_path.display());
    }
    let gt = manifest.load_labels()?;

    let dets = match &config.detections {
        Some(_) => {
            let path = config.existing(&config.detections, "--detections")?;
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let doc: DetectionsFile =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if doc.schema != SCHEMA_VERSION {
                bail!("{}: unsupported schema {}", path.display(), doc.schema);
            }
            if doc.class_names != manifest.class_names {
                bail!(
                    "class table mismatch: detections use {:?}, manifest uses {:?}",
                    doc.class_names,
                    manifest.class_names
                );
            }
            detections_for_manifest(&doc, &manifest)?
        }
        None => {
            let model = load_model(config)?;
            if model.class_names != manifest.class_names {
                bail!(
                    "class table mismatch: model uses {:?}, manifest uses {:?}",
                    model.class_names,
                    manifest.class_names
                );
            }
            let images: Vec<PathBuf> = manifest.entries.iter().map(|e| e.image.clone()).collect();
            let floor = AP_FLOOR.min(config.conf_threshold);
            process_images(&model, &images, config, floor)?
                .into_iter()
                .map(|p| p.outcome.map(|(_, d)| d))
                .collect::<Result<_>>()?
        }
    };

    let eval_config = EvalConfig {
        conf_threshold: config.conf_threshold,
        iou_threshold: config.iou_threshold,
        ap_method: config.ap_method,
    };
    let report = eval::evaluate(&gt, &dets, &manifest.class_names, &eval_config)?;
    let text = report.to_text();
    let csv = report.to_csv();
    let json = write_json(&EvalFile {
        schema: SCHEMA_VERSION,
        class_names: manifest.class_names.clone(),
        report: &report,
    })?;
    if let Some(dir) = &config.out {
        write_file(dir, "report.txt", &text)?;
        write_file(dir, "report.csv", &csv)?;
        write_file(dir, "report.json", &json)?;
    }
    let shown = match config.format.unwrap_or(Format::Text) {
        Format::Text => text,
        Format::Csv => csv,
        Format::Json => json,
    };
    out.write_all(shown.as_bytes())?;
    Ok(Exit::Success)
}

fn classify_text(doc: &ClassifyFile) -> String {
    let mut s = String::new();
    for entry in &doc.images {
        match entry {
            ClassifyEntry::Done(r) if r.pieces.is_empty() => {
                let _ = writeln!(s, "{}: {} (no detections)", r.image, r.verdict);
            }
            ClassifyEntry::Done(r) => {
                let pieces: Vec<String> = r
                    .pieces
                    .iter()
                    .map(|p| format!("{} {:.3}", p.class_name, p.detection.confidence))
                    .collect();
                let _ = writeln!(s, "{}: {} ({})", r.image, r.verdict, pieces.join(", "));
            }
            ClassifyEntry::Failed { image, error } => {
                let _ = writeln!(s, "{image}: ERROR {error}");
            }
        }
    }
    let _ = writeln!(
        s,
        "summary: MDAS={} MPPEH={} INDETERMINATE={} errors={}",
        doc.summary.mdas, doc.summary.mppeh, doc.summary.indeterminate, doc.failures
    );
    s
}

fn classify_csv(doc: &ClassifyFile) -> String {
    let done: Vec<_> = doc
        .images
        .iter()
        .filter_map(|e| match e {
            ClassifyEntry::Done(r) => Some(r.clone()),
            ClassifyEntry::Failed { .. } => None,
        })
        .collect();
    let mut s = safety::batch_report(done).to_csv();
    for e in &doc.images {
        if let ClassifyEntry::Failed { image, .. } = e {
            let _ = writeln!(s, "# error,{image}");
        }
    }
    s
}

pub fn cmd_classify(config: &RunConfig, images: &[PathBuf], out: &mut dyn Write) -> Result<Exit> {
    let model = load_model(config)?;
    let out_dir = ensure_out_dir(config)?;
    if config.render && out_dir.is_none() {
        bail!("--render needs --out");
    }
    for name in &model.class_names {
        safety::class_verdict(name).with_context(|| format!("class {name:?} has no safety rule"))?;
    }
    let processed = process_images(&model, images, config, config.conf_threshold)?;
    let mut entries = Vec::with_capacity(processed.len());
    let mut done = Vec::new();
    let mut failures = 0;
    for p in processed {
        let image = p.path.display().to_string();
        let result = p.outcome.and_then(|(img, dets)| {
            if let (true, Some(dir)) = (config.render, &out_dir) {
                render_one(&img, &dets, &model.class_names, dir, &p.path)?;
            }
            Ok(safety::classify_image(image.clone(), &dets, &model.class_names)?)
        });
        match result {
            Ok(r) => {
                done.push(r.clone());
                entries.push(ClassifyEntry::Done(r));
            }
            Err(e) => {
                log::error!("{e:#}");
                failures += 1;
                entries.push(ClassifyEntry::Failed { image, error: format!("{e:#}") });
            }
        }
    }
    let report = safety::batch_report(done);
    let doc = ClassifyFile {
        schema: SCHEMA_VERSION,
        class_names: model.class_names.clone(),
        images: entries,
        summary: report.summary,
        failures,
    };
    let json = write_json(&doc)?;
    let csv = classify_csv(&doc);
    if let Some(dir) = &out_dir {
        write_file(dir, "safety_report.json", &json)?;
        write_file(dir, "safety_report.csv", &csv)?;
    }
    match config.format.unwrap_or(Format::Text) {
        Format::Text => out.write_all(classify_text(&doc).as_bytes())?,
        Format::Json => out.write_all(json.as_bytes())?,
        Format::Csv => out.write_all(csv.as_bytes())?,
    }
    Ok(if failures > 0 {
        Exit::Partial
    } else if report.summary.all_safe() {
        Exit::Success
    } else {
        Exit::Unsafe
    })
}

pub fn cmd_render(config: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let path = config.existing(&config.detections, "--detections")?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let doc: DetectionsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let names = match &config.names {
        Some(n) => load_class_names(Some(n))?,
        None => doc.class_names.clone(),
    };
    let out_dir = config.out_dir()?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = thread_pool(config.threads)?;
    let results: Vec<Result<()>> = pool.install(|| {
        doc.images
            .par_iter()
            .filter(|rec| rec.error.is_none())
            .map(|rec| {
                let image = Path::new(&rec.image);
                let img = Image::load(image)?;
                let dets: Vec<Detection> = rec.detections.iter().map(DetectionRecord::detection).collect();
                render_one(&img, &dets, &names, &out_dir, image).with_context(|| rec.image.clone())
            })
            .collect()
    });
    let mut written = 0;
    let mut failures = 0;
    for r in results {
        match r {
            Ok(()) => written += 1,
            Err(e) => {
                log::error!("{e:#}");
                failures += 1;
            }
        }
    }
    writeln!(out, "rendered {written} images to {}", out_dir.display())?;
    Ok(if failures > 0 { Exit::Partial } else { Exit::Success })
}
