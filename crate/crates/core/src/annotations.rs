//! Darknet label files, dataset manifests and augmentation-driven expansion.
//!
//! Label files hold one object per line as `class cx cy w h` with normalized
//! coordinates. A manifest is a text file with one image path per line; the
//! label for `dir/img.png` lives at `dir/img.txt`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgops::{self, Image};

/// Normalized centre-size box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    /// Checks the annotation invariants, returning the offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, f64)> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let extent = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.cx) {
            return Err(("cx", self.cx));
        }
        if !unit(self.cy) {
            return Err(("cy", self.cy));
        }
        if !extent(self.w) {
            return Err(("w", self.w));
        }
        if !extent(self.h) {
            return Err(("h", self.h));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: BBox,
}

impl Annotation {
    pub fn new(class_id: usize, bbox: BBox) -> Self {
        Annotation { class_id, bbox }
    }
}

pub fn parse_label_file(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Label {
                line: line_no,
                message: format!("expected 5 fields `class cx cy w h`, found {}", fields.len()),
            });
        }
        let class_id: usize = fields[0].parse().map_err(|_| Error::Label {
            line: line_no,
            message: format!("class id {:?} is not a non-negative integer", fields[0]),
        })?;
        let mut nums = [0f64; 4];
        for (slot, (name, raw)) in nums
            .iter_mut()
            .zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..]))
        {
            *slot = raw.parse().map_err(|_| Error::Label {
                line: line_no,
                message: format!("{name} value {raw:?} is not a number"),
            })?;
        }
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3]);
        bbox.check().map_err(|(field, value)| Error::LabelRange {
            line: line_no,
            field,
            value,
        })?;
        out.push(Annotation { class_id, bbox });
    }
    Ok(out)
}

pub fn write_label_file(anns: &[Annotation]) -> String {
    let mut s = String::new();
    for a in anns {
        s.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            a.class_id, a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h
        ));
    }
    s
}

/// One class name per line; blank lines and surrounding whitespace ignored.
pub fn parse_names(text: &str) -> Result<Vec<String>> {
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    check_class_names(&names).map_err(Error::Parameter)?;
    Ok(names)
}

pub fn load_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_names(&text).map_err(|e| e.context(path.display().to_string()))
}

fn check_class_names(names: &[String]) -> std::result::Result<(), String> {
    if names.is_empty() {
        return Err("class name table is empty".into());
    }
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(format!("duplicate class name {n:?}"));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

/// Label path convention: image path with the extension replaced by `.txt`.
pub fn label_path_for(image: &Path) -> PathBuf {
    image.with_extension("txt")
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a manifest. Class names come from `<stem>.names` next to the
/// manifest, then `obj.names` in the same directory, then the built-in table.
/// The split is `test` when the file stem mentions `test` or `valid`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let candidates = [dir.join(format!("{stem}.names")), dir.join("obj.names")];
    let class_names = match candidates.iter().find(|p| p.is_file()) {
        Some(p) => load_names(p)?,
        None => crate::default_class_names(),
    };
    load_manifest_with_names(path, class_names)
}

pub fn load_manifest_with_names(
    path: impl AsRef<Path>,
    class_names: Vec<String>,
) -> Result<DatasetManifest> {
    let path = path.as_ref();
    check_class_names(&class_names).map_err(|m| manifest_err(path, m))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let lowered = stem.to_ascii_lowercase();
    let split = if lowered.contains("test") || lowered.contains("valid") {
        Split::Test
    } else {
        Split::Train
    };

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let raw = Path::new(line);
        let image = if raw.is_absolute() {
            raw.to_path_buf()
        } else {
            dir.join(raw)
        };
        if !seen.insert(image.clone()) {
            return Err(manifest_err(
                path,
                format!("duplicate image path {}", image.display()),
            ));
        }
        if !image.is_file() {
            return Err(manifest_err(
                path,
                format!("image {} does not exist", image.display()),
            ));
        }
        let label = label_path_for(&image);
        if !label.is_file() {
            return Err(manifest_err(
                path,
                format!(
                    "missing label file {} for image {}",
                    label.display(),
                    image.display()
                ),
            ));
        }
        entries.push(ManifestEntry { image, label });
    }
    log::debug!("{}: {} entries", path.display(), entries.len());
    Ok(DatasetManifest {
        name: stem,
        split,
        entries,
        class_names,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses every label file, validating class ids against the table.
    pub fn load_labels(&self) -> Result<Vec<Vec<Annotation>>> {
        self.entries
            .iter()
            .map(|e| {
                let anns = read_labels(&e.label)?;
                if let Some(bad) = anns.iter().find(|a| a.class_id >= self.class_names.len()) {
                    return Err(
                        Error::UnknownClass(bad.class_id).context(e.label.display().to_string())
                    );
                }
                Ok(anns)
            })
            .collect()
    }

    /// Writes the manifest (paths relative to its directory when possible)
    /// and a sibling `.names` file.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new(""));
        let mut text = String::new();
        for e in &self.entries {
            let shown = e.image.strip_prefix(dir).unwrap_or(&e.image);
            text.push_str(&shown.to_string_lossy());
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let names_path = path.with_extension("names");
        let mut names = self.class_names.join("\n");
        names.push('\n');
        fs::write(&names_path, names).map_err(|e| Error::io(&names_path, e))
    }

    /// Splits into the first `train_count` entries and the rest. Augmented
    /// manifests keep each source's variants adjacent, so a multiple of
    /// `1 + preset length` splits by source image.
    pub fn split_at(&self, train_count: usize) -> (DatasetManifest, DatasetManifest) {
        let n = train_count.min(self.entries.len());
        let part = |entries: &[ManifestEntry], split: Split, suffix: &str| DatasetManifest {
            name: format!("{}_{suffix}", self.name),
            split,
            entries: entries.to_vec(),
            class_names: self.class_names.clone(),
        };
        (
            part(&self.entries[..n], Split::Train, "train"),
            part(&self.entries[n..], Split::Test, "test"),
        )
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(&text).map_err(|e| e.context(path.display().to_string()))
}

/// One intensity transform with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    HistogramEqualize,
    PowerLaw { gamma: f64, c: f64 },
    BoxAverage { k: usize },
    GaussianBlur { sigma: f64 },
    Sharpen { alpha: f64, sigma: f64 },
    Negative,
}

impl Transform {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            Transform::HistogramEqualize => Ok(imgops::histogram_equalize(img)),
            Transform::PowerLaw { gamma, c } => imgops::power_law(img, gamma, c),
            Transform::BoxAverage { k } => imgops::box_average(img, k),
            Transform::GaussianBlur { sigma } => imgops::gaussian_blur(img, sigma),
            Transform::Sharpen { alpha, sigma } => imgops::sharpen(img, alpha, sigma),
            Transform::Negative => Ok(imgops::negative(img)),
        }
    }

    /// File-name tag, e.g. `power_law_0.40` or `box_average_3`.
    pub fn tag(&self) -> String {
        match *self {
            Transform::HistogramEqualize => "histogram_equalize".into(),
            Transform::PowerLaw { gamma, c: 1.0 } => format!("power_law_{gamma:.2}"),
            Transform::PowerLaw { gamma, c } => format!("power_law_{gamma:.2}_{c:.2}"),
            Transform::BoxAverage { k } => format!("box_average_{k}"),
            Transform::GaussianBlur { sigma } => format!("gaussian_blur_{sigma:.2}"),
            Transform::Sharpen { alpha, sigma } => format!("sharpen_{alpha:.2}_{sigma:.2}"),
            Transform::Negative => "negative".into(),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::HistogramEqualize => write!(f, "histogram_equalize"),
            Transform::PowerLaw { gamma, c } => write!(f, "power_law:{gamma}:{c}"),
            Transform::BoxAverage { k } => write!(f, "box_average:{k}"),
            Transform::GaussianBlur { sigma } => write!(f, "gaussian_blur:{sigma}"),
            Transform::Sharpen { alpha, sigma } => write!(f, "sharpen:{alpha}:{sigma}"),
            Transform::Negative => write!(f, "negative"),
        }
    }
}

/// Parses `name[:p1[:p2]]`, e.g. `box_average:5`, `power_law:0.45`,
/// `sharpen:1:1`, `gaussian_blur:1.5`, `negative`.
impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default();
        let params: Vec<&str> = parts.collect();
        let num = |i: usize, default: Option<f64>| -> Result<f64> {
            match params.get(i) {
                Some(raw) => raw.parse().map_err(|_| {
                    Error::Parameter(format!("transform {s:?}: {raw:?} is not a number"))
                }),
                None => default.ok_or_else(|| {
                    Error::Parameter(format!("transform {s:?} is missing a parameter"))
                }),
            }
        };
        let max_params = |n: usize| -> Result<()> {
            if params.len() > n {
                Err(Error::Parameter(format!("transform {s:?} has too many parameters")))
            } else {
                Ok(())
            }
        };
        let t = match name {
            "histogram_equalize" | "hist_eq" => {
                max_params(0)?;
                Transform::HistogramEqualize
            }
            "negative" => {
                max_params(0)?;
                Transform::Negative
            }
            "power_law" | "gamma" => {
                max_params(2)?;
                Transform::PowerLaw {
                    gamma: num(0, None)?,
                    c: num(1, Some(1.0))?,
                }
            }
            "box_average" | "average" => {
                max_params(1)?;
                let k = num(0, None)?;
                if k.fract() != 0.0 || k < 0.0 {
                    return Err(Error::Parameter(format!("transform {s:?}: kernel size must be an integer")));
                }
                Transform::BoxAverage { k: k as usize }
            }
            "gaussian_blur" | "blur" => {
                max_params(1)?;
                Transform::GaussianBlur {
                    sigma: num(0, Some(1.0))?,
                }
            }
            "sharpen" => {
                max_params(2)?;
                Transform::Sharpen {
                    alpha: num(0, Some(1.0))?,
                    sigma: num(1, Some(1.0))?,
                }
            }
            other => {
                return Err(Error::Parameter(format!(
                    "unknown transform {other:?}; expected one of histogram_equalize, power_law, \
                     box_average, gaussian_blur, sharpen, negative"
                )))
            }
        };
        Ok(t)
    }
}

/// Ordered list of transforms applied to each source image.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPreset {
    pub transforms: Vec<Transform>,
}

impl AugmentationPreset {
    /// Two box averages, five gamma curves and one unsharp mask: with the
    /// original this expands each source image ninefold.
    pub fn xray_default() -> Self {
        let mut transforms = vec![
            Transform::BoxAverage { k: 3 },
            Transform::BoxAverage { k: 5 },
        ];
        for gamma in [0.40, 0.45, 0.50, 0.55, 0.60] {
            transforms.push(Transform::PowerLaw { gamma, c: 1.0 });
        }
        transforms.push(Transform::Sharpen {
            alpha: 1.0,
            sigma: 1.0,
        });
        AugmentationPreset { transforms }
    }

    pub fn none() -> Self {
        AugmentationPreset { transforms: vec![] }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

/// `default`, `none`, or a comma-separated list of transforms.
impl FromStr for AugmentationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "default" | "xray" => Ok(Self::xray_default()),
            "none" | "" => Ok(Self::none()),
            list => Ok(AugmentationPreset {
                transforms: list
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?,
            }),
        }
    }
}

/// Writes each source image, one derived image per preset entry, and a copy
/// of the labels for each, then a manifest `<name>_augmented.txt` in
/// `out_dir`. Output order is source order, then preset order.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    preset: &AugmentationPreset,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut names = HashSet::new();
    for e in &manifest.entries {
        let file = e.image.file_name().unwrap_or_default().to_owned();
        if !names.insert(file.clone()) {
            return Err(manifest_err(
                &e.image,
                format!("two source images share the file name {}", file.to_string_lossy()),
            ));
        }
    }

    let per_source: Vec<Vec<ManifestEntry>> = manifest
        .entries
        .par_iter()
        .map(|entry| augment_one(entry, preset, out_dir))
        .collect::<Result<_>>()?;

    let out = DatasetManifest {
        name: format!("{}_augmented", manifest.name),
        split: manifest.split,
        entries: per_source.into_iter().flatten().collect(),
        class_names: manifest.class_names.clone(),
    };
    out.write(out_dir.join(format!("{}.txt", out.name)))?;
    Ok(out)
}

fn augment_one(
    entry: &ManifestEntry,
    preset: &AugmentationPreset,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let ctx = |e: Error| e.context(format!("augmenting {}", entry.image.display()));
    let anns = read_labels(&entry.label).map_err(ctx)?;
    let label_text = write_label_file(&anns);
    let stem = entry
        .image
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let ext = entry
        .image
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "png".into());

    let write_label = |image: &Path| -> Result<PathBuf> {
        let label = label_path_for(image);
        fs::write(&label, &label_text).map_err(|e| Error::io(&label, e))?;
        Ok(label)
    };

    let mut out = Vec::with_capacity(1 + preset.len());
    let original = out_dir.join(entry.image.file_name().unwrap_or_default());
    fs::copy(&entry.image, &original).map_err(|e| Error::io(&original, e))?;
    let label = write_label(&original)?;
    out.push(ManifestEntry {
        image: original,
        label,
    });

    if preset.is_empty() {
        return Ok(out);
    }
    let img = Image::load(&entry.image).map_err(ctx)?;
    for t in &preset.transforms {
        let derived = t.apply(&img).map_err(ctx)?;
        let path = out_dir.join(format!("{stem}__{}.{ext}", t.tag()));
        derived.save(&path)?;
        let label = write_label(&path)?;
        out.push(ManifestEntry { image: path, label });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    /// `(class name, object count)` in class-table order.
    pub per_class: Vec<(String, usize)>,
    /// Objects per image -> number of images.
    pub objects_per_image: BTreeMap<usize, usize>,
    pub total_objects: usize,
}

pub fn dataset_stats(manifest: &DatasetManifest) -> Result<DatasetStats> {
    let labels = manifest.load_labels()?;
    Ok(stats_from_labels(&manifest.class_names, &labels))
}

pub fn stats_from_labels(class_names: &[String], labels: &[Vec<Annotation>]) -> DatasetStats {
    let mut counts = vec![0usize; class_names.len()];
    let mut hist = BTreeMap::new();
    for anns in labels {
        for a in anns {
            counts[a.class_id] += 1;
        }
        *hist.entry(anns.len()).or_insert(0) += 1;
    }
    DatasetStats {
        images: labels.len(),
        total_objects: counts.iter().sum(),
        per_class: class_names.iter().cloned().zip(counts).collect(),
        objects_per_image: hist,
    }
}
