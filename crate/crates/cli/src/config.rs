use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use scrapsight_core::eval::{ApMethod, DEFAULT_IOU_THRESHOLD};
use scrapsight_core::inference::DEFAULT_CONF_THRESHOLD;
use scrapsight_core::postproc::DEFAULT_NMS_THRESHOLD;
use scrapsight_core::{AugmentationPreset, OverlapMetric};
use serde::Deserialize;

pub const THREADS_ENV: &str = "SCRAPSIGHT_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// One layer of configuration: flags, config file or environment. Unset
/// fields fall through to the next layer.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub cfg: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub names: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub conf: Option<f64>,
    pub iou: Option<f64>,
    pub nms: Option<f64>,
    pub nms_metric: Option<OverlapMetric>,
    pub points: Option<ApMethod>,
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub letterbox: Option<bool>,
    pub render: Option<bool>,
    pub threads: Option<usize>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Settings { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Settings {
    /// Field-wise `self` over `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        layer!(
            self, lower, cfg, weights, names, manifest, detections, conf, iou, nms, nms_metric,
            points, preset, out, format, letterbox, render, threads
        )
    }

    /// Reads a TOML config file. Relative paths in it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut s: Settings =
            toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.cfg,
            &mut s.weights,
            &mut s.names,
            &mut s.manifest,
            &mut s.detections,
            &mut s.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    /// The thread cap from the environment value, if set.
    pub fn from_env_value(value: Option<&str>) -> Result<Settings> {
        let threads = match value.map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(
                v.parse::<usize>()
                    .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?,
            ),
        };
        Ok(Settings { threads, ..Settings::default() })
    }
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cfg: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub names: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub nms_threshold: f64,
    pub nms_metric: OverlapMetric,
    pub ap_method: ApMethod,
    pub preset: AugmentationPreset,
    pub out: Option<PathBuf>,
    /// `None` lets each command pick its usual format.
    pub format: Option<Format>,
    pub letterbox: bool,
    pub render: bool,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::resolve(Settings::default()).expect("defaults are valid")
    }
}

fn check_threshold(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        bail!("{name} must be in (0, 1], got {v}")
    }
}

impl RunConfig {
    pub fn resolve(s: Settings) -> Result<RunConfig> {
        let preset = match &s.preset {
            Some(p) => p.parse().with_context(|| format!("invalid preset {p:?}"))?,
            None => AugmentationPreset::xray_default(),
        };
        Ok(RunConfig {
            cfg: s.cfg,
            weights: s.weights,
            names: s.names,
            manifest: s.manifest,
            detections: s.detections,
            conf_threshold: check_threshold("--conf", s.conf.unwrap_or(DEFAULT_CONF_THRESHOLD))?,
            iou_threshold: check_threshold("--iou", s.iou.unwrap_or(DEFAULT_IOU_THRESHOLD))?,
            nms_threshold: check_threshold("--nms", s.nms.unwrap_or(DEFAULT_NMS_THRESHOLD))?,
            nms_metric: s.nms_metric.unwrap_or_default(),
            ap_method: s.points.unwrap_or_default(),
            preset,
            out: s.out,
            format: s.format,
            letterbox: s.letterbox.unwrap_or(false),
            render: s.render.unwrap_or(false),
            threads: s.threads.unwrap_or(0),
        })
    }

    /// A required path setting that must name an existing file.
    pub fn existing(&self, value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
        let p = value.clone().with_context(|| format!("{flag} is required"))?;
        if !p.is_file() {
            bail!("{flag} {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out.clone().context("--out is required")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let flags = Settings { conf: Some(0.4), ..Settings::default() };
        let file = Settings { conf: Some(0.3), nms: Some(0.6), ..Settings::default() };
        let rc = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(rc.conf_threshold, 0.4);
        assert_eq!(rc.nms_threshold, 0.6);
        assert_eq!(rc.iou_threshold, 0.5);
    }

    #[test]
    fn thresholds_are_checked() {
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            let s = Settings { iou: Some(bad), ..Settings::default() };
            assert!(RunConfig::resolve(s).is_err());
        }
        assert!(RunConfig::resolve(Settings { conf: Some(1.0), ..Settings::default() }).is_ok());
    }

    #[test]
    fn config_file_paths_are_relative_to_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "cfg = \"net.cfg\"\nconf = 0.3\nnms_metric = \"diou\"\npoints = \"11\"\n").unwrap();
        let s = Settings::from_file(&path).unwrap();
        assert_eq!(s.cfg, Some(dir.path().join("net.cfg")));
        assert_eq!(s.nms_metric, Some(OverlapMetric::Diou));
        assert_eq!(s.points, Some(ApMethod::ElevenPoint));
        std::fs::write(&path, "confidence = 0.3\n").unwrap();
        assert!(Settings::from_file(&path).is_err());
    }

    #[test]
    fn env_threads() {
        assert_eq!(Settings::from_env_value(Some("4")).unwrap().threads, Some(4));
        assert_eq!(Settings::from_env_value(None).unwrap().threads, None);
        assert!(Settings::from_env_value(Some("many")).is_err());
    }
}
