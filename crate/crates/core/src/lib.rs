//! Ammunition scrap inspection toolkit.
//!
//! The crate covers the whole offline pipeline for sorting scrap pieces into
//! safe (MDAS) and potentially hazardous (MPPEH) material:
//!
//! * [`imgops`]: 8-bit rasters and the intensity transforms used to expand
//!   small x-ray datasets,
//! * [`annotations`]: darknet label files, manifests and dataset augmentation,
//! * [`darknet`]: `.cfg` / `.weights` parsing and shape validation,
//! * [`inference`]: CPU forward pass for the tiny-YOLOv4 layer set,
//! * [`postproc`]: IoU / DIoU and non-maximum suppression,
//! * [`eval`]: detection matching, precision / recall / F1, AP and mAP,
//! * [`safety`]: per-piece and per-image verdicts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotations;
pub mod darknet;
pub mod eval;
pub mod imgops;
pub mod inference;
pub mod postproc;
pub mod safety;

mod error;

pub use annotations::{Annotation, AugmentationPreset, BBox, DatasetManifest, Split, Transform};
pub use darknet::{LayerDef, LoadedNetwork, NetworkDef};
pub use error::{Error, Result};
pub use eval::{EvalReport, MatchResult};
pub use imgops::Image;
pub use inference::{Detection, ForwardOptions, Tensor};
pub use postproc::{CornerBox, OverlapMetric};
pub use safety::{SafetyReport, Verdict};

/// Class table shipped with the toolkit. Index order matches the label files.
pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["full-ammo", "casing", "projectile"];

/// Reference tiny-YOLOv4 network description for the three scrap classes.
pub const TINY_YOLOV4_CFG: &str = include_str!("../assets/yolov4-tiny-scrap.cfg");

/// Default class names as owned strings.
pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}
