//! JSON documents written and read by the commands.

use scrapsight_core::eval::EvalReport;
use scrapsight_core::safety::{ImageResult, VerdictSummary};
use scrapsight_core::{BBox, Detection, OverlapMetric};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class_id: usize,
    pub name: String,
    pub confidence: f64,
    pub objectness: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl DetectionRecord {
    pub fn new(d: &Detection, class_names: &[String]) -> Self {
        DetectionRecord {
            class_id: d.class_id,
            name: class_names.get(d.class_id).cloned().unwrap_or_default(),
            confidence: d.confidence,
            objectness: d.objectness,
            bbox: d.bbox,
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            class_id: self.class_id,
            confidence: self.confidence,
            objectness: self.objectness,
        }
    }
}

/// Detections for one input, or the reason it could not be processed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default)]
    pub detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub schema: u32,
    pub class_names: Vec<String>,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub nms_metric: OverlapMetric,
    pub images: Vec<ImageDetections>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ClassifyEntry {
    Done(ImageResult),
    Failed { image: String, error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifyFile {
    pub schema: u32,
    pub class_names: Vec<String>,
    pub images: Vec<ClassifyEntry>,
    pub summary: VerdictSummary,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalFile<'a> {
    pub schema: u32,
    pub class_names: Vec<String>,
    #[serde(flatten)]
    pub report: &'a EvalReport,
}
