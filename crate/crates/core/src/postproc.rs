//! Box overlap measures and greedy per-class non-maximum suppression.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::BBox;
use crate::error::Error;
use crate::inference::Detection;

/// Default NMS overlap threshold.
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.45;

/// Corner form of a box, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl CornerBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        CornerBox { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

impl From<BBox> for CornerBox {
    fn from(b: BBox) -> Self {
        CornerBox {
            x1: b.cx - b.w / 2.0,
            y1: b.cy - b.h / 2.0,
            x2: b.cx + b.w / 2.0,
            y2: b.cy + b.h / 2.0,
        }
    }
}

fn intersection(a: &CornerBox, b: &CornerBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// IoU minus the squared centre distance over the squared diagonal of the
/// smallest enclosing box.
pub fn diou(a: &CornerBox, b: &CornerBox) -> f64 {
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    let d2 = (acx - bcx).powi(2) + (acy - bcy).powi(2);
    let cw = a.x2.max(b.x2) - a.x1.min(b.x1);
    let ch = a.y2.max(b.y2) - a.y1.min(b.y1);
    let c2 = cw * cw + ch * ch;
    let penalty = if c2 > 0.0 { d2 / c2 } else { 0.0 };
    iou(a, b) - penalty
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMetric {
    #[default]
    Iou,
    Diou,
}

impl OverlapMetric {
    pub fn eval(&self, a: &CornerBox, b: &CornerBox) -> f64 {
        match self {
            OverlapMetric::Iou => iou(a, b),
            OverlapMetric::Diou => diou(a, b),
        }
    }
}

impl fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMetric::Iou => "iou",
            OverlapMetric::Diou => "diou",
        })
    }
}

impl FromStr for OverlapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "iou" => Ok(OverlapMetric::Iou),
            "diou" => Ok(OverlapMetric::Diou),
            other => Err(Error::Parameter(format!(
                "unknown overlap metric {other:?}; expected iou or diou"
            ))),
        }
    }
}

/// Confidence descending, then class id, then box `(cx, cy, w, h)`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Greedy NMS applied within each class. A box is dropped when its overlap
/// with an already kept box of the same class exceeds `overlap_threshold`.
/// Output is sorted by [`detection_order`].
pub fn nms(dets: &[Detection], overlap_threshold: f64, metric: OverlapMetric) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let corners: Vec<CornerBox> = sorted.iter().map(|d| CornerBox::from(d.bbox)).collect();
    let mut kept: Vec<usize> = Vec::new();
    for (i, det) in sorted.iter().enumerate() {
        let suppressed = kept.iter().any(|&k| {
            sorted[k].class_id == det.class_id
                && metric.eval(&corners[k], &corners[i]) > overlap_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| sorted[i]).collect()
}
