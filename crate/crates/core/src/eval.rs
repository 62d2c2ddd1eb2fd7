//! Detection matching and the precision / recall / F1 / AP report.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::Annotation;
use crate::error::{Error, Result};
use crate::inference::Detection;
use crate::postproc::{detection_order, iou, CornerBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Outcome of matching for one class.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClassMatches {
    /// `(confidence, is_true_positive)` for every detection of the class.
    pub scored: Vec<(f64, bool)>,
    pub gt_count: usize,
    pub false_negatives: usize,
}

impl ClassMatches {
    pub fn true_positives(&self) -> usize {
        self.scored.iter().filter(|(_, tp)| *tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.scored.len() - self.true_positives()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MatchResult {
    pub per_class: Vec<ClassMatches>,
    /// IoU of every true-positive pair.
    pub matched_ious: Vec<f64>,
}

fn check_classes(num_classes: usize, gt: &[Vec<Annotation>], dets: &[Vec<Detection>]) -> Result<()> {
    if gt.len() != dets.len() {
        return Err(Error::Parameter(format!(
            "ground truth covers {} images but detections cover {}",
            gt.len(),
            dets.len()
        )));
    }
    let bad_gt = gt.iter().flatten().map(|a| a.class_id);
    let bad_det = dets.iter().flatten().map(|d| d.class_id);
    if let Some(c) = bad_gt.chain(bad_det).find(|&c| c >= num_classes) {
        return Err(Error::UnknownClass(c));
    }
    Ok(())
}

/// Per image and class, detections are visited in confidence order; each
/// takes the unmatched same-class ground truth with the highest IoU if that
/// IoU reaches `iou_threshold`, otherwise it is a false positive.
pub fn match_detections(
    gt: &[Vec<Annotation>],
    dets: &[Vec<Detection>],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<MatchResult> {
    check_classes(num_classes, gt, dets)?;
    let mut result = MatchResult {
        per_class: vec![ClassMatches::default(); num_classes],
        matched_ious: Vec::new(),
    };
    for (truth, found) in gt.iter().zip(dets) {
        let mut found: Vec<&Detection> = found.iter().collect();
        found.sort_by(|a, b| detection_order(a, b));
        for (class, acc) in result.per_class.iter_mut().enumerate() {
            let boxes: Vec<CornerBox> = truth
                .iter()
                .filter(|a| a.class_id == class)
                .map(|a| a.bbox.into())
                .collect();
            let mut matched = vec![false; boxes.len()];
            for d in found.iter().filter(|d| d.class_id == class) {
                let db = CornerBox::from(d.bbox);
                let best = boxes
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| !matched[*g])
                    .map(|(g, b)| (g, iou(&db, b)))
                    .fold(None, |best: Option<(usize, f64)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    });
                let tp = match best {
                    Some((g, overlap)) if overlap >= iou_threshold => {
                        matched[g] = true;
                        result.matched_ious.push(overlap);
                        true
                    }
                    _ => false,
                };
                acc.scored.push((d.confidence, tp));
            }
            acc.gt_count += boxes.len();
            acc.false_negatives += matched.iter().filter(|m| !**m).count();
        }
    }
    Ok(result)
}

/// Precision, recall and F1 with zero denominators mapped to 0.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    (precision, recall, f1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMethod {
    /// Area under the monotone precision envelope.
    #[default]
    Auc,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    #[serde(rename = "11")]
    ElevenPoint,
}

impl FromStr for ApMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auc" | "continuous" | "all" => Ok(ApMethod::Auc),
            "11" | "eleven" => Ok(ApMethod::ElevenPoint),
            other => Err(Error::Parameter(format!(
                "unknown AP method {other:?}; expected auc or 11"
            ))),
        }
    }
}

/// Average precision of one class from its scored detections.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize, method: ApMethod) -> f64 {
    if gt_count == 0 || scored.is_empty() {
        return 0.0;
    }
    let mut order: Vec<&(f64, bool)> = scored.iter().collect();
    // Stable: equal confidences keep their input order.
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, (_, is_tp)) in order.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Envelope: best precision at this or any higher recall.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match method {
        ApMethod::Auc => {
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    area += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            area
        }
        ApMethod::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let level = t as f64 / 10.0;
                let p = recall
                    .iter()
                    .zip(&precision)
                    .filter(|(r, _)| **r >= level - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            conf_threshold: crate::inference::DEFAULT_CONF_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            ap_method: ApMethod::Auc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
}

impl ReportRow {
    fn from_counts(name: String, tp: usize, fp: usize, fn_: usize, ap: f64) -> Self {
        let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_);
        ReportRow {
            name,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            ap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: usize,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub ap_method: ApMethod,
    /// One row per class, in class-id order.
    pub classes: Vec<ReportRow>,
    /// Summed counts; its `ap` field holds the mAP.
    pub total: ReportRow,
    pub map: f64,
    /// Mean IoU of matched pairs at the confidence threshold (informational).
    pub average_iou: f64,
}

/// Counts and rates over detections at or above the confidence
/// threshold; AP over every detection supplied.
pub fn evaluate(
    gt: &[Vec<Annotation>],
    dets: &[Vec<Detection>],
    class_names: &[String],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let n = class_names.len();
    let all = match_detections(gt, dets, n, config.iou_threshold)?;
    let confident: Vec<Vec<Detection>> = dets
        .iter()
        .map(|d| {
            d.iter()
                .filter(|d| d.confidence >= config.conf_threshold)
                .copied()
                .collect()
        })
        .collect();
    let thresholded = match_detections(gt, &confident, n, config.iou_threshold)?;

    let mut classes = Vec::with_capacity(n);
    for (c, name) in class_names.iter().enumerate() {
        let at = &thresholded.per_class[c];
        let ap = average_precision(&all.per_class[c].scored, all.per_class[c].gt_count, config.ap_method);
        classes.push(ReportRow::from_counts(
            name.clone(),
            at.true_positives(),
            at.false_positives(),
            at.false_negatives,
            ap,
        ));
    }
    let map = if n == 0 {
        0.0
    } else {
        classes.iter().map(|r| r.ap).sum::<f64>() / n as f64
    };
    let total = ReportRow::from_counts(
        "Total".into(),
        classes.iter().map(|r| r.tp).sum(),
        classes.iter().map(|r| r.fp).sum(),
        classes.iter().map(|r| r.fn_).sum(),
        map,
    );
    let ious = &thresholded.matched_ious;
    let average_iou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    Ok(EvalReport {
        images: gt.len(),
        conf_threshold: config.conf_threshold,
        iou_threshold: config.iou_threshold,
        ap_method: config.ap_method,
        classes,
        total,
        map,
        average_iou,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

impl EvalReport {
    /// Aligned table: TP, FP, FN, Precision, Recall, F1-score, AP.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut s = String::new();
        let header = format!(
            "{:<width$} | {:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
            "", "TP", "FP", "FN", "Precision", "Recall", "F1-score", "AP"
        );
        let rule = "-".repeat(header.len());
        let _ = writeln!(s, "{header}\n{rule}");
        let row = |s: &mut String, r: &ReportRow| {
            let _ = writeln!(
                s,
                "{:<width$} | {:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
                r.name,
                r.tp,
                r.fp,
                r.fn_,
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
                pct(r.ap)
            );
        };
        for r in &self.classes {
            row(&mut s, r);
        }
        let _ = writeln!(s, "{rule}");
        row(&mut s, &self.total);
        let _ = writeln!(
            s,
            "mAP@{:.2} = {}  (conf >= {}, average matched IoU {})",
            self.iou_threshold,
            pct(self.map),
            self.conf_threshold,
            pct(self.average_iou)
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,tp,fp,fn,precision,recall,f1,ap\n");
        for r in self.classes.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.name, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1, r.ap
            );
        }
        s
    }
}
