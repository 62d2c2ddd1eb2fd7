//! MDAS / MPPEH verdicts for scrap pieces and whole images.
//!
//! Full-ammo may still hold energetics and is MPPEH; loose casings and
//! projectiles are MDAS. An image with nothing detected is INDETERMINATE and
//! goes to manual inspection.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::Detection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Verdict {
    /// Material documented as safe.
    #[serde(rename = "MDAS")]
    Mdas,
    /// Material potentially possessing explosive hazard.
    #[serde(rename = "MPPEH")]
    Mppeh,
    #[serde(rename = "INDETERMINATE")]
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Mdas => "MDAS",
            Verdict::Mppeh => "MPPEH",
            Verdict::Indeterminate => "INDETERMINATE",
        })
    }
}

fn normalize(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['_', ' '], "-")
}

/// Verdict for a class name from the shipped table.
pub fn class_verdict(name: &str) -> Result<Verdict> {
    match normalize(name).as_str() {
        "full-ammo" | "fullammo" => Ok(Verdict::Mppeh),
        "casing" | "case" | "projectile" => Ok(Verdict::Mdas),
        _ => Err(Error::UnknownClassName(name.to_string())),
    }
}

/// Depends on the class only, never on the confidence.
pub fn classify_detection(det: &Detection, class_names: &[String]) -> Result<Verdict> {
    let name = class_names
        .get(det.class_id)
        .ok_or(Error::UnknownClass(det.class_id))?;
    class_verdict(name)
}

/// Any MPPEH piece makes the image MPPEH; no pieces makes it INDETERMINATE.
pub fn image_verdict(verdicts: &[Verdict]) -> Verdict {
    if verdicts.is_empty() {
        Verdict::Indeterminate
    } else if verdicts.contains(&Verdict::Mppeh) {
        Verdict::Mppeh
    } else {
        Verdict::Mdas
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PieceVerdict {
    pub detection: Detection,
    pub class_name: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageResult {
    pub image: String,
    pub pieces: Vec<PieceVerdict>,
    pub verdict: Verdict,
    pub detection_count: usize,
}

pub fn classify_image(image: impl Into<String>, dets: &[Detection], class_names: &[String]) -> Result<ImageResult> {
    let pieces = dets
        .iter()
        .map(|d| {
            let verdict = classify_detection(d, class_names)?;
            Ok(PieceVerdict {
                detection: *d,
                class_name: class_names[d.class_id].clone(),
                verdict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdicts: Vec<Verdict> = pieces.iter().map(|p| p.verdict).collect();
    Ok(ImageResult {
        image: image.into(),
        verdict: image_verdict(&verdicts),
        detection_count: pieces.len(),
        pieces,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerdictSummary {
    pub mdas: usize,
    pub mppeh: usize,
    pub indeterminate: usize,
}

impl VerdictSummary {
    pub fn total(&self) -> usize {
        self.mdas + self.mppeh + self.indeterminate
    }

    pub fn all_safe(&self) -> bool {
        self.mppeh == 0 && self.indeterminate == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SafetyReport {
    pub images: Vec<ImageResult>,
    pub summary: VerdictSummary,
}

/// Aggregates per-image results, keeping their order.
pub fn batch_report(images: Vec<ImageResult>) -> SafetyReport {
    let mut summary = VerdictSummary::default();
    for img in &images {
        match img.verdict {
            Verdict::Mdas => summary.mdas += 1,
            Verdict::Mppeh => summary.mppeh += 1,
            Verdict::Indeterminate => summary.indeterminate += 1,
        }
    }
    SafetyReport { images, summary }
}

impl SafetyReport {
    /// One row per image plus a trailing summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,verdict,detections,mppeh_pieces,mdas_pieces\n");
        for img in &self.images {
            let mppeh = img.pieces.iter().filter(|p| p.verdict == Verdict::Mppeh).count();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&img.image),
                img.verdict,
                img.detection_count,
                mppeh,
                img.detection_count - mppeh
            ));
        }
        s.push_str(&format!(
            "# summary,MDAS={},MPPEH={},INDETERMINATE={}\n",
            self.summary.mdas, self.summary.mppeh, self.summary.indeterminate
        ));
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
