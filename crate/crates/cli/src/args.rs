use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scrapsight_core::eval::ApMethod;
use scrapsight_core::OverlapMetric;

use crate::config::{Format, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "scrapsight",
    version,
    about = "Ammunition-scrap detection, evaluation and MDAS/MPPEH sorting"
)]
pub struct Cli {
    /// TOML file supplying values for any flag not given on the command line
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a labelled dataset with intensity transforms
    Augment(AugmentArgs),
    /// Model utilities
    #[command(subcommand)]
    Model(ModelCommand),
    /// Detect scrap pieces in images
    Detect(DetectArgs),
    /// Score detections against ground-truth labels
    Evaluate(EvaluateArgs),
    /// Sort images into MDAS / MPPEH
    Classify(DetectArgs),
    /// Draw boxes from a detections file
    Render(RenderArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Parse a cfg (and optionally weights) and print the layer table
    Inspect(InspectArgs),
}

#[derive(Debug, Default, Args)]
pub struct ModelArgs {
    /// Darknet network cfg
    #[arg(long, value_name = "FILE")]
    pub cfg: Option<PathBuf>,
    /// Darknet weights file
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Class names, one per line [default: full-ammo, casing, projectile]
    #[arg(long, value_name = "FILE")]
    pub names: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct DetectionArgs {
    /// Confidence threshold [default: 0.25]
    #[arg(long, value_name = "T")]
    pub conf: Option<f64>,
    /// NMS overlap threshold [default: 0.45]
    #[arg(long, value_name = "T")]
    pub nms: Option<f64>,
    /// NMS overlap measure, iou or diou [default: iou]
    #[arg(long, value_name = "METRIC")]
    pub nms_metric: Option<OverlapMetric>,
    /// Letterbox images into the network input instead of stretching [default: off]
    #[arg(long)]
    pub letterbox: bool,
}

#[derive(Debug, Default, Args)]
pub struct OutputArgs {
    /// Directory for report files and rendered images
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Output format: text, json or csv [default: json for detect, text otherwise]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Image list, one path per line; labels sit next to each image
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Class names, one per line [default: <manifest>.names, obj.names, built-in table]
    #[arg(long, value_name = "FILE")]
    pub names: Option<PathBuf>,
    /// default, none, or a comma list such as box_average:3,power_law:0.4 [default: default]
    #[arg(long, value_name = "PRESET")]
    pub preset: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output format: text or json [default: text]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub detection: DetectionArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Write annotated copies of the images into --out [default: off]
    #[arg(long)]
    pub render: bool,
    /// Input images
    #[arg(required = true, value_name = "IMAGE")]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test image list with labels
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Precomputed detections JSON (from `detect`) instead of running the model
    #[arg(long, value_name = "FILE")]
    pub detections: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub detection: DetectionArgs,
    /// IoU needed for a true positive [default: 0.5]
    #[arg(long, value_name = "T")]
    pub iou: Option<f64>,
    /// AP integration: auc or 11 [default: auc]
    #[arg(long, value_name = "METHOD")]
    pub points: Option<ApMethod>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Detections JSON written by `detect`
    #[arg(long, value_name = "FILE")]
    pub detections: Option<PathBuf>,
    /// Class names overriding those stored in the detections file
    #[arg(long, value_name = "FILE")]
    pub names: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl ModelArgs {
    fn settings(&self) -> Settings {
        Settings {
            cfg: self.cfg.clone(),
            weights: self.weights.clone(),
            names: self.names.clone(),
            ..Settings::default()
        }
    }
}

impl DetectionArgs {
    fn apply(&self, s: &mut Settings) {
        s.conf = self.conf;
        s.nms = self.nms;
        s.nms_metric = self.nms_metric;
        s.letterbox = self.letterbox.then_some(true);
    }
}

impl OutputArgs {
    fn apply(&self, s: &mut Settings) {
        s.out = self.out.clone();
        s.format = self.format;
    }
}

impl Command {
    /// Flag values as the highest-precedence settings layer.
    pub fn settings(&self) -> Settings {
        match self {
            Command::Augment(a) => Settings {
                manifest: a.manifest.clone(),
                names: a.names.clone(),
                preset: a.preset.clone(),
                out: a.out.clone(),
                ..Settings::default()
            },
            Command::Model(ModelCommand::Inspect(a)) => Settings {
                format: a.format,
                ..a.model.settings()
            },
            Command::Detect(a) | Command::Classify(a) => {
                let mut s = a.model.settings();
                a.detection.apply(&mut s);
                a.output.apply(&mut s);
                s.render = a.render.then_some(true);
                s
            }
            Command::Evaluate(a) => {
                let mut s = a.model.settings();
                a.detection.apply(&mut s);
                a.output.apply(&mut s);
                s.manifest = a.manifest.clone();
                s.detections = a.detections.clone();
                s.iou = a.iou;
                s.points = a.points;
                s
            }
            Command::Render(a) => Settings {
                detections: a.detections.clone(),
                names: a.names.clone(),
                out: a.out.clone(),
                ..Settings::default()
            },
        }
    }
}
