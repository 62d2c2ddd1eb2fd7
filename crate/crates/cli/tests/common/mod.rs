#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use scrapsight_cli::{Exit, RunConfig, Settings};
use scrapsight_core::darknet::{self, ConvWeights};
use scrapsight_core::{Annotation, Image, LoadedNetwork};

/// 4x4 grey input, a 1x1 linear conv and a one-anchor, one-class head.
/// Objectness and class logits are `40·v − 20` for pixel value `v` in [0, 1].
pub const HAND_CFG: &str = "[net]
width=4
height=4
channels=1

[convolutional]
filters=6
size=1
stride=1
pad=0
activation=linear

[yolo]
mask=0
anchors=2,2
classes=1
num=1
";

pub struct ModelFiles {
    pub cfg: PathBuf,
    pub weights: PathBuf,
    pub names: PathBuf,
}

pub fn write_hand_model(dir: &Path, class_name: &str) -> ModelFiles {
    let def = darknet::parse_cfg(HAND_CFG).unwrap();
    let weights = ConvWeights {
        biases: vec![0.0, 0.0, 0.0, 0.0, -20.0, -20.0],
        batch_norm: None,
        weights: vec![0.0, 0.0, 0.0, 0.0, 40.0, 40.0],
    };
    let net = LoadedNetwork::new(def, vec![weights]).unwrap();
    let files = ModelFiles {
        cfg: dir.join("hand.cfg"),
        weights: dir.join("hand.weights"),
        names: dir.join("hand.names"),
    };
    fs::write(&files.cfg, HAND_CFG).unwrap();
    fs::write(&files.weights, darknet::encode_weights(&net)).unwrap();
    fs::write(&files.names, format!("{class_name}\n")).unwrap();
    files
}

/// All black except pixel (x=2, y=1) at 255.
pub fn fixture_image() -> Image {
    let mut data = vec![0u8; 16];
    data[4 + 2] = 255;
    Image::gray(4, 4, data).unwrap()
}

pub fn write_image(path: &Path, img: &Image) -> PathBuf {
    img.save(path).unwrap();
    path.to_path_buf()
}

pub fn model_config(files: &ModelFiles) -> RunConfig {
    RunConfig::resolve(Settings {
        cfg: Some(files.cfg.clone()),
        weights: Some(files.weights.clone()),
        names: Some(files.names.clone()),
        ..Settings::default()
    })
    .unwrap()
}

/// Runs a command function, returning its exit status and stdout text.
pub fn capture(f: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<Exit>) -> (Exit, String) {
    let mut buf = Vec::new();
    let exit = f(&mut buf).unwrap_or_else(|e| panic!("command failed: {e:#}"));
    (exit, String::from_utf8(buf).unwrap())
}

/// Writes `n` small grey images with labels and a manifest naming them.
pub fn write_dataset(dir: &Path, manifest: &str, labels: &[Vec<Annotation>]) -> PathBuf {
    let mut list = String::new();
    for (i, anns) in labels.iter().enumerate() {
        let name = format!("img_{i:03}.png");
        let data = (0..64).map(|p| ((p * 37 + i * 11) % 256) as u8).collect();
        Image::gray(8, 8, data).unwrap().save(dir.join(&name)).unwrap();
        fs::write(
            dir.join(format!("img_{i:03}.txt")),
            scrapsight_core::annotations::write_label_file(anns),
        )
        .unwrap();
        list.push_str(&name);
        list.push('\n');
    }
    let path = dir.join(manifest);
    fs::write(&path, list).unwrap();
    path
}
