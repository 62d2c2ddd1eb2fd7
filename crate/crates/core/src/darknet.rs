//! Darknet `.cfg` / `.weights` parsing for the tiny-YOLOv4 layer set.
//!
//! Supported sections are `[net]`, `[convolutional]`, `[maxpool]`, `[route]`,
//! `[upsample]` and `[yolo]`. Route indices are stored absolute.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

pub const SUPPORTED_SECTIONS: &str = "net, convolutional, maxpool, route, upsample, yolo";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetParams {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Leaky,
    Linear,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Leaky => "leaky",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvDef {
    pub filters: usize,
    pub size: usize,
    pub stride: usize,
    /// Resolved zero padding on each side.
    pub padding: usize,
    pub batch_normalize: bool,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxPoolDef {
    pub size: usize,
    pub stride: usize,
    /// Total padding, split `padding / 2` before and the rest after.
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteDef {
    /// Absolute indices of earlier layers.
    pub layers: Vec<usize>,
    pub groups: usize,
    pub group_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpsampleDef {
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct YoloDef {
    pub mask: Vec<usize>,
    /// `(w, h)` in network-input pixels.
    pub anchors: Vec<(f32, f32)>,
    pub classes: usize,
    pub scale_x_y: f32,
}

impl YoloDef {
    pub fn masked_anchors(&self) -> Vec<(f32, f32)> {
        self.mask.iter().map(|&m| self.anchors[m]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerDef {
    Convolutional(ConvDef),
    MaxPool(MaxPoolDef),
    Route(RouteDef),
    Upsample(UpsampleDef),
    Yolo(YoloDef),
}

impl LayerDef {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerDef::Convolutional(_) => "convolutional",
            LayerDef::MaxPool(_) => "maxpool",
            LayerDef::Route(_) => "route",
            LayerDef::Upsample(_) => "upsample",
            LayerDef::Yolo(_) => "yolo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkDef {
    pub net: NetParams,
    pub layers: Vec<LayerDef>,
}

/// Output shape of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

struct Section {
    name: String,
    ordinal: usize,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

// Keys that only matter for training; accepted without a warning.
const TRAINING_KEYS: &[&str] = &[
    "batch", "subdivisions", "momentum", "decay", "angle", "saturation", "exposure", "hue",
    "learning_rate", "burn_in", "max_batches", "policy", "steps", "scales", "mosaic", "cutmix",
    "mixup", "flip", "jitter", "ignore_thresh", "truth_thresh", "random", "cls_normalizer",
    "iou_normalizer", "obj_normalizer", "iou_loss", "iou_thresh", "nms_kind", "beta_nms",
    "resize", "max_delta", "counters_per_class", "label_smooth_eps", "letter_box", "blur",
    "gaussian_noise", "aspect", "min_crop", "max_crop", "track_history_size",
];

impl Section {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Cfg {
            section: self.ordinal,
            line,
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    fn int(&self, key: &str, default: Option<i64>) -> Result<i64> {
        match self.raw(key) {
            Some((v, line)) => v
                .parse::<i64>()
                .map_err(|_| self.err(line, format!("{key}={v:?} is not an integer"))),
            None => default.ok_or_else(|| self.err(self.line, format!("missing required key {key}"))),
        }
    }

    fn positive(&self, key: &str, default: Option<i64>) -> Result<usize> {
        let v = self.int(key, default)?;
        if v < 1 {
            let line = self.raw(key).map(|r| r.1).unwrap_or(self.line);
            return Err(self.err(line, format!("{key} must be at least 1, got {v}")));
        }
        Ok(v as usize)
    }

    fn non_negative(&self, key: &str, default: Option<i64>) -> Result<usize> {
        let v = self.int(key, default)?;
        if v < 0 {
            let line = self.raw(key).map(|r| r.1).unwrap_or(self.line);
            return Err(self.err(line, format!("{key} must be non-negative, got {v}")));
        }
        Ok(v as usize)
    }

    fn float(&self, key: &str, default: f32) -> Result<f32> {
        match self.raw(key) {
            Some((v, line)) => v
                .parse::<f32>()
                .map_err(|_| self.err(line, format!("{key}={v:?} is not a number"))),
            None => Ok(default),
        }
    }

    fn int_list(&self, key: &str) -> Result<Option<(Vec<i64>, usize)>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|_| self.err(line, format!("{key}: {s:?} is not an integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some((items, line)))
    }

    fn warn_unknown(&self, known: &[&str], warnings: &mut Vec<String>) {
        for (k, _, line) in &self.entries {
            if !known.contains(&k.as_str()) && !TRAINING_KEYS.contains(&k.as_str()) {
                warnings.push(format!(
                    "section {} [{}] line {line}: ignoring unknown key {k:?}",
                    self.ordinal, self.name
                ));
            }
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Cfg {
                    section: sections.len(),
                    line: line_no,
                    message: format!("malformed section header {line:?}"),
                });
            }
            sections.push(Section {
                name: line[1..line.len() - 1].trim().to_ascii_lowercase(),
                ordinal: sections.len(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(current) = sections.last_mut() else {
            return Err(Error::Cfg {
                section: 0,
                line: line_no,
                message: "key/value pair before the first section".into(),
            });
        };
        let Some((k, v)) = line.split_once('=') else {
            return Err(current.err(line_no, format!("expected key=value, found {line:?}")));
        };
        current
            .entries
            .push((k.trim().to_string(), v.trim().to_string(), line_no));
    }
    Ok(sections)
}

/// Parses cfg text, logging ignored keys at warn level.
pub fn parse_cfg(text: &str) -> Result<NetworkDef> {
    let (def, warnings) = parse_cfg_with_warnings(text)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(def)
}

pub fn parse_cfg_with_warnings(text: &str) -> Result<(NetworkDef, Vec<String>)> {
    let sections = split_sections(text)?;
    let mut warnings = Vec::new();
    let Some(first) = sections.first() else {
        return Err(Error::Cfg {
            section: 0,
            line: 1,
            message: "empty cfg: expected a [net] section".into(),
        });
    };
    if first.name != "net" && first.name != "network" {
        return Err(first.err(first.line, format!("first section must be [net], found [{}]", first.name)));
    }
    first.warn_unknown(&["width", "height", "channels"], &mut warnings);
    let net = NetParams {
        width: first.positive("width", None)?,
        height: first.positive("height", None)?,
        channels: first.positive("channels", Some(3))?,
    };

    let mut layers = Vec::with_capacity(sections.len() - 1);
    for (index, s) in sections.iter().skip(1).enumerate() {
        let layer = match s.name.as_str() {
            "convolutional" | "conv" => parse_conv(s, &mut warnings)?,
            "maxpool" | "max" => parse_maxpool(s, &mut warnings)?,
            "route" => parse_route(s, index, &mut warnings)?,
            "upsample" => {
                s.warn_unknown(&["stride"], &mut warnings);
                LayerDef::Upsample(UpsampleDef {
                    stride: s.positive("stride", Some(2))?,
                })
            }
            "yolo" => parse_yolo(s, &mut warnings)?,
            other => {
                return Err(s.err(
                    s.line,
                    format!("unsupported section [{other}]; supported: {SUPPORTED_SECTIONS}"),
                ))
            }
        };
        layers.push(layer);
    }
    Ok((NetworkDef { net, layers }, warnings))
}

fn parse_conv(s: &Section, warnings: &mut Vec<String>) -> Result<LayerDef> {
    s.warn_unknown(
        &["filters", "size", "stride", "pad", "padding", "batch_normalize", "activation"],
        warnings,
    );
    let size = s.positive("size", Some(1))?;
    if size % 2 == 0 {
        let line = s.raw("size").map(|r| r.1).unwrap_or(s.line);
        return Err(s.err(line, format!("convolution size must be odd, got {size}")));
    }
    let pad = s.int("pad", Some(0))? != 0;
    let padding = if s.raw("padding").is_some() {
        s.non_negative("padding", None)?
    } else if pad {
        size / 2
    } else {
        0
    };
    let activation = match s.raw("activation") {
        None => Activation::Linear,
        Some(("leaky", _)) => Activation::Leaky,
        Some(("linear", _)) => Activation::Linear,
        Some((other, line)) => {
            return Err(s.err(line, format!("unsupported activation {other:?}; expected leaky or linear")))
        }
    };
    Ok(LayerDef::Convolutional(ConvDef {
        filters: s.positive("filters", Some(1))?,
        size,
        stride: s.positive("stride", Some(1))?,
        padding,
        batch_normalize: s.int("batch_normalize", Some(0))? != 0,
        activation,
    }))
}

fn parse_maxpool(s: &Section, warnings: &mut Vec<String>) -> Result<LayerDef> {
    s.warn_unknown(&["size", "stride", "padding"], warnings);
    let stride = s.positive("stride", Some(1))?;
    let size = s.positive("size", Some(stride as i64))?;
    let padding = s.non_negative("padding", Some(size as i64 - 1))?;
    Ok(LayerDef::MaxPool(MaxPoolDef {
        size,
        stride,
        padding,
    }))
}

fn parse_route(s: &Section, index: usize, warnings: &mut Vec<String>) -> Result<LayerDef> {
    s.warn_unknown(&["layers", "groups", "group_id"], warnings);
    let (raw, line) = s
        .int_list("layers")?
        .ok_or_else(|| s.err(s.line, "route requires layers="))?;
    if raw.is_empty() {
        return Err(s.err(line, "route requires at least one layer"));
    }
    let mut layers = Vec::with_capacity(raw.len());
    for r in raw {
        let abs = if r < 0 { index as i64 + r } else { r };
        if abs < 0 || abs >= index as i64 {
            return Err(s.err(
                line,
                format!("route index {r} resolves to {abs}, which is not an earlier layer of layer {index}"),
            ));
        }
        layers.push(abs as usize);
    }
    let groups = s.positive("groups", Some(1))?;
    let group_id = s.non_negative("group_id", Some(0))?;
    if group_id >= groups {
        let line = s.raw("group_id").map(|r| r.1).unwrap_or(s.line);
        return Err(s.err(line, format!("group_id {group_id} must be below groups {groups}")));
    }
    Ok(LayerDef::Route(RouteDef {
        layers,
        groups,
        group_id,
    }))
}

fn parse_yolo(s: &Section, warnings: &mut Vec<String>) -> Result<LayerDef> {
    s.warn_unknown(&["mask", "anchors", "classes", "num", "scale_x_y"], warnings);
    let classes = s.positive("classes", None)?;
    let anchors = match s.raw("anchors") {
        None => return Err(s.err(s.line, "yolo requires anchors=")),
        Some((v, line)) => {
            let vals = v
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.parse::<f32>()
                        .map_err(|_| s.err(line, format!("anchor {x:?} is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.is_empty() || vals.len() % 2 != 0 {
                return Err(s.err(line, format!("anchors need (w,h) pairs, got {} values", vals.len())));
            }
            if vals.iter().any(|a| !(*a > 0.0)) {
                return Err(s.err(line, "anchor dimensions must be positive"));
            }
            vals.chunks_exact(2).map(|p| (p[0], p[1])).collect::<Vec<_>>()
        }
    };
    if let Some((num, line)) = s.raw("num") {
        if num.parse::<usize>().ok() != Some(anchors.len()) {
            return Err(s.err(line, format!("num={num} but {} anchors listed", anchors.len())));
        }
    }
    let mask = match s.int_list("mask")? {
        None => (0..anchors.len()).collect(),
        Some((m, line)) => {
            let mut out = Vec::with_capacity(m.len());
            for v in m {
                if v < 0 || v as usize >= anchors.len() {
                    return Err(s.err(line, format!("mask index {v} outside {} anchors", anchors.len())));
                }
                out.push(v as usize);
            }
            if out.is_empty() {
                return Err(s.err(line, "mask is empty"));
            }
            out
        }
    };
    let scale_x_y = s.float("scale_x_y", 1.0)?;
    if !(scale_x_y > 0.0) {
        return Err(s.err(s.line, format!("scale_x_y must be positive, got {scale_x_y}")));
    }
    Ok(LayerDef::Yolo(YoloDef {
        mask,
        anchors,
        classes,
        scale_x_y,
    }))
}

impl NetworkDef {
    /// Normalized cfg text: every parameter explicit, routes absolute.
    pub fn to_cfg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "[net]\nwidth={}\nheight={}\nchannels={}",
            self.net.width, self.net.height, self.net.channels
        );
        for layer in &self.layers {
            s.push('\n');
            match layer {
                LayerDef::Convolutional(c) => {
                    let _ = writeln!(
                        s,
                        "[convolutional]\nbatch_normalize={}\nfilters={}\nsize={}\nstride={}\npadding={}\nactivation={}",
                        c.batch_normalize as u8,
                        c.filters,
                        c.size,
                        c.stride,
                        c.padding,
                        c.activation.as_str()
                    );
                }
                LayerDef::MaxPool(m) => {
                    let _ = writeln!(
                        s,
                        "[maxpool]\nsize={}\nstride={}\npadding={}",
                        m.size, m.stride, m.padding
                    );
                }
                LayerDef::Route(r) => {
                    let layers: Vec<String> = r.layers.iter().map(|l| l.to_string()).collect();
                    let _ = writeln!(
                        s,
                        "[route]\nlayers={}\ngroups={}\ngroup_id={}",
                        layers.join(","),
                        r.groups,
                        r.group_id
                    );
                }
                LayerDef::Upsample(u) => {
                    let _ = writeln!(s, "[upsample]\nstride={}", u.stride);
                }
                LayerDef::Yolo(y) => {
                    let mask: Vec<String> = y.mask.iter().map(|m| m.to_string()).collect();
                    let anchors: Vec<String> =
                        y.anchors.iter().map(|(w, h)| format!("{w},{h}")).collect();
                    let _ = writeln!(
                        s,
                        "[yolo]\nmask={}\nanchors={}\nclasses={}\nnum={}\nscale_x_y={}",
                        mask.join(","),
                        anchors.join(", "),
                        y.classes,
                        y.anchors.len(),
                        y.scale_x_y
                    );
                }
            }
        }
        s
    }

    /// Number of layers of each kind.
    pub fn kind_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for l in &self.layers {
            *m.entry(l.kind()).or_insert(0) += 1;
        }
        m
    }

    pub fn input_shape(&self) -> LayerShape {
        LayerShape {
            width: self.net.width,
            height: self.net.height,
            channels: self.net.channels,
        }
    }
}

/// Forward shape propagation; one entry per layer (its output shape).
pub fn validate_shapes(def: &NetworkDef) -> Result<Vec<LayerShape>> {
    let mut shapes: Vec<LayerShape> = Vec::with_capacity(def.layers.len());
    for (i, layer) in def.layers.iter().enumerate() {
        let input = if i == 0 {
            def.input_shape()
        } else {
            shapes[i - 1]
        };
        let err = |message: String| Error::Shape { layer: i, message };
        let window = |len: usize, pad: usize, size: usize, stride: usize, axis: &str| -> Result<usize> {
            let padded = len + pad;
            if padded < size {
                return Err(err(format!(
                    "{axis} {len} with padding {pad} is smaller than window {size}"
                )));
            }
            Ok((padded - size) / stride + 1)
        };
        let out = match layer {
            LayerDef::Convolutional(c) => LayerShape {
                width: window(input.width, 2 * c.padding, c.size, c.stride, "width")?,
                height: window(input.height, 2 * c.padding, c.size, c.stride, "height")?,
                channels: c.filters,
            },
            LayerDef::MaxPool(m) => LayerShape {
                width: window(input.width, m.padding, m.size, m.stride, "width")?,
                height: window(input.height, m.padding, m.size, m.stride, "height")?,
                channels: input.channels,
            },
            LayerDef::Route(r) => {
                let first = shapes[r.layers[0]];
                let mut channels = 0;
                for &src in &r.layers {
                    let s = shapes[src];
                    if (s.width, s.height) != (first.width, first.height) {
                        return Err(err(format!(
                            "route inputs differ spatially: layer {} is {}x{}, layer {src} is {}x{}",
                            r.layers[0], first.width, first.height, s.width, s.height
                        )));
                    }
                    if !s.channels.is_multiple_of(r.groups) {
                        return Err(err(format!(
                            "layer {src} has {} channels, not divisible into {} groups",
                            s.channels, r.groups
                        )));
                    }
                    channels += s.channels / r.groups;
                }
                LayerShape {
                    width: first.width,
                    height: first.height,
                    channels,
                }
            }
            LayerDef::Upsample(u) => LayerShape {
                width: input.width * u.stride,
                height: input.height * u.stride,
                channels: input.channels,
            },
            LayerDef::Yolo(y) => {
                let expected = y.mask.len() * (5 + y.classes);
                if input.channels != expected {
                    return Err(err(format!(
                        "yolo layer expects {} channels ({} anchors x (5 + {} classes)), got {}",
                        expected,
                        y.mask.len(),
                        y.classes,
                        input.channels
                    )));
                }
                input
            }
        };
        if out.width == 0 || out.height == 0 || out.channels == 0 {
            return Err(err(format!("non-positive output shape {out}")));
        }
        shapes.push(out);
    }
    Ok(shapes)
}

/// Human-readable shape table, one layer per line.
pub fn shape_table(def: &NetworkDef, shapes: &[LayerShape]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>4}  {:<14} {:>14}    {:<14} detail", "idx", "kind", "input", "output");
    for (i, (layer, out)) in def.layers.iter().zip(shapes).enumerate() {
        let input = if i == 0 { def.input_shape() } else { shapes[i - 1] };
        let detail = match layer {
            LayerDef::Convolutional(c) => format!(
                "{} {}x{}/{} pad {}{} {}",
                c.filters,
                c.size,
                c.size,
                c.stride,
                c.padding,
                if c.batch_normalize { " bn" } else { "" },
                c.activation.as_str()
            ),
            LayerDef::MaxPool(m) => format!("{}x{}/{}", m.size, m.size, m.stride),
            LayerDef::Route(r) if r.groups > 1 => {
                format!("{:?} group {}/{}", r.layers, r.group_id, r.groups)
            }
            LayerDef::Route(r) => format!("{:?}", r.layers),
            LayerDef::Upsample(u) => format!("x{}", u.stride),
            LayerDef::Yolo(y) => format!(
                "mask {:?} classes {} stride {}",
                y.mask,
                y.classes,
                def.net.width / out.width.max(1)
            ),
        };
        let input = match layer {
            LayerDef::Route(_) => "-".to_string(),
            _ => input.to_string(),
        };
        let _ = writeln!(s, "{i:>4}  {:<14} {input:>14} -> {:<14} {detail}", layer.kind(), out.to_string());
    }
    s
}

/// Batch-norm parameters of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub scales: Vec<f32>,
    pub rolling_mean: Vec<f32>,
    pub rolling_variance: Vec<f32>,
}

/// Bound tensors of a convolution. `weights` is `[filters][in_ch][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub biases: Vec<f32>,
    pub batch_norm: Option<BatchNorm>,
    pub weights: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightsHeader {
    pub major: i32,
    pub minor: i32,
    pub revision: i32,
    pub seen: u64,
}

impl WeightsHeader {
    /// Whether the seen-images counter is 64-bit.
    pub fn wide_seen(major: i32, minor: i32) -> bool {
        major * 10 + minor >= 2
    }

    pub fn byte_len(&self) -> usize {
        if Self::wide_seen(self.major, self.minor) {
            20
        } else {
            16
        }
    }
}

/// A parsed network with its convolution tensors bound. Immutable and
/// shareable across threads.
#[derive(Clone, Debug)]
pub struct LoadedNetwork {
    def: NetworkDef,
    shapes: Vec<LayerShape>,
    conv: Vec<Option<ConvWeights>>,
    header: WeightsHeader,
}

impl LoadedNetwork {
    /// Binds tensors given in layer order, one per convolution.
    pub fn new(def: NetworkDef, conv_weights: Vec<ConvWeights>) -> Result<Self> {
        let shapes = validate_shapes(&def)?;
        let mut iter = conv_weights.into_iter();
        let mut conv = Vec::with_capacity(def.layers.len());
        for (i, layer) in def.layers.iter().enumerate() {
            match layer {
                LayerDef::Convolutional(c) => {
                    let w = iter.next().ok_or_else(|| {
                        Error::Weights(format!("no tensors supplied for convolution layer {i}"))
                    })?;
                    let in_ch = if i == 0 { def.net.channels } else { shapes[i - 1].channels };
                    check_conv_weights(i, c, in_ch, &w)?;
                    conv.push(Some(w));
                }
                _ => conv.push(None),
            }
        }
        if iter.next().is_some() {
            return Err(Error::Weights("more tensor sets than convolution layers".into()));
        }
        Ok(LoadedNetwork {
            def,
            shapes,
            conv,
            header: WeightsHeader {
                major: 0,
                minor: 2,
                revision: 0,
                seen: 0,
            },
        })
    }

    pub fn def(&self) -> &NetworkDef {
        &self.def
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn header(&self) -> WeightsHeader {
        self.header
    }

    pub fn conv_weights(&self, layer: usize) -> Option<&ConvWeights> {
        self.conv.get(layer).and_then(Option::as_ref)
    }

    /// Input channel count of `layer`.
    pub fn input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.def.net.channels
        } else {
            self.shapes[layer - 1].channels
        }
    }
}

fn check_conv_weights(layer: usize, c: &ConvDef, in_ch: usize, w: &ConvWeights) -> Result<()> {
    let f = c.filters;
    let check = |name: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            Err(Error::Weights(format!(
                "layer {layer} {name}: expected {want} values, got {got}"
            )))
        } else {
            Ok(())
        }
    };
    check("biases", w.biases.len(), f)?;
    check("weights", w.weights.len(), f * in_ch * c.size * c.size)?;
    match (&w.batch_norm, c.batch_normalize) {
        (Some(bn), true) => {
            check("scales", bn.scales.len(), f)?;
            check("rolling_mean", bn.rolling_mean.len(), f)?;
            check("rolling_variance", bn.rolling_variance.len(), f)?;
        }
        (None, false) => {}
        _ => {
            return Err(Error::Weights(format!(
                "layer {layer}: batch-norm tensors do not match batch_normalize={}",
                c.batch_normalize as u8
            )))
        }
    }
    Ok(())
}

/// Per-convolution tensor sizes in stream order: `(layer, [(name, count)])`.
pub type TensorLayout = Vec<(usize, Vec<(&'static str, usize)>)>;

/// Tensor sizes of every convolution in `def`, as the weights file stores them.
pub fn tensor_layout(def: &NetworkDef) -> Result<TensorLayout> {
    let shapes = validate_shapes(def)?;
    let mut out = Vec::new();
    for (i, layer) in def.layers.iter().enumerate() {
        if let LayerDef::Convolutional(c) = layer {
            let in_ch = if i == 0 { def.net.channels } else { shapes[i - 1].channels };
            let f = c.filters;
            let mut tensors = vec![("biases", f)];
            if c.batch_normalize {
                tensors.extend([("scales", f), ("rolling_mean", f), ("rolling_variance", f)]);
            }
            tensors.push(("weights", f * in_ch * c.size * c.size));
            out.push((i, tensors));
        }
    }
    Ok(out)
}

/// Exact byte length of a weights file for `def` with the given version.
pub fn expected_weights_len(def: &NetworkDef, major: i32, minor: i32) -> Result<usize> {
    let header = if WeightsHeader::wide_seen(major, minor) { 20 } else { 16 };
    let floats: usize = tensor_layout(def)?
        .iter()
        .flat_map(|(_, t)| t.iter().map(|(_, n)| n))
        .sum();
    Ok(header + 4 * floats)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(slice)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Reads a darknet `.weights` stream: version header, seen counter, then
/// little-endian `f32` tensors per convolution in network order. The stream
/// must be consumed exactly.
pub fn parse_weights(bytes: &[u8], def: &NetworkDef) -> Result<LoadedNetwork> {
    let layout = tensor_layout(def)?;
    let mut r = Reader { bytes, pos: 0 };
    let mut int = |name: &str| -> Result<i32> {
        let b = r.take(4).ok_or_else(|| {
            Error::Weights(format!("truncated header: missing {name}"))
        })?;
        Ok(i32::from_le_bytes(b.try_into().unwrap()))
    };
    let major = int("major version")?;
    let minor = int("minor version")?;
    let revision = int("revision")?;
    let seen = if WeightsHeader::wide_seen(major, minor) {
        let b = r
            .take(8)
            .ok_or_else(|| Error::Weights("truncated header: missing 64-bit seen counter".into()))?;
        u64::from_le_bytes(b.try_into().unwrap())
    } else {
        let b = r
            .take(4)
            .ok_or_else(|| Error::Weights("truncated header: missing 32-bit seen counter".into()))?;
        u32::from_le_bytes(b.try_into().unwrap()) as u64
    };

    let mut conv_weights = Vec::with_capacity(layout.len());
    for (layer, tensors) in &layout {
        let mut read = |name: &str, n: usize| -> Result<Vec<f32>> {
            let remaining = r.remaining();
            let b = r.take(4 * n).ok_or_else(|| {
                Error::Weights(format!(
                    "truncated at layer {layer} tensor {name}: need {} bytes, {remaining} remain",
                    4 * n
                ))
            })?;
            Ok(b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut values: Vec<Vec<f32>> = Vec::with_capacity(tensors.len());
        for (name, n) in tensors {
            values.push(read(name, *n)?);
        }
        let weights = values.pop().expect("weights tensor");
        let mut it = values.into_iter();
        let biases = it.next().expect("biases tensor");
        let batch_norm = match (it.next(), it.next(), it.next()) {
            (Some(scales), Some(rolling_mean), Some(rolling_variance)) => Some(BatchNorm {
                scales,
                rolling_mean,
                rolling_variance,
            }),
            _ => None,
        };
        conv_weights.push(ConvWeights {
            biases,
            batch_norm,
            weights,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Weights(format!(
            "{} trailing bytes after the last tensor",
            r.remaining()
        )));
    }
    let mut net = LoadedNetwork::new(def.clone(), conv_weights)?;
    net.header = WeightsHeader {
        major,
        minor,
        revision,
        seen,
    };
    Ok(net)
}

/// Serializes a network's tensors in the layout [`parse_weights`] reads,
/// under the network's own header.
pub fn encode_weights(net: &LoadedNetwork) -> Vec<u8> {
    let h = net.header;
    let mut out = Vec::new();
    for v in [h.major, h.minor, h.revision] {
        out.extend(v.to_le_bytes());
    }
    if WeightsHeader::wide_seen(h.major, h.minor) {
        out.extend(h.seen.to_le_bytes());
    } else {
        out.extend((h.seen as u32).to_le_bytes());
    }
    for w in net.conv.iter().flatten() {
        let mut put = |t: &[f32]| t.iter().for_each(|v| out.extend(v.to_le_bytes()));
        put(&w.biases);
        if let Some(bn) = &w.batch_norm {
            put(&bn.scales);
            put(&bn.rolling_mean);
            put(&bn.rolling_variance);
        }
        put(&w.weights);
    }
    out
}
