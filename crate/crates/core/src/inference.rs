//! CPU forward pass for the tiny-YOLOv4 layer set.
//!
//! Convolutions run as im2col followed by a row-major matrix product. Work is
//! split across output channels only, so every output value is accumulated in
//! the same order whatever the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::BBox;
use crate::darknet::{Activation, ConvDef, ConvWeights, LayerDef, LoadedNetwork, YoloDef};
use crate::error::{Error, Result};
use crate::imgops::{self, Image};

/// Batch-norm variance epsilon.
pub const BN_EPSILON: f32 = 1e-6;
/// Negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f32 = 0.1;
/// Default detection confidence threshold.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

/// Dense CHW feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Parameter(format!(
                "tensor data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Scales 8-bit intensities to `[0, 1]`.
    pub fn from_image(img: &Image) -> Self {
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let mut data = vec![0f32; ch * h * w];
        for (i, px) in img.data().chunks_exact(ch).enumerate() {
            for (c, v) in px.iter().enumerate() {
                data[c * h * w + i] = *v as f32 / 255.0;
            }
        }
        Tensor {
            channels: ch,
            height: h,
            width: w,
            data,
        }
    }
}

/// One candidate object.
///
/// `confidence = objectness × class probability`, the usual runtime score for
/// YOLO heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
    pub objectness: f64,
}

#[inline]
pub fn leaky_relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Unrolls the receptive fields of `input` into `[c·k·k][out_h·out_w]`.
fn im2col(input: &Tensor, k: usize, stride: usize, pad: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let rows = input.channels * k * k;
    let cols = out_h * out_w;
    let mut col = vec![0f32; rows * cols];
    col.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
        let c = r / (k * k);
        let ky = (r / k) % k;
        let kx = r % k;
        let src = input.plane(c);
        for oy in 0..out_h {
            let iy = (oy * stride + ky) as isize - pad as isize;
            let row = &mut dst[oy * out_w..(oy + 1) * out_w];
            if iy < 0 || iy >= input.height as isize {
                continue;
            }
            let src_row = &src[iy as usize * input.width..(iy as usize + 1) * input.width];
            for (ox, d) in row.iter_mut().enumerate() {
                let ix = (ox * stride + kx) as isize - pad as isize;
                if ix >= 0 && (ix as usize) < input.width {
                    *d = src_row[ix as usize];
                }
            }
        }
    });
    col
}

fn conv_out_dim(len: usize, pad: usize, size: usize, stride: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(size).map(|d| d / stride + 1)
}

/// Cross-correlation with optional folded batch norm, then the activation.
pub fn conv_forward(input: &Tensor, def: &ConvDef, w: &ConvWeights) -> Result<Tensor> {
    let k = def.size;
    let expected = def.filters * input.channels * k * k;
    if w.weights.len() != expected {
        return Err(Error::Shape {
            layer: 0,
            message: format!(
                "convolution expects {} weights for {} input channels, have {}",
                expected,
                input.channels,
                w.weights.len()
            ),
        });
    }
    let (out_h, out_w) = match (
        conv_out_dim(input.height, def.padding, k, def.stride),
        conv_out_dim(input.width, def.padding, k, def.stride),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "{}x{} input too small for {k}x{k} kernel with padding {}",
                    input.height, input.width, def.padding
                ),
            })
        }
    };

    let pointwise = k == 1 && def.stride == 1 && def.padding == 0;
    let owned;
    let col: &[f32] = if pointwise {
        &input.data
    } else {
        owned = im2col(input, k, def.stride, def.padding, out_h, out_w);
        &owned
    };

    let rows = input.channels * k * k;
    let plane = out_h * out_w;
    let mut out = vec![0f32; def.filters * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(f, dst)| {
        let wrow = &w.weights[f * rows..(f + 1) * rows];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let src = &col[r * plane..(r + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
        let (mul, add) = match &w.batch_norm {
            Some(bn) => {
                let mul = bn.scales[f] / (bn.rolling_variance[f] + BN_EPSILON).sqrt();
                (mul, w.biases[f] - bn.rolling_mean[f] * mul)
            }
            None => (1.0, w.biases[f]),
        };
        for d in dst.iter_mut() {
            let v = *d * mul + add;
            *d = match def.activation {
                Activation::Leaky => leaky_relu(v),
                Activation::Linear => v,
            };
        }
    });
    Ok(Tensor {
        channels: def.filters,
        height: out_h,
        width: out_w,
        data: out,
    })
}

/// Max pooling with darknet's default padding of `size − 1`.
pub fn maxpool_forward(input: &Tensor, size: usize, stride: usize) -> Tensor {
    maxpool_forward_padded(input, size, stride, size.saturating_sub(1))
}

/// Max pooling with `padding` total cells, `padding / 2` of them before the
/// data. Padded cells never win.
pub fn maxpool_forward_padded(input: &Tensor, size: usize, stride: usize, padding: usize) -> Tensor {
    let size = size.max(1);
    let stride = stride.max(1);
    let out_h = (input.height + padding).saturating_sub(size) / stride + 1;
    let out_w = (input.width + padding).saturating_sub(size) / stride + 1;
    let offset = (padding / 2) as isize;
    let plane = out_h * out_w;
    let mut out = vec![0f32; input.channels * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(c, dst)| {
        let src = input.plane(c);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..size {
                    let iy = (oy * stride + ky) as isize - offset;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..size {
                        let ix = (ox * stride + kx) as isize - offset;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        best = best.max(src[iy as usize * input.width + ix as usize]);
                    }
                }
                dst[oy * out_w + ox] = best;
            }
        }
    });
    Tensor {
        channels: input.channels,
        height: out_h,
        width: out_w,
        data: out,
    }
}

/// Channel slice `group_id` of `groups` from each input, concatenated in order.
pub fn route_forward(inputs: &[&Tensor], groups: usize, group_id: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Parameter("route needs at least one input".into()))?;
    if groups == 0 || group_id >= groups {
        return Err(Error::Parameter(format!(
            "invalid route grouping {group_id}/{groups}"
        )));
    }
    let plane = first.height * first.width;
    let mut data = Vec::new();
    let mut channels = 0;
    for t in inputs {
        if (t.height, t.width) != (first.height, first.width) {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "route inputs differ spatially: {}x{} vs {}x{}",
                    first.height, first.width, t.height, t.width
                ),
            });
        }
        if t.channels % groups != 0 {
            return Err(Error::Shape {
                layer: 0,
                message: format!("{} channels not divisible into {groups} groups", t.channels),
            });
        }
        let per = t.channels / groups;
        let start = group_id * per * plane;
        data.extend_from_slice(&t.data[start..start + per * plane]);
        channels += per;
    }
    Ok(Tensor {
        channels,
        height: first.height,
        width: first.width,
        data,
    })
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_forward(input: &Tensor, stride: usize) -> Tensor {
    let s = stride.max(1);
    let (oh, ow) = (input.height * s, input.width * s);
    let mut data = Vec::with_capacity(input.channels * oh * ow);
    for c in 0..input.channels {
        let src = input.plane(c);
        for y in 0..oh {
            let row = &src[(y / s) * input.width..(y / s + 1) * input.width];
            data.extend((0..ow).map(|x| row[x / s]));
        }
    }
    Tensor {
        channels: input.channels,
        height: oh,
        width: ow,
        data,
    }
}

/// Geometry of one YOLO output head.
#[derive(Clone, Debug, PartialEq)]
pub struct YoloHeadDef {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Masked anchors, `(w, h)` in network-input pixels.
    pub anchors: Vec<(f32, f32)>,
    pub classes: usize,
    pub input_w: usize,
    pub input_h: usize,
    pub scale_x_y: f32,
}

impl YoloHeadDef {
    pub fn from_layer(def: &YoloDef, grid_w: usize, grid_h: usize, input_w: usize, input_h: usize) -> Self {
        YoloHeadDef {
            grid_w,
            grid_h,
            anchors: def.masked_anchors(),
            classes: def.classes,
            input_w,
            input_h,
            scale_x_y: def.scale_x_y,
        }
    }

    pub fn boxes_per_cell(&self) -> usize {
        self.anchors.len()
    }
}

/// Turns raw head logits into detections whose confidence reaches
/// `conf_threshold`. One detection per (cell, anchor, class).
pub fn decode_yolo_head(feat: &Tensor, head: &YoloHeadDef, conf_threshold: f64) -> Result<Vec<Detection>> {
    let stride = 5 + head.classes;
    let expected = head.boxes_per_cell() * stride;
    if feat.channels != expected || feat.width != head.grid_w || feat.height != head.grid_h {
        return Err(Error::Shape {
            layer: 0,
            message: format!(
                "yolo head expects {expected}x{}x{}, got {}x{}x{}",
                head.grid_h, head.grid_w, feat.channels, feat.height, feat.width
            ),
        });
    }
    let sxy = head.scale_x_y;
    let shift = (sxy - 1.0) / 2.0;
    let mut out = Vec::new();
    for (a, &(aw, ah)) in head.anchors.iter().enumerate() {
        let base = a * stride;
        for j in 0..head.grid_h {
            for i in 0..head.grid_w {
                let logit = |k: usize| feat.at(base + k, j, i);
                let objectness = sigmoid(logit(4)) as f64;
                if objectness < conf_threshold {
                    continue;
                }
                let cx = (i as f32 + sigmoid(logit(0)) * sxy - shift) / head.grid_w as f32;
                let cy = (j as f32 + sigmoid(logit(1)) * sxy - shift) / head.grid_h as f32;
                let w = aw * logit(2).exp() / head.input_w as f32;
                let h = ah * logit(3).exp() / head.input_h as f32;
                if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
                    continue;
                }
                let bbox = BBox {
                    cx: (cx as f64).clamp(0.0, 1.0),
                    cy: (cy as f64).clamp(0.0, 1.0),
                    w: w as f64,
                    h: h as f64,
                };
                for class_id in 0..head.classes {
                    let confidence = objectness * sigmoid(logit(5 + class_id)) as f64;
                    if confidence >= conf_threshold {
                        out.push(Detection {
                            bbox,
                            class_id,
                            confidence,
                            objectness,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub conf_threshold: f64,
    /// Aspect-preserving resize with grey padding instead of stretching.
    pub letterbox: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            letterbox: false,
        }
    }
}

/// Maps normalized network-input coordinates back to the source image.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Placement {
    offset_x: f64,
    offset_y: f64,
    scale_x: f64,
    scale_y: f64,
}

impl Placement {
    const IDENTITY: Placement = Placement {
        offset_x: 0.0,
        offset_y: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
    };

    fn apply(&self, b: BBox) -> BBox {
        if *self == Self::IDENTITY {
            return b;
        }
        BBox {
            cx: ((b.cx - self.offset_x) / self.scale_x).clamp(0.0, 1.0),
            cy: ((b.cy - self.offset_y) / self.scale_y).clamp(0.0, 1.0),
            w: b.w / self.scale_x,
            h: b.h / self.scale_y,
        }
    }
}

fn prepare_input(img: &Image, net_w: usize, net_h: usize, net_c: usize, letterbox: bool) -> Result<(Tensor, Placement)> {
    let img = match (img.channels(), net_c) {
        (3, 1) => imgops::to_grayscale(img),
        (1, 1) | (3, 3) => img.clone(),
        (1, 3) => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            Image::rgb(img.width(), img.height(), data)?
        }
        (_, c) => {
            return Err(Error::Parameter(format!(
                "network expects {c} input channels; only 1 and 3 are supported"
            )))
        }
    };
    if !letterbox {
        let resized = imgops::resize_bilinear(&img, net_w, net_h)?;
        return Ok((Tensor::from_image(&resized), Placement::IDENTITY));
    }
    let scale = (net_w as f64 / img.width() as f64).min(net_h as f64 / img.height() as f64);
    let new_w = ((img.width() as f64 * scale).round() as usize).clamp(1, net_w);
    let new_h = ((img.height() as f64 * scale).round() as usize).clamp(1, net_h);
    let resized = imgops::resize_bilinear(&img, new_w, new_h)?;
    let (dx, dy) = ((net_w - new_w) / 2, (net_h - new_h) / 2);
    let ch = img.channels();
    let mut canvas = Image::filled(net_w, net_h, ch, 127)?;
    for y in 0..new_h {
        for x in 0..new_w {
            for c in 0..ch {
                canvas.set(x + dx, y + dy, c, resized.get(x, y, c));
            }
        }
    }
    let placement = Placement {
        offset_x: dx as f64 / net_w as f64,
        offset_y: dy as f64 / net_h as f64,
        scale_x: new_w as f64 / net_w as f64,
        scale_y: new_h as f64 / net_h as f64,
    };
    Ok((Tensor::from_image(&canvas), placement))
}

/// Index of the last layer that reads each layer's output.
fn last_uses(net: &LoadedNetwork) -> Vec<usize> {
    let n = net.def().layers.len();
    let mut last: Vec<usize> = (0..n).map(|i| (i + 1).min(n - 1)).collect();
    for (i, layer) in net.def().layers.iter().enumerate() {
        if let LayerDef::Route(r) = layer {
            for &src in &r.layers {
                last[src] = last[src].max(i);
            }
        }
    }
    last
}

/// Runs every layer on `img` and returns the decoded detections of all YOLO
/// heads, in head order. Boxes are normalized to the source image.
pub fn network_forward(net: &LoadedNetwork, img: &Image, opts: &ForwardOptions) -> Result<Vec<Detection>> {
    let def = net.def();
    let (input, placement) = prepare_input(img, def.net.width, def.net.height, def.net.channels, opts.letterbox)?;
    let last = last_uses(net);
    let mut outputs: Vec<Option<Tensor>> = vec![None; def.layers.len()];
    let mut detections = Vec::new();

    for (i, layer) in def.layers.iter().enumerate() {
        let at_layer = |e: Error| match e {
            Error::Shape { message, .. } => Error::Shape { layer: i, message },
            other => other.context(format!("layer {i}")),
        };
        let prev = if i == 0 {
            &input
        } else {
            outputs[i - 1]
                .as_ref()
                .expect("previous output retained until its last use")
        };
        let out = match layer {
            LayerDef::Convolutional(c) => {
                let w = net
                    .conv_weights(i)
                    .ok_or_else(|| Error::Weights(format!("layer {i} has no bound tensors")))?;
                conv_forward(prev, c, w).map_err(at_layer)?
            }
            LayerDef::MaxPool(m) => maxpool_forward_padded(prev, m.size, m.stride, m.padding),
            LayerDef::Route(r) => {
                let srcs: Vec<&Tensor> = r
                    .layers
                    .iter()
                    .map(|&s| outputs[s].as_ref().expect("route source retained"))
                    .collect();
                route_forward(&srcs, r.groups, r.group_id).map_err(at_layer)?
            }
            LayerDef::Upsample(u) => upsample_forward(prev, u.stride),
            LayerDef::Yolo(y) => {
                let head = YoloHeadDef::from_layer(y, prev.width, prev.height, def.net.width, def.net.height);
                let dets = decode_yolo_head(prev, &head, opts.conf_threshold).map_err(at_layer)?;
                detections.extend(dets.into_iter().map(|mut d| {
                    d.bbox = placement.apply(d.bbox);
                    d
                }));
                prev.clone()
            }
        };
        outputs[i] = Some(out);
        // Drop activations nobody reads any more.
        for j in 0..i {
            if last[j] <= i {
                outputs[j] = None;
            }
        }
    }
    Ok(detections)
}
