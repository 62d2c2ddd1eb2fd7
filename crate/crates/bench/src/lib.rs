//! Fixtures shared by the benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use scrapsight_core::darknet::{self, Activation, BatchNorm, ConvDef, ConvWeights, LayerDef, NetworkDef};
use scrapsight_core::{BBox, Detection, Image, LoadedNetwork, Tensor};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut StdRng, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::new(c, h, w, data).expect("consistent shape")
}

pub fn random_image(rng: &mut StdRng, w: usize, h: usize, channels: usize) -> Image {
    let data = (0..w * h * channels).map(|_| rng.gen()).collect();
    Image::new(w, h, channels, data).expect("consistent shape")
}

pub fn random_detections(rng: &mut StdRng, n: usize, classes: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let conf = rng.gen_range(0.0..1.0);
            Detection {
                bbox: BBox::new(
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.02..0.3),
                    rng.gen_range(0.02..0.3),
                ),
                class_id: rng.gen_range(0..classes),
                confidence: conf,
                objectness: conf,
            }
        })
        .collect()
}

/// Random conv tensors for every convolution of `def`.
pub fn random_weights(rng: &mut StdRng, def: &NetworkDef) -> Vec<ConvWeights> {
    let shapes = darknet::validate_shapes(def).expect("valid network");
    def.layers
        .iter()
        .enumerate()
        .filter_map(|(i, layer)| match layer {
            LayerDef::Convolutional(c) => {
                let in_ch = if i == 0 { def.net.channels } else { shapes[i - 1].channels };
                let fan_in = (in_ch * c.size * c.size) as f32;
                let scale = (2.0 / fan_in).sqrt();
                let f = c.filters;
                let mut v = |n: usize, lo: f32, hi: f32| -> Vec<f32> {
                    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
                };
                let batch_norm = c.batch_normalize.then(|| BatchNorm {
                    scales: v(f, 0.5, 1.5),
                    rolling_mean: v(f, -0.1, 0.1),
                    rolling_variance: v(f, 0.5, 1.5),
                });
                Some(ConvWeights {
                    biases: v(f, -0.1, 0.1),
                    batch_norm,
                    weights: v(f * in_ch * c.size * c.size, -scale, scale),
                })
            }
            _ => None,
        })
        .collect()
}

/// The reference tiny-YOLOv4 network with random parameters.
pub fn random_tiny_yolo(seed: u64, input: usize) -> LoadedNetwork {
    let mut def = darknet::parse_cfg(scrapsight_core::TINY_YOLOV4_CFG).expect("reference cfg");
    def.net.width = input;
    def.net.height = input;
    let w = random_weights(&mut rng(seed), &def);
    LoadedNetwork::new(def, w).expect("consistent weights")
}

/// Direct nested-loop convolution, the baseline for the im2col kernel.
pub fn conv_direct(input: &Tensor, def: &ConvDef, w: &ConvWeights) -> Tensor {
    let (k, s, p) = (def.size, def.stride, def.padding);
    let oh = (input.height + 2 * p - k) / s + 1;
    let ow = (input.width + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(def.filters, oh, ow);
    for f in 0..def.filters {
        let (scale, shift) = match &w.batch_norm {
            Some(bn) => {
                let inv = bn.scales[f] / (bn.rolling_variance[f] + 1e-6).sqrt();
                (inv, w.biases[f] - inv * bn.rolling_mean[f])
            }
            None => (1.0, w.biases[f]),
        };
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0f32;
                for c in 0..input.channels {
                    let base = (f * input.channels + c) * k * k;
                    for ky in 0..k {
                        let y = (oy * s + ky) as isize - p as isize;
                        if y < 0 || y as usize >= input.height {
                            continue;
                        }
                        for kx in 0..k {
                            let x = (ox * s + kx) as isize - p as isize;
                            if x >= 0 && (x as usize) < input.width {
                                acc += w.weights[base + ky * k + kx] * input.at(c, y as usize, x as usize);
                            }
                        }
                    }
                }
                let v = scale * acc + shift;
                out.data[(f * oh + oy) * ow + ox] = match def.activation {
                    Activation::Leaky if v < 0.0 => 0.1 * v,
                    _ => v,
                };
            }
        }
    }
    out
}
