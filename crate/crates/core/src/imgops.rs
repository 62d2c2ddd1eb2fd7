//! 8-bit rasters and the intensity transforms used for dataset augmentation.
//!
//! Every transform produces intensities with round-half-away-from-zero
//! followed by a clamp to `[0, 255]`. Filters use replicate-edge padding.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::Detection;

/// Owned raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    fn with_data(&self, data: Vec<u8>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Decodes PNG, JPEG or PNM. Grayscale sources stay single-channel,
    /// everything else is converted to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|e| codec_error(path, e))?;
        Ok(Image::from_dynamic(dynamic))
    }

    /// Encodes by file extension (`.png`, `.jpg`, `.pgm`, `.ppm`, ...).
    /// PNM extensions always produce binary P5 (gray) or P6 (RGB).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;

        let path = path.as_ref();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if matches!(ext.as_str(), "pgm" | "ppm" | "pnm") {
            let (subtype, color) = if self.channels == 1 {
                (PnmSubtype::Graymap(SampleEncoding::Binary), image::ExtendedColorType::L8)
            } else {
                (PnmSubtype::Pixmap(SampleEncoding::Binary), image::ExtendedColorType::Rgb8)
            };
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut writer = std::io::BufWriter::new(file);
            PnmEncoder::new(&mut writer)
                .with_subtype(subtype)
                .write_image(&self.data, self.width as u32, self.height as u32, color)
                .map_err(|e| codec_error(path, e))?;
            return std::io::Write::flush(&mut writer).map_err(|e| Error::io(path, e));
        }
        self.to_dynamic()
            .save(path)
            .map_err(|e| codec_error(path, e))
    }

    pub fn from_dynamic(dynamic: image::DynamicImage) -> Image {
        use image::DynamicImage as D;
        match dynamic {
            D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageLuma16(_) | D::ImageLumaA16(_) => {
                let buf = dynamic.into_luma8();
                let (w, h) = buf.dimensions();
                Image {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: buf.into_raw(),
                }
            }
            other => {
                let buf = other.into_rgb8();
                let (w, h) = buf.dimensions();
                Image {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: buf.into_raw(),
                }
            }
        }
    }

    pub fn to_dynamic(&self) -> image::DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, self.data.clone()).expect("validated buffer"),
            )
        } else {
            image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, self.data.clone()).expect("validated buffer"),
            )
        }
    }
}

fn codec_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Codec {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

#[inline]
fn round_u8(v: f64) -> u8 {
    // f64::round rounds half away from zero.
    v.round().clamp(0.0, 255.0) as u8
}

/// Square convolution kernel with an odd side length.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::Parameter(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::Parameter(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Kernel { size, weights })
    }

    /// All weights equal to `1/k²`.
    pub fn averaging(k: usize) -> Result<Self> {
        let n = k * k;
        Self::new(k, vec![1.0 / n as f64; n])
    }

    /// 2-D Gaussian with radius `ceil(3σ)`, normalized to sum 1.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let w1 = gaussian_weights(sigma)?;
        let size = w1.len();
        let mut weights = Vec::with_capacity(size * size);
        for wy in &w1 {
            for wx in &w1 {
                weights.push(wy * wx);
            }
        }
        Self::new(size, weights)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Normalized 1-D Gaussian taps for radius `ceil(3σ)`.
pub fn gaussian_weights(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    Ok(w)
}

/// ITU-R 601 luma. Grayscale input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| round_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Maps each intensity to `round(255 · cdf(v))`.
///
/// Intended for grayscale input; 3-channel images are equalized per channel.
pub fn histogram_equalize(img: &Image) -> Image {
    let ch = img.channels;
    let pixels = (img.width * img.height) as f64;
    let mut luts = Vec::with_capacity(ch);
    for c in 0..ch {
        let mut hist = [0u64; 256];
        for p in img.data.iter().skip(c).step_by(ch) {
            hist[*p as usize] += 1;
        }
        let mut lut = [0u8; 256];
        let mut cum = 0u64;
        for (v, count) in hist.iter().enumerate() {
            cum += count;
            lut[v] = round_u8(255.0 * cum as f64 / pixels);
        }
        luts.push(lut);
    }
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| luts[i % ch][v as usize])
        .collect();
    img.with_data(data)
}

/// `out = c · 255 · (in / 255)^gamma`, per channel.
pub fn power_law(img: &Image, gamma: f64, c: f64) -> Result<Image> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!("c must be positive, got {c}")));
    }
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = round_u8(c * 255.0 * (v as f64 / 255.0).powf(gamma));
    }
    Ok(img.with_data(img.data.iter().map(|&v| lut[v as usize]).collect()))
}

/// `255 − in`, per channel.
pub fn negative(img: &Image) -> Image {
    img.with_data(img.data.iter().map(|&v| 255 - v).collect())
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Mean over the `k×k` neighbourhood, computed exactly in integers.
pub fn box_average(img: &Image, k: usize) -> Result<Image> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "box kernel size must be odd and at least 3, got {k}"
        )));
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let r = (k / 2) as isize;

    // Horizontal window sums.
    let mut rows = vec![0u32; w * h * ch];
    rows.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0u32;
                for dx in -r..=r {
                    s += img.get(clamp_index(x as isize + dx, w), y, c) as u32;
                }
                row[x * ch + c] = s;
            }
        }
    });

    let n = (k * k) as u32;
    let mut out = vec![0u8; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            let mut s = 0u32;
            for dy in -r..=r {
                s += rows[clamp_index(y as isize + dy, h) * w * ch + i];
            }
            // round(s / n), half up; s is non-negative.
            *o = ((2 * s + n) / (2 * n)) as u8;
        }
    });
    Ok(img.with_data(out))
}

/// Separable Gaussian filter, unrounded, as `f64` per sample.
fn gaussian_plane(img: &Image, sigma: f64) -> Result<Vec<f64>> {
    let taps = gaussian_weights(sigma)?;
    let (w, h, ch) = (img.width, img.height, img.channels);
    let r = (taps.len() / 2) as isize;

    let mut tmp = vec![0f64; w * h * ch];
    tmp.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let sx = clamp_index(x as isize + t as isize - r, w);
                    s += wt * img.get(sx, y, c) as f64;
                }
                row[x * ch + c] = s;
            }
        }
    });

    let mut out = vec![0f64; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, wt) in taps.iter().enumerate() {
                let sy = clamp_index(y as isize + t as isize - r, h);
                s += wt * tmp[sy * w * ch + i];
            }
            *o = s;
        }
    });
    Ok(out)
}

pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let plane = gaussian_plane(img, sigma)?;
    Ok(img.with_data(plane.into_iter().map(round_u8).collect()))
}

/// Unsharp mask: `in + alpha · (in − blur(in, sigma))`.
pub fn sharpen(img: &Image, alpha: f64, sigma: f64) -> Result<Image> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    let blurred = gaussian_plane(img, sigma)?;
    let data = img
        .data
        .iter()
        .zip(&blurred)
        .map(|(&v, &b)| {
            let v = v as f64;
            round_u8(v + alpha * (v - b))
        })
        .collect();
    Ok(img.with_data(data))
}

/// Bilinear resampling with half-pixel centres.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Parameter(format!(
            "target dimensions must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels;
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(out_w, img.width);
    let ys = axis(out_h, img.height);

    let mut data = vec![0u8; out_w * out_h * ch];
    data.par_chunks_mut(out_w * ch)
        .zip(ys.par_iter())
        .for_each(|(row, &(y0, y1, fy))| {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..ch {
                    let top = img.get(x0, y0, c) as f64 * (1.0 - fx) + img.get(x1, y0, c) as f64 * fx;
                    let bot = img.get(x0, y1, c) as f64 * (1.0 - fx) + img.get(x1, y1, c) as f64 * fx;
                    row[x * ch + c] = round_u8(top * (1.0 - fy) + bot * fy);
                }
            }
        });
    Image::new(out_w, out_h, ch, data)
}

/// Outline thickness used by [`draw_detections`].
pub const OUTLINE_WIDTH: usize = 2;

/// Border colour for a class id.
pub fn class_color(class_id: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
    ];
    PALETTE[class_id % PALETTE.len()]
}

/// Inclusive pixel rectangle `(left, top, right, bottom)` covered by a
/// normalized box, clipped to the image. `None` when the box misses the image.
pub fn pixel_rect(
    det: &Detection,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let b = &det.bbox;
    let span = |c: f64, s: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((c - s / 2.0) * n as f64).round().max(0.0);
        let hi = ((c + s / 2.0) * n as f64).round().min(n as f64) - 1.0;
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            None
        } else {
            Some((lo as usize, hi as usize))
        }
    };
    let (l, r) = span(b.cx, b.w, width)?;
    let (t, btm) = span(b.cy, b.h, height)?;
    Some((l, t, r, btm))
}

/// Draws a two-pixel class-coloured outline for each detection on a copy of
/// `img`. Pixels outside the outlines are left untouched.
pub fn draw_detections(img: &Image, dets: &[Detection], names: &[String]) -> Result<Image> {
    let mut out = img.clone();
    for det in dets {
        if det.class_id >= names.len() {
            return Err(Error::UnknownClass(det.class_id));
        }
        let (l, t, r, b) = pixel_rect(det, img.width, img.height).ok_or_else(|| {
            Error::Parameter(format!(
                "detection box {:?} does not intersect the {}x{} image",
                det.bbox, img.width, img.height
            ))
        })?;
        let rgb = class_color(det.class_id);
        let gray = round_u8(0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64);
        for y in t..=b {
            for x in l..=r {
                let on_border = x < l + OUTLINE_WIDTH
                    || x + OUTLINE_WIDTH > r
                    || y < t + OUTLINE_WIDTH
                    || y + OUTLINE_WIDTH > b;
                if !on_border {
                    continue;
                }
                if out.channels == 1 {
                    out.set(x, y, 0, gray);
                } else {
                    for (c, v) in rgb.iter().enumerate() {
                        out.set(x, y, c, *v);
                    }
                }
            }
        }
    }
    Ok(out)
}
