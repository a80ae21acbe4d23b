//! Image loading, CIELab conversion, border-replicating sampling and the
//! low-pass scale space used by the matcher.
//!
//! All images here are planar `f32` buffers. Sampling never fails for
//! out-of-image positions: coordinates are clamped to the image, so reads
//! outside the frame take the value of the closest visible pixel.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, RgbImage};
use rayon::prelude::*;

use crate::error::{FlowError, Result};

/// Linear blend that returns `a` exactly when `a == b`.
#[inline(always)]
pub fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Planar multi-channel `f32` image. Plane `c` occupies
/// `data[c * width * height .. (c + 1) * width * height]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Planar {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(width >= 1 && height >= 1 && channels >= 1);
        Planar {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(FlowError::param("planar image needs non-zero width, height and channels"));
        }
        if data.len() != width * height * channels {
            return Err(FlowError::param(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Planar {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Sample at an integer position, replicating the border.
    #[inline]
    pub fn get_clamped(&self, c: usize, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(c, x, y)
    }

    /// Bilinear sample of one channel. The position is clamped to the image
    /// before blending, so any finite position is valid.
    #[inline]
    pub fn sample_clamped(&self, c: usize, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p = self.plane(c);
        let w = self.width;
        let top = lerp(p[y0 * w + x0], p[y0 * w + x1], fx);
        let bot = lerp(p[y1 * w + x0], p[y1 * w + x1], fx);
        lerp(top, bot, fy)
    }
}

/// Planar CIELab image (planes L, a, b).
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    planes: Planar,
}

impl LabImage {
    pub fn new(width: usize, height: usize) -> Self {
        LabImage {
            planes: Planar::new(width, height, 3),
        }
    }

    pub fn from_planar(planes: Planar) -> Result<Self> {
        if planes.channels() != 3 {
            return Err(FlowError::param(format!(
                "a Lab image needs 3 planes, got {}",
                planes.channels()
            )));
        }
        Ok(LabImage { planes })
    }

    /// Build an image from a per-pixel generator returning `[L, a, b]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = LabImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                for (c, value) in v.into_iter().enumerate() {
                    img.planes.set(c, x, y, value);
                }
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.planes.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.planes.height()
    }

    #[inline]
    pub fn planes(&self) -> &Planar {
        &self.planes
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        self.planes.plane(c)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.planes.get(c, x, y)
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.planes.set(c, x, y, v)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.get(0, x, y), self.get(1, x, y), self.get(2, x, y)]
    }

    /// Bilinear sample with replicative border handling.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> Result<[f32; 3]> {
        if !x.is_finite() || !y.is_finite() {
            return Err(FlowError::NonFinitePosition(x, y));
        }
        Ok([
            self.planes.sample_clamped(0, x, y),
            self.planes.sample_clamped(1, x, y),
            self.planes.sample_clamped(2, x, y),
        ])
    }

    /// Copy out a rectangular region, clamped to the image.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<LabImage> {
        if x0 + width > self.width() || y0 + height > self.height() || width == 0 || height == 0 {
            return Err(FlowError::param(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width(),
                self.height()
            )));
        }
        Ok(LabImage::from_fn(width, height, |x, y| self.pixel(x0 + x, y0 + y)))
    }
}

/// Load an 8-bit PNG or binary PPM/PGM image as RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FlowError::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| FlowError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(FlowError::UnsupportedFormat(format!(
            "{}: {format:?} (expected PNG or PPM)",
            path.display()
        )));
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| FlowError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => Ok(img.to_rgb8()),
        other => Err(FlowError::UnsupportedFormat(format!(
            "{}: {:?} is not an 8-bit image",
            path.display(),
            other.color()
        ))),
    }
}

fn save_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => FlowError::io(path, io),
        other => FlowError::Format(format!("{}: {other}", path.display())),
    })
}

/// Write an 8-bit RGB PNG.
pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    save_png(path.as_ref(), img)
}

/// Write a binary mask as an 8-bit gray PNG, 255 where set.
pub fn save_mask(path: impl AsRef<Path>, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != width * height {
        return Err(FlowError::param("mask length does not match its dimensions"));
    }
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    save_png(path.as_ref(), &img)
}

/// Read a mask image; a pixel is set when any channel is nonzero.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = load_rgb(path)?;
    let mask = img.pixels().map(|p| p.0.iter().any(|&c| c > 0)).collect();
    Ok((img.width() as usize, img.height() as usize, mask))
}

/// Load an image file straight into CIELab.
pub fn load_lab(path: impl AsRef<Path>) -> Result<LabImage> {
    Ok(rgb_to_lab(&load_rgb(path)?))
}

// sRGB (D65) to XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const D65_WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_to_linear(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Convert one sRGB triple to CIELab under the D65 white point.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(xyz / D65_WHITE[i]);
    }
    let l = (116.0 * f[1] - 16.0).clamp(0.0, 100.0);
    let a = 500.0 * (f[0] - f[1]);
    let b = 200.0 * (f[1] - f[2]);
    [l as f32, a as f32, b as f32]
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabImage::from_fn(w, h, |x, y| srgb_pixel_to_lab(img.get_pixel(x as u32, y as u32).0))
}

// Inverse of RGB_TO_XYZ.
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn linear_to_srgb(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let v = if c <= 0.003_130_8 { 12.92 * c } else { 1.055 * c.powf(1.0 / 2.4) - 0.055 };
    (v * 255.0).round() as u8
}

/// CIELab to sRGB, clipping out-of-gamut colors.
pub fn lab_pixel_to_srgb(lab: [f32; 3]) -> [u8; 3] {
    let fy = (lab[0] as f64 + 16.0) / 116.0;
    let f = [fy + lab[1] as f64 / 500.0, fy, fy - lab[2] as f64 / 200.0];
    let xyz: [f64; 3] = std::array::from_fn(|i| lab_f_inv(f[i]) * D65_WHITE[i]);
    std::array::from_fn(|i| linear_to_srgb(XYZ_TO_RGB[i][0] * xyz[0] + XYZ_TO_RGB[i][1] * xyz[1] + XYZ_TO_RGB[i][2] * xyz[2]))
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Rgb(lab_pixel_to_srgb(img.pixel(x as usize, y as usize)))
    })
}

/// Upsampling kernel used when returning a downsampled image to full size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsampler {
    #[default]
    Lanczos3,
    Bilinear,
}

/// Area-average downsample by an integer factor. Each output pixel is the
/// mean over its `n x n` source block; partial blocks at the right/bottom
/// edge average only the covered pixels.
pub fn area_downsample(src: &Planar, n: usize) -> Result<Planar> {
    if n < 1 {
        return Err(FlowError::param("downsampling factor must be >= 1"));
    }
    if n == 1 {
        return Ok(src.clone());
    }
    let (w, h) = (src.width(), src.height());
    let sw = w.div_ceil(n);
    let sh = h.div_ceil(n);
    let mut out = Planar::new(sw, sh, src.channels());
    for c in 0..src.channels() {
        let plane = src.plane(c);
        let dst = out.plane_mut(c);
        for sy in 0..sh {
            let y0 = sy * n;
            let y1 = (y0 + n).min(h);
            for sx in 0..sw {
                let x0 = sx * n;
                let x1 = (x0 + n).min(w);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    for &v in &plane[y * w + x0..y * w + x1] {
                        sum += v as f64;
                    }
                }
                dst[sy * sw + sx] = (sum / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            }
        }
    }
    Ok(out)
}

fn lanczos3(t: f64) -> f64 {
    const A: f64 = 3.0;
    if t == 0.0 {
        1.0
    } else if t.abs() >= A {
        0.0
    } else {
        let pt = std::f64::consts::PI * t;
        A * pt.sin() * (pt / A).sin() / (pt * pt)
    }
}

/// Interpolation taps for every output coordinate along one axis.
fn axis_taps(out_len: usize, src_len: usize, n: usize, kernel: Upsampler) -> Vec<Vec<(usize, f32)>> {
    let offset = (n as f64 - 1.0) / 2.0;
    let last = src_len as isize - 1;
    (0..out_len)
        .map(|x| {
            let u = (x as f64 - offset) / n as f64;
            let base = u.floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(6);
            match kernel {
                Upsampler::Lanczos3 => {
                    for j in base - 2..=base + 3 {
                        let w = lanczos3(u - j as f64);
                        if w != 0.0 {
                            taps.push((j.clamp(0, last) as usize, w));
                        }
                    }
                }
                Upsampler::Bilinear => {
                    let f = u - base as f64;
                    taps.push((base.clamp(0, last) as usize, 1.0 - f));
                    taps.push(((base + 1).clamp(0, last) as usize, f));
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.into_iter().map(|(i, w)| (i, (w / total) as f32)).collect()
        })
        .collect()
}

/// Upsample a downsampled image back to `width x height`, treating small
/// pixel `i` as centered at full-resolution position `i*n + (n-1)/2`.
pub fn upsample(src: &Planar, n: usize, width: usize, height: usize, kernel: Upsampler) -> Planar {
    let (sw, sh) = (src.width(), src.height());
    let xt = axis_taps(width, sw, n, kernel);
    let yt = axis_taps(height, sh, n, kernel);
    let mut out = Planar::new(width, height, src.channels());
    let mut rows = vec![0.0f32; width * sh];
    for c in 0..src.channels() {
        let plane = src.plane(c);
        for sy in 0..sh {
            let srow = &plane[sy * sw..(sy + 1) * sw];
            let drow = &mut rows[sy * width..(sy + 1) * width];
            for (d, taps) in drow.iter_mut().zip(&xt) {
                *d = taps.iter().map(|&(i, w)| srow[i] * w).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, taps) in yt.iter().enumerate() {
            let drow = &mut dst[y * width..(y + 1) * width];
            for &(sy, w) in taps {
                let srow = &rows[sy * width..(sy + 1) * width];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

/// Low-pass filter by down- then upsampling with factor `n`. `n == 1`
/// returns an exact copy.
pub fn lowpass_planar(src: &Planar, n: usize, kernel: Upsampler) -> Result<Planar> {
    if n < 1 {
        return Err(FlowError::param("low-pass factor must be >= 1"));
    }
    if n == 1 {
        return Ok(src.clone());
    }
    let small = area_downsample(src, n)?;
    Ok(upsample(&small, n, src.width(), src.height(), kernel))
}

pub fn lowpass(img: &LabImage, n: usize, kernel: Upsampler) -> Result<LabImage> {
    LabImage::from_planar(lowpass_planar(&img.planes, n, kernel)?)
}

/// Family of full-resolution low-pass images, one per scale factor.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    levels: BTreeMap<usize, LabImage>,
}

impl ScaleSpace {
    pub fn base(&self) -> &LabImage {
        &self.levels[&1]
    }

    pub fn level(&self, n: usize) -> Result<&LabImage> {
        self.levels.get(&n).ok_or(FlowError::MissingScale(n))
    }

    pub fn scales(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.keys().copied()
    }

    pub fn contains(&self, n: usize) -> bool {
        self.levels.contains_key(&n)
    }

    pub fn width(&self) -> usize {
        self.base().width()
    }

    pub fn height(&self) -> usize {
        self.base().height()
    }
}

/// Build the scale space for the given factors. Duplicates are collapsed;
/// the list must contain 1.
pub fn build_scale_space(img: &LabImage, scales: &[usize]) -> Result<ScaleSpace> {
    if scales.is_empty() {
        return Err(FlowError::param("scale list is empty"));
    }
    if !scales.contains(&1) {
        return Err(FlowError::param("scale list must contain 1"));
    }
    if scales.contains(&0) {
        return Err(FlowError::param("scale factors must be >= 1"));
    }
    let mut unique: Vec<usize> = scales.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let levels = unique
        .par_iter()
        .map(|&n| lowpass(img, n, Upsampler::Lanczos3).map(|l| (n, l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleSpace {
        levels: levels.into_iter().collect(),
    })
}

/// Dense per-pixel feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    planes: Planar,
}

impl FeatureMap {
    pub fn from_planar(planes: Planar) -> Self {
        FeatureMap { planes }
    }

    pub fn width(&self) -> usize {
        self.planes.width()
    }

    pub fn height(&self) -> usize {
        self.planes.height()
    }

    pub fn dim(&self) -> usize {
        self.planes.channels()
    }

    pub fn planes(&self) -> &Planar {
        &self.planes
    }

    pub fn vector(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.dim()).map(|c| self.planes.get(c, x, y)).collect()
    }
}

/// Maps a pixel neighborhood to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, img: &LabImage, x: usize, y: usize, out: &mut [f32]);
}

/// Where feature extraction happens relative to low-pass filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Extract at full resolution, then low-pass the feature map.
    F1,
    /// Downsample the image, extract, then Lanczos-upsample the features.
    F2,
    /// Like F2 with bilinear upsampling; at unit scale only every 2x2
    /// region gets a feature vector, the rest is interpolated.
    F2F,
}

impl FromStr for FeatureMode {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F1" => Ok(FeatureMode::F1),
            "F2" => Ok(FeatureMode::F2),
            "F2F" => Ok(FeatureMode::F2F),
            other => Err(FlowError::param(format!("unknown feature mode {other:?}"))),
        }
    }
}

fn extract_dense(img: &LabImage, extractor: &dyn FeatureExtractor) -> Planar {
    let dim = extractor.dim();
    let (w, h) = (img.width(), img.height());
    let mut out = Planar::new(w, h, dim);
    let mut buf = vec![0.0f32; dim];
    for y in 0..h {
        for x in 0..w {
            extractor.extract(img, x, y, &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                out.set(c, x, y, v);
            }
        }
    }
    out
}

/// Features on the even (x, y) grid only; skipped pixels are linearly
/// interpolated from their grid neighbors.
fn extract_strided2(img: &LabImage, extractor: &dyn FeatureExtractor) -> Planar {
    let dim = extractor.dim();
    let (w, h) = (img.width(), img.height());
    let (gw, gh) = (w.div_ceil(2), h.div_ceil(2));
    let mut grid = Planar::new(gw, gh, dim);
    let mut buf = vec![0.0f32; dim];
    for gy in 0..gh {
        for gx in 0..gw {
            extractor.extract(img, gx * 2, gy * 2, &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                grid.set(c, gx, gy, v);
            }
        }
    }
    let mut out = Planar::new(w, h, dim);
    for c in 0..dim {
        for y in 0..h {
            for x in 0..w {
                let v = grid.sample_clamped(c, x as f32 / 2.0, y as f32 / 2.0);
                out.set(c, x, y, v);
            }
        }
    }
    out
}

/// Compute a feature map for scale `n` using one of the F1/F2/F2F orderings.
pub fn feature_pipeline(
    img: &LabImage,
    n: usize,
    extractor: &dyn FeatureExtractor,
    mode: FeatureMode,
) -> Result<FeatureMap> {
    if n < 1 {
        return Err(FlowError::param("feature scale must be >= 1"));
    }
    if extractor.dim() == 0 {
        return Err(FlowError::param("feature dimension must be >= 1"));
    }
    let (w, h) = (img.width(), img.height());
    let planes = match (mode, n) {
        (FeatureMode::F1 | FeatureMode::F2, 1) => extract_dense(img, extractor),
        (FeatureMode::F2F, 1) => extract_strided2(img, extractor),
        (FeatureMode::F1, _) => lowpass_planar(&extract_dense(img, extractor), n, Upsampler::Lanczos3)?,
        (FeatureMode::F2 | FeatureMode::F2F, _) => {
            let small = LabImage::from_planar(area_downsample(img.planes(), n)?)?;
            let feats = extract_dense(&small, extractor);
            let kernel = if mode == FeatureMode::F2 {
                Upsampler::Lanczos3
            } else {
                Upsampler::Bilinear
            };
            upsample(&feats, n, w, h, kernel)
        }
    };
    Ok(FeatureMap { planes })
}
