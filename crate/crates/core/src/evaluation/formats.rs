//! Middlebury `.flo` and KITTI 16-bit PNG flow files.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{FlowError, Result};
use crate::matcher::FlowField;

pub const FLO_TAG: f32 = 202021.25;
/// Components above this magnitude mark an unknown flow.
pub const FLO_UNKNOWN: f32 = 1e9;
const FLO_INVALID_VALUE: f32 = 1e10;

/// Encode a field in the `.flo` layout. Invalid pixels get 1e10.
pub fn encode_flo(f: &FlowField) -> Vec<u8> {
    let (w, h) = f.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let v = f.get(x, y).unwrap_or([FLO_INVALID_VALUE; 2]);
            out.extend_from_slice(&v[0].to_le_bytes());
            out.extend_from_slice(&v[1].to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(FlowError::Format("flo header truncated".into()));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).unwrap();
    let tag = f32::from_le_bytes(word(0));
    if tag != FLO_TAG {
        return Err(FlowError::Format(format!("bad flo magic {tag}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w < 1 || h < 1 || (w as i64) * (h as i64) > (1 << 28) {
        return Err(FlowError::Format(format!("implausible flo size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(FlowError::Format(format!(
            "flo payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut f = FlowField::new(w, h);
    for i in 0..w * h {
        let u = f32::from_le_bytes(word(12 + 8 * i));
        let v = f32::from_le_bytes(word(16 + 8 * i));
        let known = u.is_finite() && v.is_finite() && u.abs() <= FLO_UNKNOWN && v.abs() <= FLO_UNKNOWN;
        if known {
            f.set(i % w, i / w, [u, v], 0.0);
        }
    }
    Ok(f)
}

pub fn write_flo(path: impl AsRef<Path>, f: &FlowField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_flo(f)).map_err(|e| FlowError::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FlowError::io(path, e))?;
    decode_flo(&bytes).map_err(|e| match e {
        FlowError::Format(m) => FlowError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// KITTI channel value for one flow component.
pub fn kitti_encode(v: f32) -> u16 {
    (v * 64.0 + 32768.0).round().clamp(0.0, 65535.0) as u16
}

pub fn kitti_decode(c: u16) -> f32 {
    (c as f32 - 32768.0) / 64.0
}

pub fn write_kitti_png(path: impl AsRef<Path>, f: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = f.dims();
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| match f.get(x as usize, y as usize) {
        Some(v) => Rgb([kitti_encode(v[0]), kitti_encode(v[1]), 1]),
        None => Rgb([0, 0, 0]),
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => FlowError::io(path, io),
        other => FlowError::Format(format!("{}: {other}", path.display())),
    })
}

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FlowError::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| FlowError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let DynamicImage::ImageRgb16(img) = img else {
        return Err(FlowError::UnsupportedFormat(format!(
            "{}: KITTI flow must be a 16-bit RGB PNG, found {:?}",
            path.display(),
            img.color()
        )));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut f = FlowField::new(w, h);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[2] > 0 {
            f.set(x as usize, y as usize, [kitti_decode(p.0[0]), kitti_decode(p.0[1])], 0.0);
        }
    }
    Ok(f)
}

/// Flow file format by name or extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowFormat {
    Flo,
    Kitti,
}

impl FlowFormat {
    /// `.png` means KITTI, everything else `.flo`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "png" => FlowFormat::Kitti,
            _ => FlowFormat::Flo,
        }
    }
}

impl std::str::FromStr for FlowFormat {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flo" => Ok(FlowFormat::Flo),
            "kitti" | "png" => Ok(FlowFormat::Kitti),
            other => Err(FlowError::param(format!("unknown flow format {other:?}"))),
        }
    }
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    match FlowFormat::from_path(path) {
        FlowFormat::Flo => read_flo(path),
        FlowFormat::Kitti => read_kitti_png(path),
    }
}

pub fn write_flow(path: impl AsRef<Path>, f: &FlowField, format: FlowFormat) -> Result<()> {
    match format {
        FlowFormat::Flo => write_flo(path, f),
        FlowFormat::Kitti => write_kitti_png(path, f),
    }
}
