//! 8-bit PNG reading and writing.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

fn png_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.into(),
        message: e.to_string(),
    }
}

/// Encodes `data` (`width × height × channels`, channels 1 or 3) with fixed
/// settings, so equal pixels always give equal bytes.
pub fn encode_png(path: &Path, width: u32, height: u32, channels: usize, data: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Usage(format!("cannot encode {channels}-channel image"))),
    };
    if data.len() != width as usize * height as usize * channels {
        return Err(png_error(path, "pixel buffer does not match dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer.write_image_data(data).map_err(|e| png_error(path, e))?;
        writer.finish().map_err(|e| png_error(path, e))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, width: u32, height: u32, channels: usize, data: &[u8]) -> Result<()> {
    let bytes = encode_png(path, width, height, channels, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decoded 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Reads any PNG as 8-bit gray or RGB; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| png_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_error(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let n = w as usize * h as usize;
    let (channels, data) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Rgba => (3, buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        png::ColorType::Indexed => return Err(png_error(path, "palette was not expanded")),
    };
    if data.len() != n * channels {
        return Err(png_error(path, "unexpected decoded size"));
    }
    Ok(Image8 {
        width: w,
        height: h,
        channels,
        data,
    })
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| to_u8(v)).collect()
}
