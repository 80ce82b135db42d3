//! File helpers shared by checkpoints, datasets and reports.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x100000001b3))
}

/// Quantises `[0,1]` HWC RGB to 8 bits and writes a PNG.
pub fn save_png(path: &Path, pixels: &[f32], height: usize, width: usize) -> Result<()> {
    if pixels.len() != height * width * 3 {
        return Err(Error::invalid(format!("cannot write {} values as a {height}x{width} RGB image", pixels.len())));
    }
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let bytes: Vec<u8> = pixels.iter().map(|v| quantize(*v)).collect();
    image::save_buffer(path, &bytes, width as u32, height as u32, image::ColorType::Rgb8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an RGB PNG as `[0,1]` HWC values, returning `(pixels, height, width)`.
pub fn load_png(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Ok((pixels, h as usize, w as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.png");
        let pixels: Vec<f32> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as f32 / 255.0).collect();
        save_png(&path, &pixels, 2, 3).unwrap();
        let (back, h, w) = load_png(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, pixels);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
