//! Binary portable graymaps (P5, maxval 255) carrying raster assets.
//!
//! Intensity k decodes as (k/255) rounded through f64, matching how the
//! synthetic generator quantizes pixels, so a write/read round trip is
//! bit-identical.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use boxtransfer_core::features::RasterImage;

pub fn write(path: &Path, image: &RasterImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.reserve(image.pixels().len());
    for p in image.pixels() {
        let v = (f64::from(*p).clamp(0.0, 1.0) * 255.0).round();
        bytes.push(v as u8);
    }
    fs::write(path, bytes).with_context(|| format!("writing graymap {}", path.display()))
}

pub fn read(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path).with_context(|| format!("reading graymap {}", path.display()))?;
    let mut cursor = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if cursor < bytes.len() && bytes[cursor] == b'#' {
            while cursor < bytes.len() && bytes[cursor] != b'\n' {
                cursor += 1;
            }
            continue;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            bail!("{}: truncated graymap header", path.display());
        }
        fields.push(&bytes[start..cursor]);
        if fields.len() == 4 {
            cursor += 1;
        }
    }
    if fields[0] != b"P5" {
        bail!("{}: expected binary graymap magic P5", path.display());
    }
    let parse = |b: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .with_context(|| format!("{}: bad {what} in graymap header", path.display()))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if maxval != 255 {
        bail!("{}: only maxval 255 graymaps are supported, got {maxval}", path.display());
    }
    let data = &bytes[cursor..];
    if data.len() != width * height {
        bail!(
            "{}: {} pixel bytes for a {}x{} graymap",
            path.display(),
            data.len(),
            width,
            height
        );
    }
    let pixels = data.iter().map(|k| (f64::from(*k) / 255.0) as f32).collect();
    RasterImage::new(width, height, pixels)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<f32> = (0..12).map(|k| (f64::from(k) * 20.0 / 255.0) as f32).collect();
        let image = RasterImage::new(4, 3, pixels).unwrap();
        write(&path, &image).unwrap();
        assert_eq!(read(&path).unwrap(), image);
    }

    #[test]
    fn rejects_wrong_pixel_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        std::fs::write(&path, b"P5\n4 3\n255\n1234").unwrap();
        assert!(read(&path).is_err());
    }
}
