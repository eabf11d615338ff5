//! Raster files: 8-bit PNG and the `.rten` float container.
//!
//! A `.rten` file is one line of JSON, `{"dims":[H,W,C],"dtype":"f32","channels":[...]}`,
//! a `\n`, then `H·W·C` little-endian `f32` values in row-major `H, W, C` order.

use std::fs;
use std::path::Path;

use ldguid_core::image::{ChangeMask, ImagePlane};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RtenHeader {
    dims: [usize; 3],
    dtype: String,
    #[serde(default)]
    channels: Vec<String>,
}

pub fn write_rten(path: &Path, image: &ImagePlane) -> Result<()> {
    let (h, w, c) = image.dims();
    let header = RtenHeader { dims: [h, w, c], dtype: "f32".into(), channels: image.channel_names().to_vec() };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(4 * h * w * c);
    for v in image.to_hwc() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_rten(path: &Path) -> Result<ImagePlane> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::malformed(path, "no header line"))?;
    let header: RtenHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::malformed(path, e))?;
    if header.dtype != "f32" {
        return Err(Error::malformed(path, format!("dtype {} is not f32", header.dtype)));
    }
    let [h, w, c] = header.dims;
    let payload = &bytes[nl + 1..];
    if payload.len() != 4 * h * w * c {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("header {h}×{w}×{c} needs {} payload bytes, found {}", 4 * h * w * c, payload.len()),
        });
    }
    let hwc: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    ImagePlane::from_hwc(h, w, c, &hwc, header.channels).map_err(|e| Error::malformed(path, e))
}

/// Reads a 1- or 3-channel 8-bit PNG scaled to `[0, 1]`.
pub fn read_png(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|e| Error::malformed(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, raw) = match img {
        image::DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        image::DynamicImage::ImageRgb8(rgb) => (3, rgb.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    let hwc: Vec<f32> = raw.iter().map(|&v| v as f32 / 255.0).collect();
    ImagePlane::from_hwc(h, w, c, &hwc, Vec::new()).map_err(|e| Error::malformed(path, e))
}

pub fn read_image(path: &Path) -> Result<ImagePlane> {
    match extension(path).as_deref() {
        Some("rten") => read_rten(path),
        Some("png") => read_png(path),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

/// Reads a mask; any nonzero pixel (PNG) or value above one half (`.rten`) is change.
pub fn read_mask(path: &Path) -> Result<ChangeMask> {
    let (h, w, bits) = match extension(path).as_deref() {
        Some("png") => {
            let img = image::open(path).map_err(|e| Error::malformed(path, e))?.to_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            (h, w, img.into_raw().into_iter().map(|v| u8::from(v > 0)).collect::<Vec<_>>())
        }
        Some("rten") => {
            let plane = read_rten(path)?;
            let (h, w, c) = plane.dims();
            if c != 1 {
                return Err(Error::ShapeMismatch { path: path.to_path_buf(), detail: format!("mask has {c} channels") });
            }
            (h, w, plane.data().iter().map(|&v| u8::from(v > 0.5)).collect())
        }
        _ => return Err(Error::UnsupportedFormat(path.to_path_buf())),
    };
    ChangeMask::new(h, w, bits).map_err(|e| Error::malformed(path, e))
}

/// Writes a mask as an 8-bit grayscale PNG with change at 255.
pub fn write_mask_png(path: &Path, mask: &ChangeMask) -> Result<()> {
    let data = mask.data().iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("mask buffer size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::malformed(path, e))
}

pub fn write_rgb_png(path: &Path, height: usize, width: usize, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::malformed(path, "RGB buffer does not match the image size"))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::malformed(path, e))
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rten_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.rten");
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        let img = ImagePlane::new(2, 3, 4, data, ["B02", "B03", "B08", "B12"].map(String::from).to_vec()).unwrap();
        write_rten(&p, &img).unwrap();
        assert_eq!(read_rten(&p).unwrap(), img);
        let text = fs::read(&p).unwrap();
        assert!(text.starts_with(br#"{"dims":[2,3,4],"dtype":"f32","channels":["B02","B03","B08","B12"]}"#));
    }

    #[test]
    fn truncated_rten_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.rten");
        fs::write(&p, b"{\"dims\":[2,2,1],\"dtype\":\"f32\"}\n\0\0\0\0").unwrap();
        let e = read_rten(&p).unwrap_err();
        assert!(matches!(e, Error::ShapeMismatch { .. }));
        assert!(e.to_string().contains("bad.rten"));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = ChangeMask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap();
        write_mask_png(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn unknown_extension_is_unsupported() {
        assert!(matches!(read_image(Path::new("a/b.tif")), Err(Error::UnsupportedFormat(_))));
    }
}
