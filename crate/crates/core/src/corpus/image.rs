//! RGB images and the binary PPM (P6) codec.
//!
//! Pixels are stored row-major, interleaved RGB, each channel a value in
//! `[0, 1]`. Reading maps byte `b` to `b / 255`; writing maps value `v` to
//! `v * 255` rounded half-to-even, so a write/read/write cycle is
//! bit-identical.

use std::fs;
use std::path::Path;

use crate::error::{io_at, Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height * CHANNELS {
            return Err(Error::arg(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * CHANNELS,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
        })
    }

    pub fn filled(id: impl Into<String>, width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self {
            id: id.into(),
            width,
            height,
            pixels,
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Values are clamped into `[0, 1]`.
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * CHANNELS;
        for (c, v) in rgb.into_iter().enumerate() {
            self.pixels[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// Copy a `rows x cols` window starting at `(top, left)` into a fresh
    /// pixel buffer. The window must lie inside the image.
    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows * cols * CHANNELS);
        for r in top..top + rows {
            let start = (r * self.width + left) * CHANNELS;
            out.extend_from_slice(&self.pixels[start..start + cols * CHANNELS]);
        }
        out
    }
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_ppm(&bytes, id)
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(image)).map_err(io_at(path))
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(image.pixels.iter().map(|&v| quantize(v)));
    out
}

/// `v * 255` rounded half-to-even, saturated to a byte.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8], id: impl Into<String>) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format(0, "missing P6 magic"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::format(2, "expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            maxval_at as u64,
            format!("unsupported maxval {maxval}, only 255 is accepted"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(3, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(cur.pos as u64, "expected whitespace before payload"));
    }
    let payload = cur.pos + 1;
    let need = width * height * CHANNELS;
    let have = bytes.len().saturating_sub(payload);
    if have < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    let pixels = bytes[payload..payload + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok(Image {
        id: id.into(),
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p6(w: usize, h: usize, payload: &[u8]) -> Vec<u8> {
        let mut v = format!("P6\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn single_red_pixel() {
        let img = decode_ppm(&p6(1, 1, &[255, 0, 0]), "r").unwrap();
        assert_eq!(img.pixels(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn black_and_white() {
        let img = decode_ppm(&p6(2, 1, &[0, 0, 0, 255, 255, 255]), "bw").unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn truncated_payload() {
        let err = decode_ppm(&p6(4, 4, &[0; 9]), "t").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let err = decode_ppm(b"P3\n1 1\n255\n0 0 0", "x").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P6\n# made by hand\n1 1\n255\n\x10\x20\x30";
        let img = decode_ppm(bytes, "c").unwrap();
        assert_eq!(img.pixel(0, 0), [16.0 / 255.0, 32.0 / 255.0, 48.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_maxval_rejected() {
        assert!(decode_ppm(b"P6 1 1 65535\n\0\0\0\0\0\0", "m").is_err());
    }

    #[test]
    fn encode_rounds_half_to_even() {
        let img = Image::new("h", 1, 1, vec![0.5, 0.5, 0.5]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 128, 128]);
        let red = Image::new("r", 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let bytes = encode_ppm(&red);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 0]);
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(Image::new("x", 1, 1, vec![1.5, 0.0, 0.0]).is_err());
        assert!(Image::new("x", 1, 1, vec![0.0, 0.0]).is_err());
    }
}
