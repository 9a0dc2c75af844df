//! Binary portable graymap (P5).

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tasks::Image;

/// P5 bytes with maxval 255; intensities are clamped to `[0, 1]` and rounded.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn bad(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "pgm",
        offset,
        message: message.into(),
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(start, "expected a decimal header field"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad(pos, "header must end with one whitespace byte"));
    }
    pos += 1;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    let depth = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * depth;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(bad(
            pos,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let pixels = (0..width * height)
        .map(|i| {
            let v = if depth == 1 {
                payload[i] as usize
            } else {
                (payload[2 * i] as usize) << 8 | payload[2 * i + 1] as usize
            };
            (v.min(maxval)) as f64 / maxval as f64
        })
        .collect();
    Image::new(height, width, pixels)
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_pgm(image))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}
