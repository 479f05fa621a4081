//! Binary PGM (P5) and PPM (P6) images, 8- or 16-bit.

use std::path::Path;

use crate::error::{DataError, Error, Result};

/// Planar pixels in `[0,1]`, `[channels][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse(&bytes, &path.display().to_string()).map_err(Into::into)
}

fn parse(bytes: &[u8], file: &str) -> std::result::Result<Image, DataError> {
    let invalid = |offset: usize, reason: &str| DataError::InvalidHeader {
        file: file.into(),
        offset: offset as u64,
        reason: reason.into(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(invalid(0, "expected P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(invalid(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| invalid(start, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(invalid(pos, "zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(invalid(pos, "maxval must be in 1..=65535"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(invalid(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let depth = if maxval > 255 { 2 } else { 1 };
    let need = width * height * channels * depth;
    let have = bytes.len() - pos;
    if have < need {
        return Err(DataError::Truncated {
            file: file.into(),
            offset: bytes.len() as u64,
            needed: (need - have) as u64,
        });
    }
    let raw = &bytes[pos..pos + need];
    let sample = |i: usize| match depth {
        1 => f32::from(raw[i]),
        _ => f32::from(u16::from_be_bytes([raw[2 * i], raw[2 * i + 1]])),
    };
    let scale = maxval as f32;
    let mut pixels = vec![0.0; width * height * channels];
    for i in 0..width * height {
        for c in 0..channels {
            pixels[c * width * height + i] = (sample(i * channels + c) / scale).min(1.0);
        }
    }
    Ok(Image { width, height, channels, pixels })
}

/// Writes planar `[0,1]` pixels as 8-bit P5 (1 channel) or P6 (3 channels).
pub fn write_pnm(path: &Path, image: &Image) -> Result<()> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(DataError::Unsupported(format!("{c}-channel image")).into()),
    };
    let plane = image.width * image.height;
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    for i in 0..plane {
        for c in 0..image.channels {
            let v = image.pixels[c * plane + i].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
