//! Binary PPM (P6) images and `path<TAB>label` manifests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Maps an 8-bit channel value to `[0, 1]`.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
pub fn unit_to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `(1, 3, h, w)` tensor as P6 bytes.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::invalid("save_image", format!("expected a (1, 3, h, w) image, got {s:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(3 * s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(unit_to_byte(image.get(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("invalid PPM {what}")))
}

/// Decodes P6 bytes into a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Format("unsupported image format (expected binary PPM `P6`)".into()));
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let max = header_number(bytes, &mut pos, "maximum value")?;
    if max != 255 {
        return Err(Error::Format(format!("unsupported PPM maximum value {max}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PPM has zero size".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() {
        return Err(Error::Format("truncated PPM header".into()));
    }
    let raster = &bytes[pos + 1..];
    let needed = 3 * w * h;
    if raster.len() < needed {
        return Err(Error::Format(format!("truncated PPM raster: {} of {needed} bytes", raster.len())));
    }
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                t.set(0, c, y, x, byte_to_unit(raster[3 * (y * w + x) + c]));
            }
        }
    }
    Ok(t)
}

pub fn save_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Writes `path<TAB>label` lines; paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!("{}\t{}\n", e.path.display(), e.label));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (p, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected `path<TAB>label`", path.display(), i + 1)))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: invalid label `{label}`", path.display(), i + 1)))?;
        entries.push(ManifestEntry {
            path: base.join(p),
            label,
        });
    }
    Ok(entries)
}
