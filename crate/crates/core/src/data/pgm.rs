//! Binary 16-bit PGM (P5, maxval 65535, big-endian samples).

use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};
use crate::fsio;

const MAXVAL: f64 = 65535.0;

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    out.reserve(img.pixels().len() * 2);
    for &p in img.pixels() {
        let q = (p * MAXVAL).round().clamp(0.0, MAXVAL) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fsio::write(path, encode_pgm(img))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fsio::read(path)?;
    decode_pgm(&bytes).map_err(|(field, detail)| Error::format(path, field, detail))
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, (&'static str, String)> {
    // header: magic, width, height, maxval, each separated by whitespace;
    // comments are not produced by the writer and not accepted.
    let mut pos = 0;
    let mut token = |name: &'static str| -> std::result::Result<String, (&'static str, String)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err((name, "truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic")?;
    if magic != "P5" {
        return Err(("magic", format!("expected P5, found {magic:?}")));
    }
    let parse = |name: &'static str, s: String| {
        s.parse::<usize>()
            .map_err(|_| (name, format!("not an integer: {s:?}")))
    };
    let width = parse("width", token("width")?)?;
    let height = parse("height", token("height")?)?;
    let maxval = parse("maxval", token("maxval")?)?;
    if maxval != 65535 {
        return Err(("maxval", format!("expected 65535, found {maxval}")));
    }
    pos += 1; // single whitespace byte before the raster
    let need = width * height * 2;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != need {
        return Err(("raster", format!("expected {need} bytes, found {}", raster.len())));
    }
    let pixels = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / MAXVAL)
        .collect();
    GrayImage::new(height, width, pixels).map_err(|e| ("raster", e.to_string()))
}
