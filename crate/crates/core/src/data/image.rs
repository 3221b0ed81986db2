use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::shape(
                "gray image",
                format!("{height}x{width} with {} pixels", pixels.len()),
            ));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Three-channel image, interleaved RGB, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(
                "rgb image",
                format!("{height}x{width} with {} pixels", data.len()),
            ));
        }
        if data.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("rgb value outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.pixels.iter().map(|&v| [v; 3]).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// BT.601 luma.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .data
        .iter()
        .map(|p| (LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub radius_fraction: f64,
    pub background: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            radius_fraction: 1.0,
            background: 0.5,
        }
    }
}

/// Keeps pixels whose centre lies within `radius_fraction * min(H, W) / 2`
/// of the image centre; everything else becomes `background`.
pub fn apply_circular_mask(img: &GrayImage, radius_fraction: f64, background: f64) -> Result<GrayImage> {
    if !(radius_fraction > 0.0 && radius_fraction <= 1.0) {
        return Err(Error::invalid(format!("radius_fraction {radius_fraction} not in (0, 1]")));
    }
    if !(0.0..=1.0).contains(&background) {
        return Err(Error::invalid(format!("background {background} not in [0, 1]")));
    }
    let radius = radius_fraction * img.height.min(img.width) as f64 / 2.0;
    let cy = img.height as f64 / 2.0;
    let cx = img.width as f64 / 2.0;
    let mut pixels = img.pixels.clone();
    for y in 0..img.height {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..img.width {
            let dx = x as f64 + 0.5 - cx;
            if dx * dx + dy * dy > radius * radius {
                pixels[y * img.width + x] = background;
            }
        }
    }
    Ok(GrayImage { pixels, ..*img })
}

/// Grayscale conversion followed by the circular mask.
pub fn preprocess(img: &RgbImage, mask: &MaskConfig) -> Result<GrayImage> {
    apply_circular_mask(&to_grayscale(img), mask.radius_fraction, mask.background)
}
