use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Single-channel image with row-major pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "image size must be positive, got {height}x{width}");
        ensure!(
            pixels.len() == height * width,
            "{} pixels for a {height}x{width} image",
            pixels.len()
        );
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    /// 8-bit samples mapped to `v / 255`.
    pub fn from_u8(height: usize, width: usize, levels: &[u8]) -> Result<Self> {
        Self::new(height, width, levels.iter().map(|&v| v as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn ensure_unit_range(&self) -> Result<()> {
        match self
            .pixels
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            Some(i) => Err(Error::Validation(format!(
                "pixel {i} has value {} outside [0, 1]",
                self.pixels[i]
            ))),
            None => Ok(()),
        }
    }

    /// Decode any single- or multi-channel PNG to grayscale in `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::from_u8(h as usize, w as usize, gray.as_raw())
    }

    /// Quantize to 8 bits and write a single-channel PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| quantize_u8(v)).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Fixed preprocessing: resize, optional histogram equalization, then
/// standardization with `(x - norm_mean) / norm_std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// `(height, width)`.
    pub target_size: (usize, usize),
    pub equalize: bool,
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: (32, 32),
            equalize: true,
            // single-channel average of the usual ImageNet channel statistics
            norm_mean: 0.449,
            norm_std: 0.226,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target_size;
        ensure!(h > 0 && w > 0, "target size must be positive, got {h}x{w}");
        ensure!(
            self.norm_std.is_finite() && self.norm_std > 0.0,
            "norm_std must be positive, got {}",
            self.norm_std
        );
        ensure!(self.norm_mean.is_finite(), "norm_mean must be finite");
        Ok(())
    }
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    ensure!(height > 0 && width > 0, "target size must be positive, got {height}x{width}");
    if (height, width) == (image.height, image.width) {
        return Ok(image.clone());
    }
    let sy = image.height as f64 / height as f64;
    let sx = image.width as f64 / width as f64;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (image.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (image.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            let tx = fx - x0 as f64;
            let top = image.get(y0, x0) as f64 * (1.0 - tx) + image.get(y0, x1) as f64 * tx;
            let bottom = image.get(y1, x0) as f64 * (1.0 - tx) + image.get(y1, x1) as f64 * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    Image::new(height, width, out)
}

/// Classic cdf-based histogram equalization on `levels` quantization levels.
///
/// Constant images have no usable cdf range and are returned unchanged.
pub fn equalize_histogram(image: &Image, levels: usize) -> Result<Image> {
    ensure!(levels >= 2, "need at least two levels, got {levels}");
    image.ensure_unit_range()?;
    let top = (levels - 1) as f64;
    let quantized: Vec<usize> = image
        .pixels
        .iter()
        .map(|&v| (v as f64 * top).round() as usize)
        .collect();
    let mut cdf = vec![0usize; levels];
    for &q in &quantized {
        cdf[q] += 1;
    }
    for i in 1..levels {
        cdf[i] += cdf[i - 1];
    }
    let total = quantized.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if total == cdf_min {
        return Ok(image.clone());
    }
    let denom = (total - cdf_min) as f64;
    let map: Vec<f32> = cdf
        .iter()
        .map(|&c| {
            let level = (c.saturating_sub(cdf_min) as f64 / denom * top).round();
            level as f32 / top as f32
        })
        .collect();
    Image::new(
        image.height,
        image.width,
        quantized.iter().map(|&q| map[q]).collect(),
    )
}

/// `(x - mean) / std` per pixel.
pub fn normalize(image: &Image, mean: f64, std: f64) -> Result<Image> {
    ensure!(std.is_finite() && std > 0.0, "norm_std must be positive, got {std}");
    let pixels = image
        .pixels
        .iter()
        .map(|&v| ((v as f64 - mean) / std) as f32)
        .collect();
    Image::new(image.height, image.width, pixels)
}

/// Resize and optionally equalize; the result stays in `[0, 1]`.
///
/// This is the auto-encoder's input domain. Classifiers apply the
/// standardization step themselves, so `normalize(prepare_image(x))` equals
/// [`preprocess_image`].
pub fn prepare_image(image: &Image, config: &PreprocessConfig) -> Result<Image> {
    config.validate()?;
    let (h, w) = config.target_size;
    let resized = resize_bilinear(image, h, w)?;
    if config.equalize {
        // bilinear interpolation of values in [0, 1] stays in range up to rounding
        let mut clamped = resized;
        for v in clamped.pixels_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        equalize_histogram(&clamped, 256)
    } else {
        Ok(resized)
    }
}

pub fn preprocess_image(image: &Image, config: &PreprocessConfig) -> Result<Image> {
    let prepared = prepare_image(image, config)?;
    normalize(&prepared, config.norm_mean, config.norm_std)
}
