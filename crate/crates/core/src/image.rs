//! Float RGB images and PNG persistence.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean over all pixels.
    pub fn channel_mean(&self) -> [f32; 3] {
        let mut acc = [0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
    }

    /// Snaps every value to the nearest multiple of 1/255 in `[0, 1]` so the
    /// image survives an 8-bit PNG round trip unchanged.
    pub fn quantize(&mut self) {
        for v in self.data.iter_mut() {
            *v = to_u8(*v) as f32 / 255.0;
        }
    }

    /// Channel-major copy (`3 x H x W`), centred on zero.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c] - 0.5;
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| to_u8(*v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|b| *b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_image_survives_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.037) % 1.0;
        }
        img.quantize();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn channel_mean_of_constant_image() {
        let img = Image::filled(4, 4, [0.25, 0.5, 1.0]);
        assert_eq!(img.channel_mean(), [0.25, 0.5, 1.0]);
    }
}
