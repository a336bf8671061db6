use serde::{Deserialize, Serialize};

use crate::error::ImageError;

/// Single-channel image, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<RasterImage, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage);
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount { width, height, expected, got: pixels.len() });
        }
        if let Some((index, &value)) =
            pixels.iter().enumerate().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ImageError::PixelRange { index, value });
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> RasterImage {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        RasterImage { width, height, pixels: vec![value.clamp(0.0, 1.0); width * height] }
    }

    /// Builds an image from values already known to lie in [0, 1].
    pub(crate) fn from_trusted(width: usize, height: usize, pixels: Vec<f32>) -> RasterImage {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        RasterImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Reverses the column order of every row.
    pub fn flipped_horizontal(&self) -> RasterImage {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_mut(self.width) {
            row.reverse();
        }
        RasterImage { pixels, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_count_and_range() {
        assert!(RasterImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(RasterImage::new(0, 2, vec![]).is_err());
        assert!(matches!(
            RasterImage::new(2, 1, vec![0.0, 1.5]),
            Err(ImageError::PixelRange { index: 1, .. })
        ));
        assert!(RasterImage::new(2, 1, vec![0.0, f32::NAN]).is_err());
        assert!(RasterImage::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn flip_reverses_rows() {
        let img = RasterImage::new(3, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let f = img.flipped_horizontal();
        assert_eq!(f.pixels(), &[0.2, 0.1, 0.0, 0.5, 0.4, 0.3]);
        assert_eq!(f.flipped_horizontal(), img);
    }
}
