//! Image/mask ingestion, splice synthesis, training augmentation and
//! robustness degradations.

mod augment;
mod degrade;
mod io;
mod manifest;
pub(crate) mod ops;
mod synth;

pub use augment::{augment, AugmentPlan};
pub use degrade::{degrade, table6_chains, DegradationSpec, DegradeOp};
pub use io::{load_image, load_mask, load_raw_sample, load_sample, save_image_png, save_mask_png};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};
pub use synth::{synth_base_image, synth_dataset, synth_samples, synth_splice, SpliceOptions};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Minimum accepted side length of a sample.
pub const MIN_SIDE: usize = 32;

/// RGB image with interleaved channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "rgb buffer length");
        RgbImage { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        RgbImage::new(width, height, vec![value; width * height * 3])
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, px: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Planar (3, H, W) copy.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.width * self.height;
        let mut t = Tensor::zeros(3, self.height, self.width);
        for i in 0..n {
            for c in 0..3 {
                t.data[c * n + i] = self.data[i * 3 + c];
            }
        }
        t
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        assert_eq!(t.c, 3, "rgb tensor must have 3 channels");
        let n = t.h * t.w;
        let mut data = vec![0.0; n * 3];
        for i in 0..n {
            for c in 0..3 {
                data[i * 3 + c] = t.data[c * n + i];
            }
        }
        RgbImage::new(t.w, t.h, data)
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> RgbImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        RgbImage::from_tensor(&crate::nn::bilinear_resize(&self.to_tensor(), height, width))
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantize_u8(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        RgbImage::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Binary tamper mask, 1 = tampered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask buffer of {} values for {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::param("mask", "values must be 0 or 1"));
        }
        Ok(Mask { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Nearest-neighbor resize (source index `floor(o * in / out)`).
    pub fn resize_nearest(&self, width: usize, height: usize) -> Mask {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                data.push(self.get(sx, sy));
            }
        }
        Mask { width, height, data }
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.push(self.get(x, y));
            }
        }
        Mask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// One image with its tamper mask; the unit of ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub image: RgbImage,
    pub mask: Mask,
    pub dataset_id: String,
    pub sample_id: String,
}

impl ImageSample {
    pub fn new(image: RgbImage, mask: Mask, dataset_id: impl Into<String>, sample_id: impl Into<String>) -> Result<Self> {
        if (image.width, image.height) != (mask.width, mask.height) {
            return Err(Error::Shape(format!(
                "image {}x{} vs mask {}x{}",
                image.width, image.height, mask.width, mask.height
            )));
        }
        if image.width < MIN_SIDE || image.height < MIN_SIDE {
            return Err(Error::Shape(format!(
                "sample {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}",
                image.width, image.height
            )));
        }
        Ok(ImageSample {
            image,
            mask,
            dataset_id: dataset_id.into(),
            sample_id: sample_id.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = RgbImage::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let t = img.to_tensor();
        assert_eq!(t.plane(0), &[0.1, 0.4]);
        assert_eq!(RgbImage::from_tensor(&t), img);
    }

    #[test]
    fn sample_rejects_mismatched_or_tiny_inputs() {
        let img = RgbImage::filled(40, 40, 0.5);
        assert!(ImageSample::new(img.clone(), Mask::zeros(40, 39), "d", "s").is_err());
        let tiny = RgbImage::filled(16, 16, 0.5);
        assert!(ImageSample::new(tiny, Mask::zeros(16, 16), "d", "s").is_err());
        assert!(ImageSample::new(img, Mask::zeros(40, 40), "d", "s").is_ok());
    }

    #[test]
    fn mask_rejects_non_binary_values() {
        assert!(Mask::new(2, 1, vec![0, 2]).is_err());
    }

    #[test]
    fn nearest_resize_keeps_binarity() {
        let m = Mask::new(4, 2, vec![1, 0, 1, 0, 0, 1, 0, 1]).unwrap();
        let r = m.resize_nearest(8, 4);
        assert!(r.data.iter().all(|&v| v <= 1));
        assert_eq!(r.get(0, 0), 1);
        assert_eq!(r.get(2, 0), 0);
    }
}
