//! Pixel operations shared by augmentation and degradation.

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::RgbImage;
use crate::error::{Error, Result};

/// Gaussian sigma implied by a kernel size, matching the OpenCV convention
/// used when only the kernel size is given.
pub fn sigma_for_kernel(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn gaussian_taps(kernel: usize) -> Vec<f32> {
    let sigma = sigma_for_kernel(kernel);
    let r = (kernel / 2) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Reflect-101 border index.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * n - 2 - i };
    }
    i as usize
}

/// Separable Gaussian blur with an odd kernel size.
pub fn gaussian_blur(img: &RgbImage, kernel: usize) -> Result<RgbImage> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::param("blur.kernel", format!("{kernel} is not a positive odd size")));
    }
    if kernel == 1 {
        return Ok(img.clone());
    }
    let taps = gaussian_taps(kernel);
    let r = (kernel / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &t) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - r, w);
                let i = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += t * img.data[i + c];
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, &t) in taps.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - r, h);
                let i = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += t * tmp[i + c];
                }
            }
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Ok(RgbImage::new(w, h, out))
}

/// Encodes to baseline JPEG at `quality` and decodes back.
pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    if !(1..=100).contains(&quality) {
        return Err(Error::param("jpeg.quality", format!("{quality} outside [1, 100]")));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&img.to_rgb8(), img.width as u32, img.height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| Error::Encode(format!("jpeg decode: {e}")))?
        .to_rgb8();
    Ok(RgbImage::from_rgb8(img.width, img.height, decoded.as_raw()))
}

/// Additive zero-mean Gaussian noise with standard deviation `std`, clipped
/// to `[0, 1]`.
pub fn add_gaussian_noise<R: Rng>(img: &RgbImage, std: f64, rng: &mut R) -> Result<RgbImage> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::param("noise", format!("std {std} must be finite and >= 0")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = img
        .data
        .iter()
        .map(|&v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(RgbImage::new(img.width, img.height, data))
}

/// Bilinear rescale by `factor`, then bilinear back to the original size.
pub fn resize_down_up(img: &RgbImage, factor: f64) -> Result<RgbImage> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::param("resize.factor", format!("{factor} must be > 0")));
    }
    let w = ((img.width as f64 * factor).round() as usize).max(1);
    let h = ((img.height as f64 * factor).round() as usize).max(1);
    Ok(img.resize_bilinear(w, h).resize_bilinear(img.width, img.height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn checker(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::filled(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 0.9 } else { 0.1 };
                img.set_pixel(x, y, [v, v * 0.5, 1.0 - v]);
            }
        }
        img
    }

    #[test]
    fn blur_preserves_constant_images_and_rejects_even_kernels() {
        let img = RgbImage::filled(16, 16, 0.3);
        let out = gaussian_blur(&img, 5).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.3).abs() < 1e-6));
        assert!(gaussian_blur(&img, 4).is_err());
    }

    #[test]
    fn blur_reduces_high_frequency_energy() {
        let img = checker(32, 32);
        let out = gaussian_blur(&img, 7).unwrap();
        let var = |im: &RgbImage| {
            let m = im.data.iter().sum::<f32>() / im.data.len() as f32;
            im.data.iter().map(|v| (v - m).powi(2)).sum::<f32>()
        };
        assert!(var(&out) < var(&img));
    }

    #[test]
    fn jpeg_roundtrip_changes_pixels_but_keeps_shape() {
        let img = checker(32, 32);
        let out = jpeg_roundtrip(&img, 60).unwrap();
        assert_eq!((out.width, out.height), (32, 32));
        assert_ne!(out, img);
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }

    #[test]
    fn resize_factor_one_is_identity() {
        let img = checker(20, 12);
        assert_eq!(resize_down_up(&img, 1.0).unwrap(), img);
        assert!(resize_down_up(&img, 0.0).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = RgbImage::filled(8, 8, 0.5);
        let a = add_gaussian_noise(&img, 0.1, &mut rng_from(3)).unwrap();
        let b = add_gaussian_noise(&img, 0.1, &mut rng_from(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
