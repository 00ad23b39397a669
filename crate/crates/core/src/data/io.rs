use std::path::Path;

use image::{GrayImage, ImageBuffer, Rgb};

use super::{ImageSample, ManifestEntry, Mask, RgbImage};
use crate::error::{Error, Result};

/// Gray levels strictly above this are tampered.
pub const MASK_THRESHOLD: u8 = 127;

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RgbImage::from_rgb8(w as usize, h as usize, rgb.as_raw()))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray
        .as_raw()
        .iter()
        .map(|&v| u8::from(v > MASK_THRESHOLD))
        .collect();
    Mask::new(w as usize, h as usize, data)
}

/// Loads an entry at its native resolution.
pub fn load_raw_sample(entry: &ManifestEntry) -> Result<ImageSample> {
    let image = load_image(&entry.image_path)?;
    let mask = load_mask(&entry.mask_path)?;
    ImageSample::new(image, mask, entry.dataset_id.clone(), entry.sample_id.clone())
}

/// Loads an entry and resizes it to `target_size` square: bilinear for the
/// image, nearest-neighbor for the (already thresholded) mask.
pub fn load_sample(entry: &ManifestEntry, target_size: usize) -> Result<ImageSample> {
    let raw = load_raw_sample(entry)?;
    let image = raw.image.resize_bilinear(target_size, target_size);
    let mask = raw.mask.resize_nearest(target_size, target_size);
    ImageSample::new(image, mask, raw.dataset_id, raw.sample_id)
}

pub fn save_image_png(path: &Path, image: &RgbImage) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, image.to_rgb8())
            .ok_or_else(|| Error::Encode("rgb buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

/// Writes a mask as 0/255 grayscale.
pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = mask.data.iter().map(|&v| v * 255).collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .ok_or_else(|| Error::Encode("mask buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn entry(dir: &Path, image: &str, mask: &str) -> ManifestEntry {
        ManifestEntry {
            image_path: dir.join(image),
            mask_path: dir.join(mask),
            dataset_id: "d".into(),
            sample_id: "s".into(),
        }
    }

    fn write_gray(path: &PathBuf, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
        GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)])).save(path).unwrap();
    }

    #[test]
    fn large_input_is_resized_to_target() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::filled(1024, 1024, 0.25);
        save_image_png(&dir.path().join("i.png"), &img).unwrap();
        write_gray(&dir.path().join("m.png"), 1024, 1024, |x, _| if x < 512 { 255 } else { 0 });
        let s = load_sample(&entry(dir.path(), "i.png", "m.png"), 512).unwrap();
        assert_eq!((s.image.width, s.image.height), (512, 512));
        assert_eq!((s.mask.width, s.mask.height), (512, 512));
        assert_eq!(s.mask.count_ones(), 256 * 512);
    }

    #[test]
    fn mask_threshold_at_127() {
        let dir = tempfile::tempdir().unwrap();
        save_image_png(&dir.path().join("i.png"), &RgbImage::filled(64, 64, 0.5)).unwrap();
        write_gray(&dir.path().join("m.png"), 64, 64, |x, _| match x {
            0 => 200,
            1 => 100,
            2 => 127,
            3 => 128,
            _ => 0,
        });
        let s = load_sample(&entry(dir.path(), "i.png", "m.png"), 64).unwrap();
        assert_eq!(s.mask.get(0, 0), 1);
        assert_eq!(s.mask.get(1, 0), 0);
        assert_eq!(s.mask.get(2, 0), 0);
        assert_eq!(s.mask.get(3, 0), 1);
    }

    #[test]
    fn all_zero_mask_is_a_valid_sample() {
        let dir = tempfile::tempdir().unwrap();
        save_image_png(&dir.path().join("i.png"), &RgbImage::filled(64, 64, 0.5)).unwrap();
        write_gray(&dir.path().join("m.png"), 64, 64, |_, _| 0);
        let s = load_sample(&entry(dir.path(), "i.png", "m.png"), 64).unwrap();
        assert_eq!(s.mask.count_ones(), 0);
    }

    #[test]
    fn dimension_mismatch_and_decode_failure_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_image_png(&dir.path().join("i.png"), &RgbImage::filled(64, 64, 0.5)).unwrap();
        write_gray(&dir.path().join("m.png"), 64, 48, |_, _| 0);
        std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        assert!(matches!(
            load_sample(&entry(dir.path(), "i.png", "m.png"), 64),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            load_sample(&entry(dir.path(), "bad.png", "m.png"), 64),
            Err(Error::Decode { .. })
        ));
    }
}
