//! Procedural splice forgeries for desk-scale training and testing.
//!
//! Base images are smooth random color fields with textured shapes and a
//! per-image sensor-noise level. A splice copies a polygonal or elliptical
//! patch from a donor, rescaled by a random factor, into the host. Resampling
//! smooths the donor's sensor noise, which leaves a resampling trace inside
//! the region.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{save_image_png, save_mask_png, ImageSample, Manifest, ManifestEntry, Mask, RgbImage};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

pub const MIN_SPLICE_SIDE: usize = 128;
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SpliceOptions {
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Donor patches are sampled at `1 / scale` of the region size and
    /// upsampled; `scale` is drawn uniformly from this range.
    pub donor_scale: (f64, f64),
    /// Allow the donor patch to come from the same coordinates as the target
    /// region. Only meaningful when host and donor are the same image.
    pub allow_identity_placement: bool,
}

impl Default for SpliceOptions {
    fn default() -> Self {
        SpliceOptions {
            min_fraction: 0.05,
            max_fraction: 0.40,
            donor_scale: (1.25, 2.0),
            allow_identity_placement: false,
        }
    }
}

/// A procedural pristine image of the given size.
pub fn synth_base_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = rng_from(seed);
    // Smooth background: 4x4 random color lattice, bilinearly upsampled.
    let lattice: Vec<f32> = (0..4 * 4 * 3).map(|_| rng.random_range(0.15..0.85)).collect();
    let mut img = RgbImage::new(4, 4, lattice).resize_bilinear(width, height);

    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let color: [f32; 3] = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.05..0.3) * width as f64;
        let ry = rng.random_range(0.05..0.3) * height as f64;
        let disk = rng.random_bool(0.5);
        let period = rng.random_range(3.0..12.0);
        let angle = rng.random_range(0.0..PI);
        let contrast = rng.random_range(0.0..0.12) as f32;
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    let phase = (x as f64 * ca + y as f64 * sa) * 2.0 * PI / period;
                    let t = contrast * phase.sin() as f32;
                    img.set_pixel(x, y, [color[0] + t, color[1] + t, color[2] + t]);
                }
            }
        }
    }

    let sigma = rng.random_range(0.012..0.03);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for v in &mut img.data {
        *v += normal.sample(&mut rng) as f32;
    }
    img.quantize_u8();
    img
}

/// Region mask in a local bounding box.
struct Region {
    width: usize,
    height: usize,
    inside: Vec<bool>,
    area: usize,
}

fn draw_region<R: Rng>(rng: &mut R, target_area: f64) -> Region {
    if rng.random_bool(0.5) {
        let aspect = rng.random_range(0.5..2.0f64);
        let a = (target_area * aspect / PI).sqrt();
        let b = (target_area / (PI * aspect)).sqrt();
        let (w, h) = ((2.0 * a).ceil() as usize + 1, (2.0 * b).ceil() as usize + 1);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let inside: Vec<bool> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0
            })
            .collect();
        let area = inside.iter().filter(|&&v| v).count();
        Region { width: w, height: h, inside, area }
    } else {
        let n = rng.random_range(5..10);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.0)).collect();
        let unit_area: f64 = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                let mut d = angles[j] - angles[i];
                if d < 0.0 {
                    d += 2.0 * PI;
                }
                0.5 * radii[i] * radii[j] * d.sin()
            })
            .sum::<f64>()
            .max(1e-3);
        let scale = (target_area / unit_area).sqrt();
        let pts: Vec<(f64, f64)> = angles
            .iter()
            .zip(&radii)
            .map(|(t, r)| (r * scale * t.cos(), r * scale * t.sin()))
            .collect();
        let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let (w, h) = ((max_x - min_x).ceil() as usize + 1, (max_y - min_y).ceil() as usize + 1);
        let local: Vec<(f64, f64)> = pts.iter().map(|p| (p.0 - min_x, p.1 - min_y)).collect();
        let inside: Vec<bool> = (0..w * h)
            .map(|i| point_in_polygon((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, &local))
            .collect();
        let area = inside.iter().filter(|&&v| v).count();
        Region { width: w, height: h, inside, area }
    }
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pastes a random donor region into the host. The returned mask is exactly
/// the set of pixels whose value differs from the host.
pub fn synth_splice(host: &RgbImage, donor: &RgbImage, rng_seed: u64, opts: &SpliceOptions) -> Result<ImageSample> {
    for (name, img) in [("host", host), ("donor", donor)] {
        if img.width < MIN_SPLICE_SIDE || img.height < MIN_SPLICE_SIDE {
            return Err(Error::param(
                name,
                format!("{}x{} is smaller than {MIN_SPLICE_SIDE}x{MIN_SPLICE_SIDE}", img.width, img.height),
            ));
        }
    }
    let mut rng = rng_from(rng_seed);
    let total = (host.width * host.height) as f64;
    let (lo, hi) = (opts.min_fraction, opts.max_fraction);
    let margin = 0.1 * (hi - lo);

    for _ in 0..MAX_ATTEMPTS {
        let target = rng.random_range((lo + margin)..(hi - margin).max(lo + margin + 1e-9)) * total;
        let region = draw_region(&mut rng, target);
        let frac = region.area as f64 / total;
        if region.width > host.width || region.height > host.height || !(lo..=hi).contains(&frac) {
            continue;
        }
        let scale = rng.random_range(opts.donor_scale.0..=opts.donor_scale.1);
        let src_w = ((region.width as f64 / scale).round() as usize).clamp(1, donor.width);
        let src_h = ((region.height as f64 / scale).round() as usize).clamp(1, donor.height);
        let tx = rng.random_range(0..=host.width - region.width);
        let ty = rng.random_range(0..=host.height - region.height);
        let mut sx = rng.random_range(0..=donor.width - src_w);
        let mut sy = rng.random_range(0..=donor.height - src_h);
        if !opts.allow_identity_placement && (sx, sy) == (tx, ty) && (src_w, src_h) == (region.width, region.height) {
            // Same footprint: shift the source so the paste is not a no-op.
            if sx + 1 + src_w <= donor.width {
                sx += 1;
            } else if sy + 1 + src_h <= donor.height {
                sy += 1;
            } else {
                continue;
            }
        }

        let mut patch = RgbImage::filled(src_w, src_h, 0.0);
        for y in 0..src_h {
            for x in 0..src_w {
                patch.set_pixel(x, y, donor.pixel(sx + x, sy + y));
            }
        }
        let mut patch = patch.resize_bilinear(region.width, region.height);
        patch.quantize_u8();

        let mut image = host.clone();
        let mut mask = Mask::zeros(host.width, host.height);
        for y in 0..region.height {
            for x in 0..region.width {
                if !region.inside[y * region.width + x] {
                    continue;
                }
                let (hx, hy) = (tx + x, ty + y);
                let mut px = patch.pixel(x, y);
                if px == host.pixel(hx, hy) {
                    // Nudge one 8-bit level so the pixel is a real change.
                    px[0] = if px[0] >= 0.5 { px[0] - 1.0 / 255.0 } else { px[0] + 1.0 / 255.0 };
                    px[0] = (px[0] * 255.0).round() / 255.0;
                }
                image.set_pixel(hx, hy, px);
                mask.data[hy * host.width + hx] = 1;
            }
        }
        return ImageSample::new(image, mask, "synthetic", format!("splice_{rng_seed}"));
    }
    Err(Error::Synthesis(format!(
        "no region with area fraction in [{lo}, {hi}] after {MAX_ATTEMPTS} attempts"
    )))
}

/// Generates `count` spliced samples in memory.
pub fn synth_samples(count: usize, size: usize, seed: u64) -> Result<Vec<ImageSample>> {
    (0..count)
        .map(|i| {
            let i = i as u64;
            let host = synth_base_image(size, size, derive_seed(seed, &[i, 0]));
            let donor = synth_base_image(size, size, derive_seed(seed, &[i, 1]));
            let mut s = synth_splice(&host, &donor, derive_seed(seed, &[i, 2]), &SpliceOptions::default())?;
            s.sample_id = format!("synth_{i:05}");
            Ok(s)
        })
        .collect()
}

/// Writes `count` spliced samples as PNG pairs under `out_dir` with a
/// `manifest.jsonl` listing them.
pub fn synth_dataset(out_dir: &Path, count: usize, size: usize, seed: u64) -> Result<Manifest> {
    let img_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    for d in [&img_dir, &mask_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(count);
    for s in synth_samples(count, size, seed)? {
        let image_path = img_dir.join(format!("{}.png", s.sample_id));
        let mask_path = mask_dir.join(format!("{}.png", s.sample_id));
        save_image_png(&image_path, &s.image)?;
        save_mask_png(&mask_path, &s.mask)?;
        entries.push(ManifestEntry {
            image_path,
            mask_path,
            dataset_id: s.dataset_id,
            sample_id: s.sample_id,
        });
    }
    let manifest = Manifest { entries };
    super::write_manifest(out_dir.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let host = synth_base_image(128, 128, 1);
        let donor = synth_base_image(128, 128, 2);
        let opts = SpliceOptions::default();
        assert_eq!(synth_splice(&host, &donor, 5, &opts).unwrap(), synth_splice(&host, &donor, 5, &opts).unwrap());
    }

    #[test]
    fn area_fraction_within_bounds_over_100_seeds() {
        let host = synth_base_image(128, 128, 10);
        let donor = synth_base_image(128, 128, 11);
        let opts = SpliceOptions::default();
        for seed in 0..100 {
            let s = synth_splice(&host, &donor, seed, &opts).unwrap();
            let frac = s.mask.count_ones() as f64 / (128.0 * 128.0);
            assert!((0.05..=0.40).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn mask_equals_changed_pixels() {
        let host = synth_base_image(128, 160, 3);
        let donor = synth_base_image(144, 128, 4);
        for seed in 0..20 {
            let s = synth_splice(&host, &donor, seed, &SpliceOptions::default()).unwrap();
            for y in 0..host.height {
                for x in 0..host.width {
                    let changed = s.image.pixel(x, y) != host.pixel(x, y);
                    assert_eq!(changed, s.mask.get(x, y) == 1, "seed {seed} at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn self_splice_still_changes_pixels() {
        let host = synth_base_image(128, 128, 7);
        let opts = SpliceOptions {
            donor_scale: (1.0, 1.0),
            ..SpliceOptions::default()
        };
        for seed in 0..10 {
            let s = synth_splice(&host, &host, seed, &opts).unwrap();
            assert!(s.mask.count_ones() > 0);
            for y in 0..128 {
                for x in 0..128 {
                    if s.mask.get(x, y) == 1 {
                        assert_ne!(s.image.pixel(x, y), host.pixel(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn small_inputs_rejected() {
        let small = synth_base_image(64, 64, 0);
        let ok = synth_base_image(128, 128, 0);
        assert!(synth_splice(&small, &ok, 0, &SpliceOptions::default()).is_err());
        assert!(synth_splice(&ok, &small, 0, &SpliceOptions::default()).is_err());
    }

    #[test]
    fn impossible_fraction_bounds_exhaust_attempts() {
        let host = synth_base_image(128, 128, 0);
        let opts = SpliceOptions {
            min_fraction: 0.95,
            max_fraction: 0.99,
            ..SpliceOptions::default()
        };
        assert!(matches!(synth_splice(&host, &host, 0, &opts), Err(Error::Synthesis(_))));
    }

    #[test]
    fn dataset_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 3, 128, 7).unwrap();
        assert_eq!(manifest.len(), 3);
        let loaded = crate::data::load_manifest(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.len(), 3);
        let mem = synth_samples(3, 128, 7).unwrap();
        let disk = crate::data::load_raw_sample(&loaded.entries[1]).unwrap();
        assert_eq!(disk.image, mem[1].image);
        assert_eq!(disk.mask, mem[1].mask);
    }
}
