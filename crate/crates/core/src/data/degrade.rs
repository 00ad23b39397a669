use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ops, RgbImage};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// One post-processing operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DegradeOp {
    Jpeg { quality: u8 },
    Blur { kernel: usize },
    /// Additive Gaussian noise; `variance` in squared intensity units.
    Noise { variance: f64 },
    Resize { factor: f64 },
}

impl DegradeOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradeOp::Jpeg { quality } if !(1..=100).contains(&quality) => {
                Err(Error::param("jpeg.quality", format!("{quality} outside [1, 100]")))
            }
            DegradeOp::Blur { kernel } if kernel % 2 == 0 => {
                Err(Error::param("blur.kernel", format!("{kernel} is not odd")))
            }
            DegradeOp::Noise { variance } if !(variance >= 0.0 && variance.is_finite()) => {
                Err(Error::param("noise.variance", format!("{variance} must be >= 0")))
            }
            DegradeOp::Resize { factor } if !(factor > 0.0 && factor.is_finite()) => {
                Err(Error::param("resize.factor", format!("{factor} must be > 0")))
            }
            _ => Ok(()),
        }
    }

    /// Single-letter code used in chain names (J, B, N, R).
    pub fn letter(&self) -> char {
        match self {
            DegradeOp::Jpeg { .. } => 'J',
            DegradeOp::Blur { .. } => 'B',
            DegradeOp::Noise { .. } => 'N',
            DegradeOp::Resize { .. } => 'R',
        }
    }
}

impl fmt::Display for DegradeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradeOp::Jpeg { quality } => write!(f, "jpeg:{quality}"),
            DegradeOp::Blur { kernel } => write!(f, "blur:{kernel}"),
            DegradeOp::Noise { variance } => write!(f, "noise:{variance}"),
            DegradeOp::Resize { factor } => write!(f, "resize:{factor}"),
        }
    }
}

impl FromStr for DegradeOp {
    type Err = Error;

    /// Parses `jpeg:60`, `blur:5`, `noise:0.006` or `resize:0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::param("degradation", format!("`{s}` is not `op:value`")))?;
        let bad = |e: &dyn fmt::Display| Error::param("degradation", format!("`{s}`: {e}"));
        let op = match name {
            "jpeg" => DegradeOp::Jpeg {
                quality: value.parse().map_err(|e| bad(&e))?,
            },
            "blur" => DegradeOp::Blur {
                kernel: value.parse().map_err(|e| bad(&e))?,
            },
            "noise" => DegradeOp::Noise {
                variance: value.parse().map_err(|e| bad(&e))?,
            },
            "resize" => DegradeOp::Resize {
                factor: value.parse().map_err(|e| bad(&e))?,
            },
            other => return Err(Error::param("degradation", format!("unknown op `{other}`"))),
        };
        op.validate()?;
        Ok(op)
    }
}

/// An ordered chain of degradations with the seed driving any randomness.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub chain: Vec<DegradeOp>,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(chain: Vec<DegradeOp>, seed: u64) -> Self {
        DegradationSpec { chain, seed }
    }

    pub fn single(op: DegradeOp, seed: u64) -> Self {
        DegradationSpec { chain: vec![op], seed }
    }

    /// Parses a comma-separated chain such as `jpeg:60,resize:0.6`.
    pub fn parse_chain(s: &str, seed: u64) -> Result<Self> {
        let chain = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(DegradeOp::from_str)
            .collect::<Result<Vec<_>>>()?;
        Ok(DegradationSpec { chain, seed })
    }

    pub fn validate(&self) -> Result<()> {
        self.chain.iter().try_for_each(DegradeOp::validate)
    }

    pub fn label(&self) -> String {
        if self.chain.is_empty() {
            return "none".into();
        }
        self.chain.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Applies the chain in order. Each op draws from its own seed stream, so a
/// chain's output depends only on `(image, spec)`.
pub fn degrade(image: &RgbImage, spec: &DegradationSpec) -> Result<RgbImage> {
    spec.validate()?;
    let mut out = image.clone();
    for (i, op) in spec.chain.iter().enumerate() {
        out = match *op {
            DegradeOp::Jpeg { quality } => ops::jpeg_roundtrip(&out, quality)?,
            DegradeOp::Blur { kernel } => ops::gaussian_blur(&out, kernel)?,
            DegradeOp::Noise { variance } => {
                let mut rng = rng_from(derive_seed(spec.seed, &[i as u64]));
                ops::add_gaussian_noise(&out, variance.sqrt(), &mut rng)?
            }
            DegradeOp::Resize { factor } => ops::resize_down_up(&out, factor)?,
        };
    }
    Ok(out)
}

/// The four mixed post-processing chains (J = JPEG q60, R = resize 0.6,
/// B = blur k5, N = noise 0.006), named by their letter order.
pub fn table6_chains() -> Vec<(String, Vec<DegradeOp>)> {
    let j = DegradeOp::Jpeg { quality: 60 };
    let r = DegradeOp::Resize { factor: 0.6 };
    let b = DegradeOp::Blur { kernel: 5 };
    let n = DegradeOp::Noise { variance: 0.006 };
    [vec![j, r, b, n], vec![r, b, n, j], vec![b, n, j, r], vec![n, j, r, b]]
        .into_iter()
        .map(|chain| (chain.iter().map(DegradeOp::letter).collect(), chain))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::filled(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = ((x * 7 + y * 3) % 256) as f32 / 255.0;
                img.set_pixel(x, y, [v, 1.0 - v, 0.5]);
            }
        }
        img
    }

    #[test]
    fn empty_chain_is_identity() {
        let img = ramp(40, 30);
        assert_eq!(degrade(&img, &DegradationSpec::default()).unwrap(), img);
    }

    #[test]
    fn unit_resize_is_identity() {
        let img = ramp(40, 30);
        let spec = DegradationSpec::single(DegradeOp::Resize { factor: 1.0 }, 0);
        assert_eq!(degrade(&img, &spec).unwrap(), img);
    }

    #[test]
    fn noise_variance_matches_request() {
        // 578 * 578 * 3 ≈ 1.0e6 samples.
        let img = RgbImage::filled(578, 578, 0.5);
        let spec = DegradationSpec::single(DegradeOp::Noise { variance: 0.006 }, 11);
        let out = degrade(&img, &spec).unwrap();
        let n = out.data.len() as f64;
        let mean = out.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 0.006).abs() <= 0.2 * 0.006, "variance {var}");
    }

    #[test]
    fn chain_applies_in_order() {
        let img = ramp(64, 64);
        let jr = DegradationSpec::parse_chain("jpeg:60,resize:0.6", 1).unwrap();
        let rj = DegradationSpec::parse_chain("resize:0.6,jpeg:60", 1).unwrap();
        let manual = ops::resize_down_up(&ops::jpeg_roundtrip(&img, 60).unwrap(), 0.6).unwrap();
        assert_eq!(degrade(&img, &jr).unwrap(), manual);
        assert_ne!(degrade(&img, &jr).unwrap(), degrade(&img, &rj).unwrap());
    }

    #[test]
    fn full_chain_is_seed_deterministic() {
        let img = ramp(64, 64);
        let spec = DegradationSpec::parse_chain("jpeg:60,resize:0.6,blur:5,noise:0.006", 9).unwrap();
        assert_eq!(spec.label(), "jpeg:60,resize:0.6,blur:5,noise:0.006");
        assert_eq!(degrade(&img, &spec).unwrap(), degrade(&img, &spec).unwrap());
    }

    #[test]
    fn invalid_parameters_rejected() {
        for bad in ["jpeg:0", "jpeg:101", "blur:4", "noise:-1", "resize:0", "sharpen:3", "jpeg"] {
            assert!(DegradationSpec::parse_chain(bad, 0).is_err(), "{bad}");
        }
        let spec = DegradationSpec::single(DegradeOp::Blur { kernel: 2 }, 0);
        assert!(degrade(&RgbImage::filled(8, 8, 0.1), &spec).is_err());
    }

    #[test]
    fn mixed_chains_cover_four_orders() {
        let names: Vec<String> = table6_chains().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["JRBN", "RBNJ", "BNJR", "NJRB"]);
    }
}
