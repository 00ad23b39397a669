use sha2::{Digest, Sha256};

use super::{score_sample, CurveRow, EvalReport};
use crate::data::{degrade, DegradationSpec, DegradeOp, ImageSample};
use crate::error::{Error, Result};
use crate::model::LocalizationNet;
use crate::rng::derive_seed;

/// Degradation axis of a robustness sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Jpeg(Vec<u8>),
    Blur(Vec<usize>),
    /// Noise variances.
    Noise(Vec<f64>),
    Resize(Vec<f64>),
    /// Named chains applied as units.
    Chains(Vec<(String, Vec<DegradeOp>)>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Jpeg(_) => "jpeg",
            SweepAxis::Blur(_) => "blur",
            SweepAxis::Noise(_) => "noise",
            SweepAxis::Resize(_) => "resize",
            SweepAxis::Chains(_) => "chain",
        }
    }

    /// `(label, parameter, chain)` for each point.
    pub fn points(&self) -> Vec<(String, Option<f64>, Vec<DegradeOp>)> {
        let single = |op: DegradeOp, p: f64| (op.to_string(), Some(p), vec![op]);
        match self {
            SweepAxis::Jpeg(v) => v.iter().map(|&q| single(DegradeOp::Jpeg { quality: q }, f64::from(q))).collect(),
            SweepAxis::Blur(v) => v.iter().map(|&k| single(DegradeOp::Blur { kernel: k }, k as f64)).collect(),
            SweepAxis::Noise(v) => v.iter().map(|&s| single(DegradeOp::Noise { variance: s }, s)).collect(),
            SweepAxis::Resize(v) => v.iter().map(|&f| single(DegradeOp::Resize { factor: f }, f)).collect(),
            SweepAxis::Chains(v) => v.iter().map(|(name, chain)| (name.clone(), None, chain.clone())).collect(),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SweepAxis::Jpeg(v) => v.is_empty(),
            SweepAxis::Blur(v) => v.is_empty(),
            SweepAxis::Noise(v) | SweepAxis::Resize(v) => v.is_empty(),
            SweepAxis::Chains(v) => v.is_empty(),
        }
    }
}

/// Degrades every sample with `chain` (per-sample seed derived from `seed`
/// and the sample position), evaluates, and returns the curve point. An
/// empty chain leaves the inputs untouched.
pub fn evaluate_degraded(
    net: &LocalizationNet,
    samples: &[ImageSample],
    chain: &[DegradeOp],
    seed: u64,
    threshold: f64,
    empty_score: f64,
) -> Result<(EvalReport, String)> {
    let mut digest = Sha256::new();
    let mut images = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let spec = DegradationSpec::new(chain.to_vec(), derive_seed(seed, &[i as u64]));
        let degraded = ImageSample {
            image: degrade(&s.image, &spec)?,
            ..s.clone()
        };
        for v in &degraded.image.data {
            digest.update(v.to_bits().to_le_bytes());
        }
        images.push(score_sample(net, &degraded, threshold, empty_score)?);
    }
    let report = EvalReport::from_images(images, threshold, empty_score)?;
    let hex = digest.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((report, hex))
}

/// Baseline row followed by one row per axis point.
pub fn robustness_sweep(
    net: &LocalizationNet,
    samples: &[ImageSample],
    axis: &SweepAxis,
    seed: u64,
    threshold: f64,
    empty_score: f64,
) -> Result<Vec<CurveRow>> {
    if axis.is_empty() {
        return Err(Error::Empty(format!("{} axis has no points", axis.name())));
    }
    let points = axis.points();
    for (_, _, chain) in &points {
        for op in chain {
            op.validate()?;
        }
    }
    let mut rows = Vec::with_capacity(points.len() + 1);
    let baseline = std::iter::once(("none".to_string(), None, Vec::new()));
    for (label, parameter, chain) in baseline.chain(points) {
        let (report, digest) = evaluate_degraded(net, samples, &chain, seed, threshold, empty_score)?;
        rows.push(CurveRow {
            axis: axis.name().into(),
            label,
            parameter,
            n: report.images.len(),
            mean_f1: report.weighted_f1,
            mean_iou: report.weighted_iou,
            digest,
        });
    }
    Ok(rows)
}
