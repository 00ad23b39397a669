//! Pixel-level F1/IoU, per-dataset aggregation, sample-weighted averaging
//! across datasets and robustness sweeps.

mod metrics;
mod plot;
mod robustness;
mod separation;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{binarize, f1_iou, f1_iou_with_empty, weighted_average, Confusion};
pub use plot::plot_curves;
pub use robustness::{evaluate_degraded, robustness_sweep, SweepAxis};
pub use separation::{embedding_separation, Separation};

use crate::data::{load_raw_sample, ImageSample, Manifest};
use crate::error::{Error, Result};
use crate::model::LocalizationNet;
use crate::train::predict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub dataset_id: String,
    pub sample_id: String,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset_id: String,
    pub n: usize,
    pub f1: f64,
    pub iou: f64,
}

/// One point of a robustness curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub axis: String,
    /// Degradation label (`none` for the undegraded baseline).
    pub label: String,
    pub parameter: Option<f64>,
    pub n: usize,
    pub mean_f1: f64,
    pub mean_iou: f64,
    /// SHA-256 over the degraded inputs.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub empty_score: f64,
    pub images: Vec<ImageScore>,
    pub datasets: Vec<DatasetRow>,
    pub weighted_f1: f64,
    pub weighted_iou: f64,
    #[serde(default)]
    pub curves: Vec<CurveRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl EvalReport {
    /// Aggregates per-image scores: sorted by (dataset, sample), averaged per
    /// dataset, then sample-weighted across datasets.
    pub fn from_images(mut images: Vec<ImageScore>, threshold: f64, empty_score: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("no images to evaluate".into()));
        }
        images.sort_by(|a, b| (&a.dataset_id, &a.sample_id).cmp(&(&b.dataset_id, &b.sample_id)));
        let mut datasets = Vec::new();
        for group in images.chunk_by(|a, b| a.dataset_id == b.dataset_id) {
            datasets.push(DatasetRow {
                dataset_id: group[0].dataset_id.clone(),
                n: group.len(),
                f1: mean(group.iter().map(|s| s.f1)),
                iou: mean(group.iter().map(|s| s.iou)),
            });
        }
        let (weighted_f1, weighted_iou) = Self::averages(&datasets)?;
        Ok(EvalReport {
            threshold,
            empty_score,
            images,
            datasets,
            weighted_f1,
            weighted_iou,
            curves: Vec::new(),
        })
    }

    fn averages(rows: &[DatasetRow]) -> Result<(f64, f64)> {
        let f1: Vec<(f64, usize)> = rows.iter().map(|r| (r.f1, r.n)).collect();
        let iou: Vec<(f64, usize)> = rows.iter().map(|r| (r.iou, r.n)).collect();
        Ok((weighted_average(&f1)?, weighted_average(&iou)?))
    }

    /// Whether the stored averages equal a recomputation from the stored
    /// dataset rows (bit-exact).
    pub fn is_consistent(&self) -> bool {
        Self::averages(&self.datasets).is_ok_and(|(f, i)| f == self.weighted_f1 && i == self.weighted_iou)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Writes `datasets.csv`, `images.csv` and (when present) `curves.csv`
    /// into `dir`; returns the written paths.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut datasets = self.datasets.iter().map(|r| (r.dataset_id.clone(), r.n, r.f1, r.iou)).collect::<Vec<_>>();
        datasets.push(("weighted_average".into(), self.images.len(), self.weighted_f1, self.weighted_iou));
        written.push(write_rows(&dir.join("datasets.csv"), &["dataset_id", "n", "f1", "iou"], &datasets)?);
        written.push(write_rows(&dir.join("images.csv"), &["dataset_id", "sample_id", "f1", "iou"], &self.images)?);
        if !self.curves.is_empty() {
            written.push(write_rows(
                &dir.join("curves.csv"),
                &["axis", "label", "parameter", "n", "mean_f1", "mean_iou", "digest"],
                &self.curves,
            )?);
        }
        Ok(written)
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<std::path::PathBuf> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| Error::Serde(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Scores one sample at its native resolution.
pub fn score_sample(net: &LocalizationNet, sample: &ImageSample, threshold: f64, empty_score: f64) -> Result<ImageScore> {
    let scores = predict(net, &sample.image)?;
    let pred = binarize(&scores, threshold);
    let (f1, iou) = f1_iou_with_empty(&pred, &sample.mask, empty_score)?;
    Ok(ImageScore {
        dataset_id: sample.dataset_id.clone(),
        sample_id: sample.sample_id.clone(),
        f1,
        iou,
    })
}

/// Evaluates in-memory samples.
pub fn evaluate_samples(net: &LocalizationNet, samples: &[ImageSample], threshold: f64, empty_score: f64) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let images = samples
        .iter()
        .map(|s| score_sample(net, s, threshold, empty_score))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_images(images, threshold, empty_score)
}

/// Loads every manifest at native resolution and evaluates it.
pub fn evaluate(net: &LocalizationNet, manifests: &[Manifest], threshold: f64, empty_score: f64) -> Result<EvalReport> {
    let samples = load_eval_set(manifests)?;
    evaluate_samples(net, &samples, threshold, empty_score)
}

pub fn load_eval_set(manifests: &[Manifest]) -> Result<Vec<ImageSample>> {
    if manifests.iter().all(Manifest::is_empty) {
        return Err(Error::Empty("manifest has no entries".into()));
    }
    manifests.iter().flat_map(|m| &m.entries).map(load_raw_sample).collect()
}
