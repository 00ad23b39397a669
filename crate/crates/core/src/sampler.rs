//! Label alignment to feature strides and anchor / positive / negative
//! sampling for the contrastive losses.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::rng_from;

/// Ground-truth labels at one feature stride.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count(0) > 0 && self.count(1) > 0
    }
}

/// Nearest-neighbor label alignment with the top-left convention:
/// `labels[i][j] = mask[i * stride][j * stride]`.
pub fn downsample_mask(mask: &Mask, stride: usize) -> Result<LabelMap> {
    if stride == 0 || mask.height % stride != 0 || mask.width % stride != 0 {
        return Err(Error::param(
            "stride",
            format!("{stride} does not divide {}x{}", mask.width, mask.height),
        ));
    }
    let (h, w) = (mask.height / stride, mask.width / stride);
    let labels = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| mask.get(j * stride, i * stride))
        .collect();
    Ok(LabelMap { stride, h, w, labels })
}

/// Labels at every pyramid stride (4, 8, 16, 32).
pub fn pyramid_labels(mask: &Mask) -> Result<[LabelMap; 4]> {
    Ok([
        downsample_mask(mask, 4)?,
        downsample_mask(mask, 8)?,
        downsample_mask(mask, 16)?,
        downsample_mask(mask, 32)?,
    ])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Fresh positive/negative draws for every anchor.
    #[default]
    PerAnchor,
    /// One positive and one negative draw per class, shared by its anchors.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub anchors_per_class: usize,
    pub positives: usize,
    pub negatives: usize,
    pub pool_mode: PoolMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            anchors_per_class: 256,
            positives: 256,
            negatives: 512,
            pool_mode: PoolMode::PerAnchor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Anchor {
    pub cell: usize,
    pub label: u8,
}

/// A cell in one of the pool grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub grid: usize,
    pub cell: usize,
}

/// Up to `per_class` anchors drawn uniformly without replacement from each
/// class present in `labels`; class 0 anchors first.
pub fn sample_anchors(features: &Tensor, labels: &LabelMap, per_class: usize, rng_seed: u64) -> Result<Vec<Anchor>> {
    if (features.h, features.w) != (labels.h, labels.w) {
        return Err(Error::Shape(format!(
            "feature grid {}x{} vs labels {}x{}",
            features.h, features.w, labels.h, labels.w
        )));
    }
    let mut rng = rng_from(rng_seed);
    Ok(draw_anchors(labels, per_class, &mut rng))
}

pub(crate) fn draw_anchors<R: Rng>(labels: &LabelMap, per_class: usize, rng: &mut R) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    for class in [0u8, 1] {
        let cells: Vec<usize> = (0..labels.labels.len()).filter(|&i| labels.labels[i] == class).collect();
        let k = per_class.min(cells.len());
        for i in index::sample(rng, cells.len(), k).into_iter() {
            anchors.push(Anchor { cell: cells[i], label: class });
        }
    }
    anchors
}

/// Per-class candidate cells across the union of pool grids, sorted by
/// `(grid, cell)`.
#[derive(Clone, Debug)]
pub struct CandidateIndex {
    by_class: [Vec<CellRef>; 2],
}

impl CandidateIndex {
    pub fn new(pool_labels: &[&LabelMap]) -> Self {
        let mut by_class = [Vec::new(), Vec::new()];
        for (grid, lm) in pool_labels.iter().enumerate() {
            for (cell, &l) in lm.labels.iter().enumerate() {
                by_class[l as usize].push(CellRef { grid, cell });
            }
        }
        CandidateIndex { by_class }
    }

    pub fn class(&self, label: u8) -> &[CellRef] {
        &self.by_class[label as usize]
    }
}

/// Positive and negative draws for one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pools {
    pub positives: Vec<CellRef>,
    pub negatives: Vec<CellRef>,
}

/// Uniform draw of `k` items without replacement from `items`, skipping the
/// optional excluded item.
fn draw_excluding<R: Rng>(items: &[CellRef], k: usize, exclude: Option<CellRef>, rng: &mut R) -> Vec<CellRef> {
    let skip = exclude.and_then(|e| items.binary_search(&e).ok());
    let n = items.len() - usize::from(skip.is_some());
    let k = k.min(n);
    index::sample(rng, n, k)
        .into_iter()
        .map(|i| match skip {
            Some(s) if i >= s => items[i + 1],
            _ => items[i],
        })
        .collect()
}

pub(crate) fn draw_pools<R: Rng>(
    anchor_label: u8,
    candidates: &CandidateIndex,
    pos_count: usize,
    neg_count: usize,
    exclude: Option<CellRef>,
    rng: &mut R,
) -> Result<Pools> {
    let positives = draw_excluding(candidates.class(anchor_label), pos_count, exclude, rng);
    let negatives = draw_excluding(candidates.class(1 - anchor_label), neg_count, None, rng);
    if positives.is_empty() {
        return Err(Error::DegeneratePool("empty positive pool"));
    }
    if negatives.is_empty() {
        return Err(Error::DegeneratePool("empty negative pool"));
    }
    Ok(Pools { positives, negatives })
}

/// Draws positives from same-class cells and negatives from opposite-class
/// cells across the union of `pool_labels`. `exclude` removes one cell (the
/// anchor itself) from the positive candidates.
pub fn build_pools(
    anchor_label: u8,
    pool_labels: &[&LabelMap],
    pos_count: usize,
    neg_count: usize,
    rng_seed: u64,
    exclude: Option<CellRef>,
) -> Result<Pools> {
    let candidates = CandidateIndex::new(pool_labels);
    let mut rng = rng_from(rng_seed);
    draw_pools(anchor_label, &candidates, pos_count, neg_count, exclude, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labels(h: usize, w: usize, f: impl Fn(usize) -> u8) -> LabelMap {
        LabelMap {
            stride: 1,
            h,
            w,
            labels: (0..h * w).map(f).collect(),
        }
    }

    #[test]
    fn top_left_convention() {
        let mut data = vec![0u8; 16];
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            data[y * 4 + x] = 1;
        }
        let m = Mask::new(4, 4, data).unwrap();
        let lm = downsample_mask(&m, 2).unwrap();
        assert_eq!(lm.labels, vec![1, 0, 0, 0]);
        assert_eq!((lm.h, lm.w), (2, 2));
    }

    #[test]
    fn constant_and_identity_cases() {
        let ones = Mask::new(8, 8, vec![1; 64]).unwrap();
        for s in [1, 2, 4, 8] {
            assert!(downsample_mask(&ones, s).unwrap().labels.iter().all(|&l| l == 1));
        }
        let m = Mask::new(4, 2, vec![1, 0, 0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(downsample_mask(&m, 1).unwrap().labels, m.data);
        assert!(downsample_mask(&m, 3).is_err());
    }

    #[test]
    fn anchors_capped_by_availability() {
        let lm = labels(20, 20, |i| u8::from(i < 100));
        let feats = Tensor::zeros(2, 20, 20);
        let anchors = sample_anchors(&feats, &lm, 256, 0).unwrap();
        assert_eq!(anchors.iter().filter(|a| a.label == 1).count(), 100);
        assert_eq!(anchors.iter().filter(|a| a.label == 0).count(), 256);
        let distinct: HashSet<_> = anchors.iter().collect();
        assert_eq!(distinct.len(), anchors.len());
    }

    #[test]
    fn absent_class_yields_no_anchors() {
        let lm = labels(8, 8, |_| 0);
        let anchors = sample_anchors(&Tensor::zeros(1, 8, 8), &lm, 16, 3).unwrap();
        assert!(anchors.iter().all(|a| a.label == 0));
        assert_eq!(anchors.len(), 16);
    }

    #[test]
    fn anchors_deterministic_given_seed() {
        let lm = labels(16, 16, |i| (i % 3 == 0) as u8);
        let f = Tensor::zeros(1, 16, 16);
        assert_eq!(sample_anchors(&f, &lm, 10, 42).unwrap(), sample_anchors(&f, &lm, 10, 42).unwrap());
        assert_ne!(sample_anchors(&f, &lm, 10, 42).unwrap(), sample_anchors(&f, &lm, 10, 43).unwrap());
        assert!(sample_anchors(&Tensor::zeros(1, 8, 16), &lm, 10, 0).is_err());
    }

    #[test]
    fn degenerate_negative_pool() {
        let lm = labels(2, 5, |_| 1);
        assert!(matches!(build_pools(1, &[&lm], 4, 4, 0, None), Err(Error::DegeneratePool(_))));
    }

    #[test]
    fn positive_count_capped() {
        let lm = labels(2, 2, |i| u8::from(i < 2));
        let p = build_pools(1, &[&lm], 4, 4, 0, None).unwrap();
        assert_eq!(p.positives.len(), 2);
        assert_eq!(p.negatives.len(), 2);
    }

    #[test]
    fn union_of_three_grids() {
        let a = labels(4, 4, |i| u8::from(i < 5));
        let b = labels(4, 4, |i| u8::from(i < 7));
        let c = labels(4, 4, |i| u8::from(i < 9));
        let p = build_pools(1, &[&a, &b, &c], 30, 8, 1, None).unwrap();
        assert_eq!(p.positives.len(), 21);
        let grids: HashSet<usize> = p.positives.iter().map(|r| r.grid).collect();
        assert_eq!(grids.len(), 3);
    }

    #[test]
    fn anchor_excluded_from_its_positive_pool() {
        let lm = labels(3, 3, |i| u8::from(i < 4));
        let me = CellRef { grid: 0, cell: 2 };
        for seed in 0..20 {
            let p = build_pools(1, &[&lm], 10, 10, seed, Some(me)).unwrap();
            assert_eq!(p.positives.len(), 3);
            assert!(!p.positives.contains(&me));
        }
    }

    #[test]
    fn sampled_labels_match_anchor_class() {
        let grids: Vec<LabelMap> = (0..3).map(|g| labels(6, 6, move |i| ((i * 7 + g) % 5 == 0) as u8)).collect();
        let refs: Vec<&LabelMap> = grids.iter().collect();
        for (seed, label) in [(0u64, 0u8), (1, 1), (2, 0), (3, 1)] {
            let p = build_pools(label, &refs, 12, 12, seed, None).unwrap();
            assert!(p.positives.iter().all(|r| grids[r.grid].labels[r.cell] == label));
            assert!(p.negatives.iter().all(|r| grids[r.grid].labels[r.cell] != label));
            let uniq: HashSet<_> = p.positives.iter().collect();
            assert_eq!(uniq.len(), p.positives.len());
        }
    }
}
