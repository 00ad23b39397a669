use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::model::{LocalizationNet, Mode};
use crate::sampler::downsample_mask;

/// Mean cosine similarity of projected stride-4 embeddings between cells of
/// the same class and of opposite classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub intra: f64,
    pub inter: f64,
    /// Images that contributed (both classes present at stride 4).
    pub images: usize,
}

impl Separation {
    pub fn margin(&self) -> f64 {
        self.intra - self.inter
    }
}

/// Per image, intra is the mean cosine over unordered same-class pairs
/// (both classes pooled) and inter over cross-class pairs; both are then
/// averaged over images. Uses eval-mode features.
pub fn embedding_separation(net: &LocalizationNet, samples: &[ImageSample]) -> Result<Separation> {
    let (mut intra_sum, mut inter_sum, mut images) = (0.0, 0.0, 0usize);
    for s in samples {
        let pyr = net.forward_backbone(&s.image, Mode::Eval, 0)?;
        let x1 = &net.project_for_contrast(&pyr).levels[0];
        let labels = downsample_mask(&s.mask, 4)?;
        let cells = x1.h * x1.w;
        let mut sums = [vec![0.0f64; x1.c], vec![0.0f64; x1.c]];
        let mut counts = [0usize; 2];
        for cell in 0..cells {
            let v = x1.cell_vector(cell);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            let class = labels.labels[cell] as usize;
            counts[class] += 1;
            for (acc, x) in sums[class].iter_mut().zip(&v) {
                *acc += x / n;
            }
        }
        if counts[0] < 2 || counts[1] < 2 {
            continue;
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        // Σ_{i≠j} uᵢ·uⱼ = |Σu|² − n for unit vectors.
        let same: f64 = (0..2).map(|c| dot(&sums[c], &sums[c]) - counts[c] as f64).sum();
        let same_pairs: f64 = (0..2).map(|c| (counts[c] * (counts[c] - 1)) as f64).sum();
        intra_sum += same / same_pairs;
        inter_sum += dot(&sums[0], &sums[1]) / (counts[0] * counts[1]) as f64;
        images += 1;
    }
    if images == 0 {
        return Err(Error::Empty("no image has both classes at stride 4".into()));
    }
    Ok(Separation {
        intra: intra_sum / images as f64,
        inter: inter_sum / images as f64,
        images,
    })
}
