use rand::Rng;

use super::contrast::similarity_kernel;
use super::ContrastConfig;
use crate::error::{Error, Result};
use crate::model::FeaturePyramid;
use crate::nn::Tensor;
use crate::rng::{derive_seed, rng_from};
use crate::sampler::{draw_anchors, draw_pools, CandidateIndex, CellRef, LabelMap, PoolMode, Pools, SamplerConfig};

/// Whether an anchor may appear in its own positive pool. Only meaningful
/// when pool grid 0 is the anchor grid itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfExclusion {
    Exclude,
    Allow,
}

/// Cells used for one retained anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorSet {
    pub anchor: usize,
    pub label: u8,
    pub positives: Vec<CellRef>,
    pub negatives: Vec<CellRef>,
}

#[derive(Clone, Debug)]
pub struct ContrastTermOutput {
    /// Mean over retained anchors; 0 when none is retained.
    pub loss: f64,
    pub retained: usize,
    pub sampled: usize,
    pub sets: Vec<AnchorSet>,
    /// Gradient of `loss` w.r.t. the anchor grid (when requested).
    pub anchor_grad: Option<Tensor>,
    /// Gradient of `loss` w.r.t. each pool grid (when requested).
    pub pool_grads: Vec<Tensor>,
}

/// Cell-major vectors of one grid, unit-normalized when requested.
struct Prepared {
    d: usize,
    h: usize,
    w: usize,
    vecs: Vec<f64>,
    norms: Vec<f64>,
}

impl Prepared {
    fn new(t: &Tensor, normalize: bool) -> Self {
        let cells = t.h * t.w;
        let mut vecs = vec![0.0; cells * t.c];
        for k in 0..t.c {
            for (cell, &v) in t.plane(k).iter().enumerate() {
                vecs[cell * t.c + k] = f64::from(v);
            }
        }
        let mut norms = vec![1.0; cells];
        if normalize {
            for cell in 0..cells {
                let v = &mut vecs[cell * t.c..(cell + 1) * t.c];
                // A zero embedding cannot be normalized; the clamp keeps it at zero.
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x /= n);
                norms[cell] = n;
            }
        }
        Prepared {
            d: t.c,
            h: t.h,
            w: t.w,
            vecs,
            norms,
        }
    }

    fn vec(&self, cell: usize) -> &[f64] {
        &self.vecs[cell * self.d..(cell + 1) * self.d]
    }

    /// Maps a cell-major gradient w.r.t. the prepared vectors back to a CHW
    /// gradient w.r.t. the raw grid.
    fn pull_back(&self, g: &[f64], normalize: bool) -> Tensor {
        let cells = self.h * self.w;
        let mut out = Tensor::zeros(self.d, self.h, self.w);
        for cell in 0..cells {
            let gv = &g[cell * self.d..(cell + 1) * self.d];
            if gv.iter().all(|&x| x == 0.0) {
                continue;
            }
            let u = self.vec(cell);
            let radial: f64 = if normalize { gv.iter().zip(u).map(|(a, b)| a * b).sum() } else { 0.0 };
            for k in 0..self.d {
                let val = (gv[k] - radial * u[k]) / self.norms[cell];
                out.data[k * cells + cell] = val as f32;
            }
        }
        out
    }
}

fn check_grid(t: &Tensor, lm: &LabelMap, what: &str) -> Result<()> {
    if (t.h, t.w) != (lm.h, lm.w) {
        return Err(Error::Shape(format!(
            "{what}: grid {}x{} vs labels {}x{}",
            t.h, t.w, lm.h, lm.w
        )));
    }
    Ok(())
}

/// Draws pools for every anchor, honoring the pool mode. Anchors whose
/// pools come out empty are dropped.
fn draw_sets<R: Rng>(
    anchors: &[crate::sampler::Anchor],
    candidates: &CandidateIndex,
    sampler: &SamplerConfig,
    exclusion: SelfExclusion,
    rng: &mut R,
) -> Vec<AnchorSet> {
    let self_ref = |cell: usize| match exclusion {
        SelfExclusion::Exclude => Some(CellRef { grid: 0, cell }),
        SelfExclusion::Allow => None,
    };
    let mut sets = Vec::with_capacity(anchors.len());
    match sampler.pool_mode {
        PoolMode::PerAnchor => {
            for a in anchors {
                if let Ok(Pools { positives, negatives }) =
                    draw_pools(a.label, candidates, sampler.positives, sampler.negatives, self_ref(a.cell), rng)
                {
                    sets.push(AnchorSet {
                        anchor: a.cell,
                        label: a.label,
                        positives,
                        negatives,
                    });
                }
            }
        }
        PoolMode::Shared => {
            // One extra positive so that removing the anchor keeps the count.
            let extra = usize::from(exclusion == SelfExclusion::Exclude);
            let shared: [Option<Pools>; 2] = [0u8, 1].map(|label| {
                draw_pools(label, candidates, sampler.positives + extra, sampler.negatives, None, rng).ok()
            });
            for a in anchors {
                let Some(pools) = &shared[a.label as usize] else { continue };
                let mut positives: Vec<CellRef> = match self_ref(a.cell) {
                    Some(me) => pools.positives.iter().copied().filter(|&c| c != me).collect(),
                    None => pools.positives.clone(),
                };
                positives.truncate(sampler.positives);
                if positives.is_empty() {
                    continue;
                }
                sets.push(AnchorSet {
                    anchor: a.cell,
                    label: a.label,
                    positives,
                    negatives: pools.negatives.clone(),
                });
            }
        }
    }
    sets
}

/// One contrastive view for one image: anchors from `anchor_grid`, pools from
/// the union of `pool_grids`. With [`SelfExclusion::Exclude`], pool grid 0
/// must be the anchor grid.
#[allow(clippy::too_many_arguments)]
pub fn contrast_term(
    anchor_grid: &Tensor,
    anchor_labels: &LabelMap,
    pool_grids: &[&Tensor],
    pool_labels: &[&LabelMap],
    exclusion: SelfExclusion,
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
    want_grad: bool,
) -> Result<ContrastTermOutput> {
    check_grid(anchor_grid, anchor_labels, "anchor grid")?;
    if pool_grids.len() != pool_labels.len() || pool_grids.is_empty() {
        return Err(Error::Shape("pool grids and pool labels must pair up".into()));
    }
    for (g, l) in pool_grids.iter().zip(pool_labels) {
        check_grid(g, l, "pool grid")?;
        if g.c != anchor_grid.c {
            return Err(Error::Shape(format!("pool dimension {} vs anchor {}", g.c, anchor_grid.c)));
        }
    }

    let mut rng = rng_from(rng_seed);
    let anchors = draw_anchors(anchor_labels, sampler.anchors_per_class, &mut rng);
    let candidates = CandidateIndex::new(pool_labels);
    let sets = draw_sets(&anchors, &candidates, sampler, exclusion, &mut rng);

    let normalize = cfg.normalize_embeddings;
    let anchor_prep = Prepared::new(anchor_grid, normalize);
    let pool_prep: Vec<Prepared> = pool_grids.iter().map(|g| Prepared::new(g, normalize)).collect();
    let d = anchor_grid.c;
    let mut ga = if want_grad { vec![0.0; anchor_grid.h * anchor_grid.w * d] } else { Vec::new() };
    let mut gp: Vec<Vec<f64>> = if want_grad {
        pool_grids.iter().map(|g| vec![0.0; g.h * g.w * d]).collect()
    } else {
        Vec::new()
    };

    let retained = sets.len();
    let inv = if retained > 0 { 1.0 / retained as f64 } else { 0.0 };
    let mut total = 0.0;
    for set in &sets {
        let a = anchor_prep.vec(set.anchor);
        let pos: Vec<&[f64]> = set.positives.iter().map(|r| pool_prep[r.grid].vec(r.cell)).collect();
        let neg: Vec<&[f64]> = set.negatives.iter().map(|r| pool_prep[r.grid].vec(r.cell)).collect();
        let (loss, coef_p, coef_n) = similarity_kernel(a, &pos, &neg, cfg.temperature, cfg.supcon_denominator);
        total += loss;
        if !want_grad {
            continue;
        }
        let ga_cell = &mut ga[set.anchor * d..(set.anchor + 1) * d];
        for (refs, coefs, vecs) in [(&set.positives, &coef_p, &pos), (&set.negatives, &coef_n, &neg)] {
            for ((r, &c), v) in refs.iter().zip(coefs.iter()).zip(vecs.iter()) {
                let c = c * inv;
                let gcell = &mut gp[r.grid][r.cell * d..(r.cell + 1) * d];
                for k in 0..d {
                    ga_cell[k] += c * v[k];
                    gcell[k] += c * a[k];
                }
            }
        }
    }

    let (anchor_grad, pool_grads) = if want_grad {
        (
            Some(anchor_prep.pull_back(&ga, normalize)),
            pool_prep.iter().zip(&gp).map(|(p, g)| p.pull_back(g, normalize)).collect(),
        )
    } else {
        (None, Vec::new())
    };
    Ok(ContrastTermOutput {
        loss: total * inv,
        retained,
        sampled: anchors.len(),
        sets,
        anchor_grad,
        pool_grads,
    })
}

/// Anchors and pools both from X₁; an anchor never pairs with itself.
pub fn within_image_loss(
    pyramid: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
) -> Result<ContrastTermOutput> {
    within(pyramid, labels, cfg, sampler, rng_seed, false)
}

fn within(
    pyramid: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
    want_grad: bool,
) -> Result<ContrastTermOutput> {
    let x1 = &pyramid.levels[0];
    contrast_term(
        x1,
        &labels[0],
        &[x1],
        &[&labels[0]],
        SelfExclusion::Exclude,
        cfg,
        sampler,
        derive_seed(rng_seed, &[1]),
        want_grad,
    )
}

/// Anchors from X₁, pools from the union X₂ ∪ X₃ ∪ X₄.
pub fn cross_scale_loss(
    pyramid: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
) -> Result<ContrastTermOutput> {
    cross_scale(pyramid, labels, cfg, sampler, rng_seed, false)
}

fn cross_scale(
    pyramid: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
    want_grad: bool,
) -> Result<ContrastTermOutput> {
    let l = &pyramid.levels;
    contrast_term(
        &l[0],
        &labels[0],
        &[&l[1], &l[2], &l[3]],
        &[&labels[1], &labels[2], &labels[3]],
        SelfExclusion::Allow,
        cfg,
        sampler,
        derive_seed(rng_seed, &[2]),
        want_grad,
    )
}

/// Anchors from X₁, pools from the second pass X̂₁. Self-pairs are allowed
/// since X̂₁ is a different view of the same cell.
pub fn cross_modality_loss(
    pyramid: &FeaturePyramid,
    dual: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
) -> Result<ContrastTermOutput> {
    cross_modality(pyramid, dual, labels, cfg, sampler, rng_seed, false)
}

fn cross_modality(
    pyramid: &FeaturePyramid,
    dual: &FeaturePyramid,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
    want_grad: bool,
) -> Result<ContrastTermOutput> {
    contrast_term(
        &pyramid.levels[0],
        &labels[0],
        &[&dual.levels[0]],
        &[&labels[0]],
        SelfExclusion::Allow,
        cfg,
        sampler,
        derive_seed(rng_seed, &[3]),
        want_grad,
    )
}

/// All enabled views for one image, with gradients w.r.t. both projected
/// pyramids.
#[derive(Clone, Debug)]
pub struct MultiViewOutput {
    pub within: Option<ContrastTermOutput>,
    pub cross_scale: Option<ContrastTermOutput>,
    pub cross_modality: Option<ContrastTermOutput>,
    pub total: f64,
    /// Gradient w.r.t. the first projected pyramid.
    pub grad: Option<[Tensor; 4]>,
    /// Gradient w.r.t. the dual projected pyramid (only X̂₁ is nonzero).
    pub dual_grad: Option<[Tensor; 4]>,
}

impl MultiViewOutput {
    fn terms(&self) -> impl Iterator<Item = &ContrastTermOutput> {
        [&self.within, &self.cross_scale, &self.cross_modality].into_iter().flatten()
    }

    pub fn retained(&self) -> usize {
        self.terms().map(|t| t.retained).sum()
    }

    pub fn sampled(&self) -> usize {
        self.terms().map(|t| t.sampled).sum()
    }

    /// No enabled view retained an anchor: the image drops out of the batch
    /// mean.
    pub fn is_degenerate(&self) -> bool {
        self.retained() == 0
    }
}

fn zeros_like(p: &FeaturePyramid) -> [Tensor; 4] {
    p.levels.clone().map(|t| Tensor::zeros(t.c, t.h, t.w))
}

/// Evaluates every enabled view. `dual` is required when the cross-modality
/// view is enabled.
pub fn multi_view_loss(
    pyramid: &FeaturePyramid,
    dual: Option<&FeaturePyramid>,
    labels: &[LabelMap; 4],
    cfg: &ContrastConfig,
    sampler: &SamplerConfig,
    rng_seed: u64,
    want_grad: bool,
) -> Result<MultiViewOutput> {
    cfg.validate()?;
    let mut grad = want_grad.then(|| zeros_like(pyramid));
    let mut dual_grad = None;

    let within = if cfg.use_within {
        let out = within(pyramid, labels, cfg, sampler, rng_seed, want_grad)?;
        if let Some(g) = grad.as_mut() {
            g[0].add_assign(out.anchor_grad.as_ref().expect("requested"));
            g[0].add_assign(&out.pool_grads[0]);
        }
        Some(out)
    } else {
        None
    };
    let cross_scale = if cfg.use_cross_scale {
        let out = cross_scale(pyramid, labels, cfg, sampler, rng_seed, want_grad)?;
        if let Some(g) = grad.as_mut() {
            g[0].add_assign(out.anchor_grad.as_ref().expect("requested"));
            for i in 0..3 {
                g[i + 1].add_assign(&out.pool_grads[i]);
            }
        }
        Some(out)
    } else {
        None
    };
    let cross_modality = if cfg.use_cross_modality {
        let dual = dual.ok_or_else(|| Error::param("dual", "cross-modality view needs a second pass"))?;
        let out = cross_modality(pyramid, dual, labels, cfg, sampler, rng_seed, want_grad)?;
        if let Some(g) = grad.as_mut() {
            g[0].add_assign(out.anchor_grad.as_ref().expect("requested"));
            let mut dg = zeros_like(dual);
            dg[0] = out.pool_grads[0].clone();
            dual_grad = Some(dg);
        }
        Some(out)
    } else {
        None
    };
    let total = super::total_contrastive_loss(
        within.as_ref().map_or(0.0, |t| t.loss),
        cross_scale.as_ref().map_or(0.0, |t| t.loss),
        cross_modality.as_ref().map_or(0.0, |t| t.loss),
        cfg,
    );
    Ok(MultiViewOutput {
        within,
        cross_scale,
        cross_modality,
        total,
        grad,
        dual_grad,
    })
}
