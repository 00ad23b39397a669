//! Two-stage training: contrastive pretraining of backbone and projections,
//! then focal fine-tuning of the head on frozen eval-mode features, plus
//! prediction at arbitrary input size.

mod log;
mod schedule;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use log::{EpochRecord, TrainLog};
pub use schedule::{cosine_lr, Plateau, Schedule};

use crate::data::{augment, load_sample, ImageSample, Manifest, RgbImage};
use crate::error::{Error, Result};
use crate::losses::{focal_ce_logits, multi_view_loss, ContrastConfig, FocalConfig};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Head, LocalizationNet, Mode, Part, ScoreMap};
use crate::nn::{Adam, Tensor};
use crate::rng::{derive_seed, rng_from};
use crate::sampler::{pyramid_labels, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr_init: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub global_seed: u64,
    /// Apply the random training augmentations to every sample draw.
    pub augment: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Error::Config { key: key.into(), reason };
        if !(self.lr_init > 0.0) {
            return Err(bad("lr_init", format!("{} must be > 0", self.lr_init)));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be positive".into()));
        }
        match (self.stage, &self.schedule) {
            (1, Schedule::Plateau { .. }) | (2, Schedule::Cosine { .. }) => Ok(()),
            (1 | 2, _) => Err(bad("schedule", "stage 1 uses plateau, stage 2 cosine".into())),
            (s, _) => Err(bad("stage", format!("{s} is not 1 or 2"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub train: TrainConfig,
    pub contrast: ContrastConfig,
    pub sampler: SamplerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub train: TrainConfig,
    pub focal: FocalConfig,
}

/// Result of one training stage. The network passed in holds the weights
/// after the final epoch.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_loss: f64,
}

pub const STAGE1_LAST: &str = "stage1_last.ckpt";
pub const STAGE1_BEST: &str = "stage1_best.ckpt";
pub const STAGE2_LAST: &str = "stage2_last.ckpt";
pub const STAGE2_BEST: &str = "stage2_best.ckpt";

/// Resizes a sample to the square network input (bilinear image, nearest
/// mask) unless it already matches.
pub fn fit_sample(sample: &ImageSample, size: usize) -> ImageSample {
    if sample.image.width == size && sample.image.height == size {
        return sample.clone();
    }
    ImageSample {
        image: sample.image.resize_bilinear(size, size),
        mask: sample.mask.resize_nearest(size, size),
        dataset_id: sample.dataset_id.clone(),
        sample_id: sample.sample_id.clone(),
    }
}

/// Loads every manifest entry at the network input size.
pub fn load_training_set(manifest: &Manifest, input_size: usize) -> Result<Vec<ImageSample>> {
    if manifest.is_empty() {
        return Err(Error::Empty("manifest has no entries".into()));
    }
    manifest.entries.iter().map(|e| load_sample(e, input_size)).collect()
}

fn sample_seed(global: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(global, &[epoch as u64, index as u64])
}

/// Order of samples for one epoch.
fn epoch_order(n: usize, global: u64, stage: u8, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(global, &[0x5348_5546, u64::from(stage), epoch as u64]));
    order.shuffle(&mut rng);
    order
}

fn draw(sample: &ImageSample, cfg: &TrainConfig, epoch: usize, index: usize) -> ImageSample {
    if cfg.augment {
        augment(sample, sample_seed(cfg.global_seed, epoch, index))
    } else {
        sample.clone()
    }
}

fn check_inputs(net: &LocalizationNet, samples: &[ImageSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let s = net.cfg.input_size;
    if let Some(bad) = samples.iter().find(|x| x.image.width != s || x.image.height != s) {
        return Err(Error::Shape(format!(
            "sample {} is {}x{}, expected {s}x{s} (see fit_sample)",
            bad.sample_id, bad.image.width, bad.image.height
        )));
    }
    Ok(())
}

fn meta_for(net: &LocalizationNet, stage: u8, seed: u64, epoch: usize, config: &impl Serialize, log: &TrainLog) -> CheckpointMeta {
    CheckpointMeta {
        stage,
        seed,
        epoch: Some(epoch),
        head_initialized: net.head_initialized(),
        model: net.cfg.clone(),
        config: serde_json::to_value(config).expect("config serializes"),
        loss_digest: log.loss_digest(),
    }
}

fn persist(
    out_dir: Option<&Path>,
    net: &LocalizationNet,
    meta: &CheckpointMeta,
    log: &TrainLog,
    names: (&str, &str, &str),
    is_best: bool,
) -> Result<()> {
    let Some(dir) = out_dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&dir.join(names.0), net, meta)?;
    if is_best {
        save_checkpoint(&dir.join(names.1), net, meta)?;
    }
    log.write_csv(&dir.join(names.2))
}

/// Per-image stage-1 step: dual pass, projection, multi-view loss, and
/// backpropagation into backbone and projection gradients. Returns `None`
/// for degenerate images.
fn stage1_image(
    net: &mut LocalizationNet,
    sample: &ImageSample,
    cfg: &Stage1Config,
    seed: u64,
) -> Result<(Option<f64>, usize, usize)> {
    let labels = pyramid_labels(&sample.mask)?;
    let input = net.input_tensor(&sample.image)?;
    let dual_needed = cfg.contrast.use_cross_modality;
    let (pyr_a, cache_a) = net.backbone_pass(&input, Mode::Train, derive_seed(seed, &[0]));
    let (proj_a, pcache_a) = net.projections.forward(&pyr_a);
    let second = dual_needed.then(|| {
        let (pyr_b, cache_b) = net.backbone_pass(&input, Mode::Train, derive_seed(seed, &[1]));
        let (proj_b, pcache_b) = net.projections.forward(&pyr_b);
        (cache_b, proj_b, pcache_b)
    });
    let out = multi_view_loss(
        &proj_a,
        second.as_ref().map(|s| &s.1),
        &labels,
        &cfg.contrast,
        &cfg.sampler,
        derive_seed(seed, &[2]),
        true,
    )?;
    let (retained, sampled) = (out.retained(), out.sampled());
    if out.is_degenerate() {
        return Ok((None, retained, sampled));
    }
    let grad = out.grad.expect("requested");
    let g_a = net.projections.backward(&pcache_a, &grad);
    net.backbone.backward(&cache_a, g_a);
    if let (Some((cache_b, _, pcache_b)), Some(dg)) = (second, out.dual_grad) {
        let g_b = net.projections.backward(&pcache_b, &dg);
        net.backbone.backward(&cache_b, g_b);
    }
    Ok((Some(out.total), retained, sampled))
}

/// Optimizes the multi-view contrastive total over backbone and projection
/// weights with the head frozen. Writes `stage1_last.ckpt` every epoch,
/// `stage1_best.ckpt` at each new best epoch-mean loss and `stage1_log.csv`
/// when `out_dir` is given.
pub fn stage1_pretrain(
    net: &mut LocalizationNet,
    samples: &[ImageSample],
    cfg: &Stage1Config,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<StageOutcome> {
    cfg.train.validate()?;
    if cfg.train.stage != 1 {
        return Err(Error::Config {
            key: "stage".into(),
            reason: "stage1_pretrain needs a stage-1 TrainConfig".into(),
        });
    }
    cfg.contrast.validate()?;
    if cfg.contrast.use_cross_modality && net.cfg.backbone.dropout_rate == 0.0 {
        return Err(Error::Config {
            key: "dropout_rate".into(),
            reason: "must be > 0 while use_cross_modality is enabled".into(),
        });
    }
    check_inputs(net, samples)?;
    let Schedule::Plateau { factor, patience, min_lr } = cfg.train.schedule else {
        unreachable!("validated above")
    };

    net.set_trainable(Part::Backbone, true);
    net.set_trainable(Part::Projections, true);
    net.set_trainable(Part::Head, false);
    net.zero_grad();
    let mut adam = Adam::default();
    let mut plateau = Plateau::new(cfg.train.lr_init, factor, patience, min_lr);
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let lr = plateau.lr;
        let order = epoch_order(samples.len(), cfg.train.global_seed, 1, epoch);
        let (mut loss_sum, mut counted, mut retained, mut sampled) = (0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.train.batch_size) {
            let mut in_batch = 0usize;
            for &i in batch {
                let sample = draw(&samples[i], &cfg.train, epoch, i);
                let seed = derive_seed(sample_seed(cfg.train.global_seed, epoch, i), &[1]);
                let (loss, r, s) = stage1_image(net, &sample, cfg, seed)?;
                retained += r;
                sampled += s;
                if let Some(l) = loss {
                    loss_sum += l;
                    counted += 1;
                    in_batch += 1;
                }
            }
            if in_batch > 0 {
                net.optimizer_step(&mut adam, lr, 1.0 / in_batch as f32);
            }
        }
        if counted == 0 {
            return Err(Error::Training(format!(
                "epoch {epoch}: every image was degenerate at feature resolution (no anchor had both pools); \
                 stage 1 needs tampered images whose masks contain both classes at stride 4"
            )));
        }
        let epoch_loss = loss_sum / counted as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training(format!("epoch {epoch}: non-finite loss")));
        }
        plateau.step(epoch_loss);
        let record = EpochRecord {
            epoch,
            loss: epoch_loss,
            lr,
            retained_frac: Some(if sampled > 0 { retained as f64 / sampled as f64 } else { 0.0 }),
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.push(record);
        let is_best = epoch_loss < best;
        if is_best {
            best = epoch_loss;
            best_epoch = epoch;
        }
        let meta = meta_for(net, 1, cfg.train.global_seed, epoch, cfg, &log);
        persist(out_dir, net, &meta, &log, (STAGE1_LAST, STAGE1_BEST, "stage1_log.csv"), is_best)?;
    }
    Ok(StageOutcome {
        log,
        best_epoch,
        best_loss: best,
    })
}

/// Loads a checkpoint for stage 2, rejecting anything but stage 1 output.
pub fn load_stage1_checkpoint(path: &Path) -> Result<LocalizationNet> {
    let (net, meta) = load_checkpoint(path)?;
    if meta.stage != 1 {
        return Err(Error::Checkpoint(format!(
            "{}: expected a stage-1 checkpoint, found stage {}",
            path.display(),
            meta.stage
        )));
    }
    Ok(net)
}

/// Head input for one sample from the frozen backbone in eval mode.
fn head_input(net: &LocalizationNet, image: &RgbImage) -> Result<Tensor> {
    let pyr = net.forward_backbone(image, Mode::Eval, 0)?;
    Ok(Head::concat_input(&pyr))
}

/// Trains the head with the focal loss on frozen eval-mode features under a
/// per-step cosine schedule. Backbone and projections are frozen and never
/// change. A fresh head first fits its input standardization to the
/// un-augmented training features. Marks the head initialized when done.
pub fn stage2_finetune(
    net: &mut LocalizationNet,
    samples: &[ImageSample],
    cfg: &Stage2Config,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<StageOutcome> {
    cfg.train.validate()?;
    if cfg.train.stage != 2 {
        return Err(Error::Config {
            key: "stage".into(),
            reason: "stage2_finetune needs a stage-2 TrainConfig".into(),
        });
    }
    cfg.focal.validate()?;
    check_inputs(net, samples)?;
    let Schedule::Cosine { min_lr } = cfg.train.schedule else {
        unreachable!("validated above")
    };

    net.set_trainable(Part::Backbone, false);
    net.set_trainable(Part::Projections, false);
    net.set_trainable(Part::Head, true);
    net.zero_grad();

    // The backbone is frozen, so un-augmented features never change.
    let plain: Vec<Tensor> = samples.iter().map(|s| head_input(net, &s.image)).collect::<Result<_>>()?;
    if !net.head_initialized() {
        net.head.fit_input_norm(&plain);
    }
    let cached = (!cfg.train.augment).then_some(plain);

    let batches_per_epoch = samples.len().div_ceil(cfg.train.batch_size);
    let total_steps = cfg.train.epochs * batches_per_epoch;
    let mut step = 0usize;
    let mut adam = Adam::default();
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let order = epoch_order(samples.len(), cfg.train.global_seed, 2, epoch);
        let mut loss_sum = 0.0;
        let mut lr = cfg.train.lr_init;
        for batch in order.chunks(cfg.train.batch_size) {
            lr = cosine_lr(cfg.train.lr_init, min_lr, step, total_steps);
            for &i in batch {
                let (input, mask) = match &cached {
                    Some(c) => (c[i].clone(), samples[i].mask.clone()),
                    None => {
                        let s = draw(&samples[i], &cfg.train, epoch, i);
                        (head_input(net, &s.image)?, s.mask)
                    }
                };
                let (_, cache, logits) = net.head.forward_concat(&input);
                let (loss, grad) = focal_ce_logits(&logits.data, &mask, &cfg.focal)?;
                let grad = Tensor::from_vec(1, logits.h, logits.w, grad);
                net.head.backward(&cache, &grad);
                loss_sum += loss;
            }
            net.optimizer_step(&mut adam, lr, 1.0 / batch.len() as f32);
            step += 1;
        }
        let epoch_loss = loss_sum / samples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training(format!("epoch {epoch}: non-finite loss")));
        }
        net.mark_head_initialized();
        let record = EpochRecord {
            epoch,
            loss: epoch_loss,
            lr,
            retained_frac: None,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.push(record);
        let is_best = epoch_loss < best;
        if is_best {
            best = epoch_loss;
            best_epoch = epoch;
        }
        let meta = meta_for(net, 2, cfg.train.global_seed, epoch, cfg, &log);
        persist(out_dir, net, &meta, &log, (STAGE2_LAST, STAGE2_BEST, "stage2_log.csv"), is_best)?;
    }
    Ok(StageOutcome {
        log,
        best_epoch,
        best_loss: best,
    })
}

/// Loads a checkpoint for prediction; stage-1 checkpoints are rejected.
pub fn load_predictor(path: &Path) -> Result<LocalizationNet> {
    let (net, meta) = load_checkpoint(path)?;
    if !net.head_initialized() {
        return Err(Error::HeadUninitialized { stage: meta.stage });
    }
    Ok(net)
}

/// Eval-mode score map at the image's native resolution: the image is
/// resized to the network input and the scores are resized back
/// bilinearly.
pub fn predict(net: &LocalizationNet, image: &RgbImage) -> Result<ScoreMap> {
    if !net.head_initialized() {
        return Err(Error::HeadUninitialized { stage: 1 });
    }
    let s = net.cfg.input_size;
    let input = if image.width == s && image.height == s {
        image.clone()
    } else {
        image.resize_bilinear(s, s)
    };
    let pyr = net.forward_backbone(&input, Mode::Eval, 0)?;
    let scores = net.forward_head(&pyr)?;
    Ok(scores.resize(image.width, image.height))
}
