//! Backbone pyramid, contrast projections and localization head.

mod backbone;
mod checkpoint;
mod head;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backbone::{Backbone, BackboneCache};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use head::{Head, HeadCache};

use crate::data::RgbImage;
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv2d, ConvCache, Param, Tensor};
use crate::rng::{derive_seed, rng_from};

/// Feature strides of the four pyramid levels.
pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Four per-scale feature grids from one backbone pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 4],
}

impl FeaturePyramid {
    pub fn shapes(&self) -> [(usize, usize, usize); 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].shape())
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(Tensor::is_finite)
    }
}

/// Per-pixel tamper probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub probs: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != width * height {
            return Err(Error::Shape(format!("{} scores for {width}x{height}", probs.len())));
        }
        Ok(ScoreMap { width, height, probs })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.probs[y * self.width + x]
    }

    /// Bilinear resize to a new resolution.
    pub fn resize(&self, width: usize, height: usize) -> ScoreMap {
        let t = Tensor::from_vec(1, self.height, self.width, self.probs.clone());
        let r = crate::nn::bilinear_resize(&t, height, width);
        ScoreMap {
            width,
            height,
            probs: r.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout disabled; output deterministic.
    Eval,
}

/// Parameter groups that can be frozen independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Backbone,
    Projections,
    Head,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Backbone, Part::Projections, Part::Head];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Backbone => "backbone",
            Part::Projections => "projections",
            Part::Head => "head",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Part::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::param("part", format!("unknown part `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneSize {
    Small,
    Base,
}

impl BackboneSize {
    pub fn channels(self) -> [usize; 4] {
        match self {
            BackboneSize::Small => [16, 32, 48, 64],
            BackboneSize::Base => [32, 64, 96, 128],
        }
    }

    pub fn fusion_stages(self) -> usize {
        match self {
            BackboneSize::Small => 2,
            BackboneSize::Base => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub size: BackboneSize,
    pub channels: [usize; 4],
    pub stem_channels: usize,
    pub fusion_stages: usize,
    pub dropout_rate: f64,
    /// Common embedding dimension of the contrast projections.
    pub contrast_dim: usize,
}

impl BackboneConfig {
    pub fn of_size(size: BackboneSize) -> Self {
        BackboneConfig {
            size,
            channels: size.channels(),
            stem_channels: 16,
            fusion_stages: size.fusion_stages(),
            dropout_rate: 0.1,
            contrast_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param("dropout_rate", format!("{} outside [0, 1)", self.dropout_rate)));
        }
        if self.contrast_dim == 0 || self.channels.contains(&0) || self.stem_channels == 0 {
            return Err(Error::param("channels", "all widths must be positive"));
        }
        Ok(())
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::of_size(BackboneSize::Small)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head_hidden: usize,
    /// Square network input side; must be a multiple of 32.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head_hidden: 256,
            input_size: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::param("input_size", format!("{} is not a positive multiple of 32", self.input_size)));
        }
        if self.head_hidden == 0 {
            return Err(Error::param("head_hidden", "must be positive"));
        }
        Ok(())
    }
}

/// Per-scale linear maps to the common contrast dimension.
#[derive(Clone, Debug)]
pub struct Projections {
    pub convs: Vec<Conv2d>,
}

impl Projections {
    pub fn new<R: rand::Rng>(channels: [usize; 4], dim: usize, rng: &mut R) -> Self {
        Projections {
            convs: channels.iter().map(|&c| Conv2d::new(c, dim, 1, 1, rng)).collect(),
        }
    }

    /// Identity maps; every level must already have `dim` channels.
    pub fn identity(dim: usize) -> Self {
        let convs = (0..4)
            .map(|_| {
                let mut conv = Conv2d::zeros_1x1(dim, dim);
                for i in 0..dim {
                    conv.weight.value[i * dim + i] = 1.0;
                }
                conv
            })
            .collect();
        Projections { convs }
    }

    pub fn forward(&self, pyr: &FeaturePyramid) -> (FeaturePyramid, Vec<ConvCache>) {
        let mut caches = Vec::with_capacity(4);
        let levels = [0, 1, 2, 3].map(|i| {
            let (o, c) = self.convs[i].forward(&pyr.levels[i]);
            caches.push(c);
            o
        });
        (FeaturePyramid { levels }, caches)
    }

    /// Returns the gradient with respect to each input level.
    pub fn backward(&mut self, caches: &[ConvCache], grads: &[Tensor; 4]) -> [Tensor; 4] {
        [0, 1, 2, 3].map(|i| self.convs[i].backward(&caches[i], &grads[i], true).expect("input grad"))
    }
}

/// Backbone, contrast projections and localization head with per-group
/// trainability.
#[derive(Clone, Debug)]
pub struct LocalizationNet {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub projections: Projections,
    pub head: Head,
    trainable: [bool; 3],
    head_initialized: bool,
}

impl LocalizationNet {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from(derive_seed(seed, &[0x6d6f64656c]));
        let backbone = Backbone::new(&cfg.backbone, &mut rng);
        let projections = Projections::new(cfg.backbone.channels, cfg.backbone.contrast_dim, &mut rng);
        let head = Head::new(cfg.backbone.channels.iter().sum(), cfg.head_hidden, &mut rng);
        Ok(LocalizationNet {
            cfg,
            backbone,
            projections,
            head,
            trainable: [true; 3],
            head_initialized: false,
        })
    }

    pub fn head_initialized(&self) -> bool {
        self.head_initialized
    }

    /// Marks the head as holding trained (or deliberately set) weights so
    /// that [`LocalizationNet::forward_head`] accepts it.
    pub fn mark_head_initialized(&mut self) {
        self.head_initialized = true;
    }

    pub(crate) fn set_head_initialized(&mut self, v: bool) {
        self.head_initialized = v;
    }

    /// Converts and validates a network input.
    pub fn input_tensor(&self, image: &RgbImage) -> Result<Tensor> {
        let s = self.cfg.input_size;
        if image.width != image.height || image.width != s {
            return Err(Error::Shape(format!(
                "backbone expects {s}x{s} input, got {}x{} (resize upstream)",
                image.width, image.height
            )));
        }
        Ok(image.to_tensor())
    }

    pub(crate) fn backbone_pass(&self, input: &Tensor, mode: Mode, rng_seed: u64) -> (FeaturePyramid, BackboneCache) {
        match mode {
            Mode::Train => {
                let mut rng = rng_from(rng_seed);
                self.backbone.forward(input, Some(&mut rng))
            }
            Mode::Eval => self.backbone.forward(input, None),
        }
    }

    pub fn forward_backbone(&self, image: &RgbImage, mode: Mode, rng_seed: u64) -> Result<FeaturePyramid> {
        let input = self.input_tensor(image)?;
        Ok(self.backbone_pass(&input, mode, rng_seed).0)
    }

    /// Two training-mode passes with independent dropout draws.
    pub fn forward_dual(&self, image: &RgbImage, rng_seed: u64) -> Result<(FeaturePyramid, FeaturePyramid)> {
        if self.cfg.backbone.dropout_rate == 0.0 {
            return Err(Error::param(
                "dropout_rate",
                "is 0: both passes would be identical and the cross-modality view is vacuous",
            ));
        }
        self.forward_dual_with_seeds(image, derive_seed(rng_seed, &[0]), derive_seed(rng_seed, &[1]))
    }

    /// Both passes with explicit dropout seeds. Unlike
    /// [`LocalizationNet::forward_dual`] this accepts `dropout_rate == 0`.
    pub fn forward_dual_with_seeds(&self, image: &RgbImage, seed_a: u64, seed_b: u64) -> Result<(FeaturePyramid, FeaturePyramid)> {
        let input = self.input_tensor(image)?;
        Ok((
            self.backbone_pass(&input, Mode::Train, seed_a).0,
            self.backbone_pass(&input, Mode::Train, seed_b).0,
        ))
    }

    pub fn project_for_contrast(&self, pyr: &FeaturePyramid) -> FeaturePyramid {
        self.projections.forward(pyr).0
    }

    pub fn forward_head(&self, pyr: &FeaturePyramid) -> Result<ScoreMap> {
        if !self.head_initialized {
            return Err(Error::HeadUninitialized { stage: 1 });
        }
        Ok(self.head.forward(pyr).0)
    }

    pub fn is_trainable(&self, part: Part) -> bool {
        self.trainable[part.index()]
    }

    pub fn set_trainable(&mut self, part: Part, trainable: bool) {
        self.trainable[part.index()] = trainable;
    }

    pub fn set_trainable_by_name(&mut self, part: &str, trainable: bool) -> Result<()> {
        self.set_trainable(part.parse()?, trainable);
        Ok(())
    }

    pub fn named_params(&self, part: Part) -> Vec<(String, &Param)> {
        match part {
            Part::Backbone => self
                .backbone
                .named_params()
                .into_iter()
                .map(|(n, p)| (format!("backbone/{n}"), p))
                .collect(),
            Part::Projections => self
                .projections
                .convs
                .iter()
                .enumerate()
                .flat_map(|(i, c)| {
                    [
                        (format!("projections/level{i}.weight"), &c.weight),
                        (format!("projections/level{i}.bias"), &c.bias),
                    ]
                })
                .collect(),
            Part::Head => self.head.named_params(),
        }
    }

    pub fn params_mut(&mut self, part: Part) -> Vec<&mut Param> {
        match part {
            Part::Backbone => self.backbone.params_mut(),
            Part::Projections => projection_params(&mut self.projections),
            Part::Head => self.head.params_mut(),
        }
    }

    /// Every stored tensor of a group in [`LocalizationNet::named_params`]
    /// order, including ones the optimizer never updates.
    pub fn state_mut(&mut self, part: Part) -> Vec<&mut Param> {
        match part {
            Part::Head => self.head.state_mut(),
            _ => self.params_mut(part),
        }
    }

    /// SHA-256 over the little-endian bytes of every parameter in a group.
    pub fn checksum(&self, part: Part) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.named_params(part) {
            h.update(name.as_bytes());
            for v in &p.value {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grad_norm(&self, part: Part) -> f64 {
        self.named_params(part).iter().map(|(_, p)| p.grad_sq_norm()).sum::<f64>().sqrt()
    }

    pub fn zero_grad(&mut self) {
        for part in Part::ALL {
            self.params_mut(part).into_iter().for_each(Param::zero_grad);
        }
    }

    /// One optimizer update over the trainable groups. Gradients of frozen
    /// groups are discarded and their values are never touched.
    pub fn optimizer_step(&mut self, opt: &mut Adam, lr: f64, grad_scale: f32) {
        let trainable = self.trainable;
        let groups = [
            self.backbone.params_mut(),
            projection_params(&mut self.projections),
            self.head.params_mut(),
        ];
        let mut params: Vec<&mut Param> = Vec::new();
        for (part, group) in Part::ALL.into_iter().zip(groups) {
            if trainable[part.index()] {
                params.extend(group);
            } else {
                group.into_iter().for_each(Param::zero_grad);
            }
        }
        opt.step(&mut params, lr, grad_scale);
    }
}

fn projection_params(p: &mut Projections) -> Vec<&mut Param> {
    p.convs.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect()
}
