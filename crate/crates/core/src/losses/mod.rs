//! Pixel contrastive losses and focal cross-entropy.
//!
//! All three contrastive views share one kernel ([`pair_contrast`]): the
//! negative log of the mean positive similarity over the summed negative
//! similarity. The denominator holds negatives only unless
//! `supcon_denominator` is set, so values can be negative.

mod contrast;
mod focal;
mod views;

use serde::{Deserialize, Serialize};

pub use contrast::{pair_contrast, pair_contrast_grad, PairGrad, PairOptions};
pub use focal::{focal_ce, focal_ce_grad, focal_ce_logits, focal_pixel, FOCAL_EPS};
pub use views::{
    contrast_term, cross_modality_loss, cross_scale_loss, multi_view_loss, within_image_loss, AnchorSet,
    ContrastTermOutput, MultiViewOutput, SelfExclusion,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub normalize_embeddings: bool,
    /// Adds the positives to the denominator (standard supervised
    /// contrastive form).
    pub supcon_denominator: bool,
    pub use_within: bool,
    pub use_cross_scale: bool,
    pub use_cross_modality: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            temperature: 0.1,
            normalize_embeddings: true,
            supcon_denominator: false,
            use_within: true,
            use_cross_scale: true,
            use_cross_modality: true,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config {
                key: "temperature".into(),
                reason: format!("{} must be > 0", self.temperature),
            });
        }
        if !(self.use_within || self.use_cross_scale || self.use_cross_modality) {
            return Err(Error::Config {
                key: "use_within".into(),
                reason: "at least one of use_within, use_cross_scale, use_cross_modality must be enabled".into(),
            });
        }
        Ok(())
    }

    pub fn pair_options(&self) -> PairOptions {
        PairOptions {
            temperature: self.temperature,
            normalize: self.normalize_embeddings,
            supcon_denominator: self.supcon_denominator,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 0.5, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config {
                key: "focal_alpha".into(),
                reason: format!("{} outside [0, 1]", self.alpha),
            });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config {
                key: "focal_gamma".into(),
                reason: format!("{} must be >= 0", self.gamma),
            });
        }
        Ok(())
    }
}

/// Unweighted sum of the enabled view losses.
pub fn total_contrastive_loss(within: f64, cross_scale: f64, cross_modality: f64, cfg: &ContrastConfig) -> f64 {
    let mut total = 0.0;
    if cfg.use_within {
        total += within;
    }
    if cfg.use_cross_scale {
        total += cross_scale;
    }
    if cfg.use_cross_modality {
        total += cross_modality;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_sums_enabled_terms() {
        let cfg = ContrastConfig::default();
        assert!((total_contrastive_loss(0.5, 0.2, 0.3, &cfg) - 1.0).abs() < 1e-15);
        let no_within = ContrastConfig {
            use_within: false,
            ..cfg.clone()
        };
        assert_eq!(total_contrastive_loss(0.5, 0.2, 0.3, &no_within), 0.2 + 0.3);
    }

    #[test]
    fn config_guards() {
        let none = ContrastConfig {
            use_within: false,
            use_cross_scale: false,
            use_cross_modality: false,
            ..ContrastConfig::default()
        };
        assert!(none.validate().is_err());
        let bad_tau = ContrastConfig {
            temperature: -1.0,
            ..ContrastConfig::default()
        };
        assert!(matches!(bad_tau.validate(), Err(Error::Config { key, .. }) if key == "temperature"));
        assert!(FocalConfig { alpha: 1.5, gamma: 2.0 }.validate().is_err());
        assert!(FocalConfig { alpha: 0.5, gamma: -1.0 }.validate().is_err());
    }
}
