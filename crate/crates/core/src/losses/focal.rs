use super::FocalConfig;
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::model::ScoreMap;

/// Scores are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` before the logs.
pub const FOCAL_EPS: f64 = 1e-7;

fn clamp(y: f64) -> (f64, bool) {
    let c = y.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    (c, c == y)
}

/// `−α(1−y)^γ ŷ log y − (1−α) y^γ (1−ŷ) log(1−y)` for one pixel.
pub fn focal_pixel(target: u8, y: f64, cfg: &FocalConfig) -> f64 {
    let (y, _) = clamp(y);
    if target == 1 {
        -cfg.alpha * (1.0 - y).powf(cfg.gamma) * y.ln()
    } else {
        -(1.0 - cfg.alpha) * y.powf(cfg.gamma) * (1.0 - y).ln()
    }
}

/// Derivative of [`focal_pixel`] w.r.t. the score; zero where clamping is
/// active.
fn focal_pixel_grad(target: u8, y: f64, cfg: &FocalConfig) -> f64 {
    let (y, inside) = clamp(y);
    if !inside {
        return 0.0;
    }
    let g = cfg.gamma;
    if target == 1 {
        let pow_lower = if g == 0.0 { 0.0 } else { g * (1.0 - y).powf(g - 1.0) };
        -cfg.alpha * (-pow_lower * y.ln() + (1.0 - y).powf(g) / y)
    } else {
        let pow_lower = if g == 0.0 { 0.0 } else { g * y.powf(g - 1.0) };
        -(1.0 - cfg.alpha) * (pow_lower * (1.0 - y).ln() - y.powf(g) / (1.0 - y))
    }
}

fn check(width: usize, height: usize, n: usize, mask: &Mask) -> Result<()> {
    if (width, height) != (mask.width, mask.height) || n != mask.data.len() {
        return Err(Error::Shape(format!(
            "scores {width}x{height} vs mask {}x{}",
            mask.width, mask.height
        )));
    }
    Ok(())
}

/// Mean focal cross-entropy over all pixels.
pub fn focal_ce(scores: &ScoreMap, mask: &Mask, cfg: &FocalConfig) -> Result<f64> {
    check(scores.width, scores.height, scores.probs.len(), mask)?;
    let sum: f64 = scores
        .probs
        .iter()
        .zip(&mask.data)
        .map(|(&y, &t)| focal_pixel(t, f64::from(y), cfg))
        .sum();
    Ok(sum / mask.data.len() as f64)
}

/// Mean focal loss over plain `f64` scores and its gradient w.r.t. each score.
pub fn focal_ce_grad(scores: &[f64], mask: &Mask, cfg: &FocalConfig) -> Result<(f64, Vec<f64>)> {
    check(mask.width, mask.height, scores.len(), mask)?;
    let n = scores.len() as f64;
    let loss = scores.iter().zip(&mask.data).map(|(&y, &t)| focal_pixel(t, y, cfg)).sum::<f64>() / n;
    let grad = scores
        .iter()
        .zip(&mask.data)
        .map(|(&y, &t)| focal_pixel_grad(t, y, cfg) / n)
        .collect();
    Ok((loss, grad))
}

/// d(focal)/dz for `y = sigmoid(z)`, in closed form. Unlike
/// [`focal_pixel_grad`] this ignores the clamp, so a saturated wrong pixel
/// still pulls with magnitude about α instead of zero.
fn focal_logit_grad(target: u8, z: f64, cfg: &FocalConfig) -> f64 {
    let g = cfg.gamma;
    // ln(1 + e^x) without overflow.
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let y = 1.0 / (1.0 + (-z).exp());
    if target == 1 {
        let log_y = -softplus(-z);
        cfg.alpha * (1.0 - y).powf(g) * (g * y * log_y - (1.0 - y))
    } else {
        let log_1my = -softplus(z);
        (1.0 - cfg.alpha) * y.powf(g) * (y - g * (1.0 - y) * log_1my)
    }
}

/// Mean focal loss of `sigmoid(logits)` and its gradient w.r.t. the logits.
pub fn focal_ce_logits(logits: &[f32], mask: &Mask, cfg: &FocalConfig) -> Result<(f64, Vec<f32>)> {
    check(mask.width, mask.height, logits.len(), mask)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(&mask.data)
        .map(|(&z, &t)| {
            let z = f64::from(z);
            loss += focal_pixel(t, 1.0 / (1.0 + (-z).exp()), cfg);
            (focal_logit_grad(t, z, cfg) / n) as f32
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FocalConfig {
        FocalConfig::default()
    }

    #[test]
    fn saturated_wrong_pixels_keep_their_gradient() {
        let mask = Mask::new(2, 1, vec![1, 0]).unwrap();
        let (_, g) = focal_ce_logits(&[-60.0, 60.0], &mask, &cfg()).unwrap();
        assert!((f64::from(g[0]) + 0.25).abs() < 1e-6, "{g:?}");
        assert!((f64::from(g[1]) - 0.25).abs() < 1e-6, "{g:?}");
        let (_, g) = focal_ce_logits(&[60.0, -60.0], &mask, &cfg()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn spot_values() {
        let half = 0.5 * 0.25 * std::f64::consts::LN_2;
        assert!((focal_pixel(1, 0.5, &cfg()) - 0.086643).abs() < 1e-6);
        assert!((focal_pixel(1, 0.5, &cfg()) - half).abs() < 1e-15);
        assert!((focal_pixel(0, 0.5, &cfg()) - half).abs() < 1e-15);
        assert!(focal_pixel(1, 1.0, &cfg()).abs() < 1e-6);
        assert!(focal_pixel(0, 0.0, &cfg()).abs() < 1e-6);
        assert!(focal_pixel(1, 0.0, &cfg()).is_finite());
    }

    #[test]
    fn map_mean_and_shape_errors() {
        let mask = Mask::new(2, 1, vec![1, 0]).unwrap();
        let scores = ScoreMap::new(2, 1, vec![0.5, 0.5]).unwrap();
        let l = focal_ce(&scores, &mask, &cfg()).unwrap();
        assert!((l - 0.5 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        let wrong = ScoreMap::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(focal_ce(&wrong, &mask, &cfg()).is_err());
        assert!(focal_ce_grad(&[0.5], &mask, &cfg()).is_err());
    }

    #[test]
    fn clamped_scores_have_zero_gradient() {
        let mask = Mask::new(2, 1, vec![1, 0]).unwrap();
        let (_, g) = focal_ce_grad(&[1.0, 0.0], &mask, &cfg()).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn score_gradient_matches_central_differences(
            ys in prop::collection::vec(0.01f64..0.99, 6),
            ts in prop::collection::vec(0u8..=1, 6),
            alpha in 0.0f64..1.0,
            gamma in prop::sample::select(vec![0.0f64, 1.0, 2.0, 3.5]),
        ) {
            let c = FocalConfig { alpha, gamma };
            let mask = Mask::new(3, 2, ts).unwrap();
            let (_, g) = focal_ce_grad(&ys, &mask, &c).unwrap();
            let h = 1e-5;
            for i in 0..ys.len() {
                let mut p = ys.clone();
                p[i] += h;
                let mut m = ys.clone();
                m[i] -= h;
                let num = (focal_ce_grad(&p, &mask, &c).unwrap().0 - focal_ce_grad(&m, &mask, &c).unwrap().0) / (2.0 * h);
                prop_assert!((g[i] - num).abs() <= 1e-4 * num.abs().max(1e-6) + 1e-9, "{} vs {}", g[i], num);
            }
        }

        #[test]
        fn logit_gradient_chains_through_sigmoid(z in -6.0f32..6.0, t in 0u8..=1) {
            let mask = Mask::new(1, 1, vec![t]).unwrap();
            let (_, g) = focal_ce_logits(&[z], &mask, &cfg()).unwrap();
            let h = 1e-3f32;
            let num = (focal_ce_logits(&[z + h], &mask, &cfg()).unwrap().0 - focal_ce_logits(&[z - h], &mask, &cfg()).unwrap().0)
                / (2.0 * f64::from(h));
            prop_assert!((f64::from(g[0]) - num).abs() <= 1e-3 * num.abs() + 1e-6);
        }

        #[test]
        fn logit_gradient_matches_probability_chain(z in -12.0f64..12.0, t in 0u8..=1, alpha in 0.05f64..0.95, gamma in 0.0f64..4.0) {
            let c = FocalConfig { alpha, gamma };
            let y = 1.0 / (1.0 + (-z).exp());
            let chained = focal_pixel_grad(t, y, &c) * y * (1.0 - y);
            prop_assert!((focal_logit_grad(t, z, &c) - chained).abs() <= 1e-9 * chained.abs().max(1e-3));
        }

        #[test]
        fn loss_is_nonnegative(y in 0.0f64..=1.0, t in 0u8..=1, alpha in 0.0f64..=1.0, gamma in 0.0f64..4.0) {
            let c = FocalConfig { alpha, gamma };
            prop_assert!(focal_pixel(t, y, &c) >= 0.0);
        }
    }
}
