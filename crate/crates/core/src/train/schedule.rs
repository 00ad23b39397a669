use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Epoch-level reduce-on-plateau driven by the epoch-mean loss.
    Plateau { factor: f64, patience: usize, min_lr: f64 },
    /// Step-level cosine annealing from `lr_init` to `min_lr`.
    Cosine { min_lr: f64 },
}

/// Reduce-on-plateau with relative improvement threshold 1e-4 (scaled by
/// `|best|`, since contrastive losses can be negative): the rate is
/// multiplied by `factor` once more than `patience` consecutive epochs fail
/// to improve on the best loss, never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

const PLATEAU_REL_THRESHOLD: f64 = 1e-4;

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss and returns the rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        if self.best.is_infinite() || loss < self.best - self.best.abs() * PLATEAU_REL_THRESHOLD {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// `min + (init − min)·(1 + cos(π·t/(T−1)))/2` for steps `t = 0..T`, so the
/// first step uses `init` and the last exactly `min`.
pub fn cosine_lr(init: f64, min: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return min;
    }
    let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    min + (init - min) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-4, 1e-6, 0, 100), 1e-4);
        assert!((cosine_lr(1e-4, 1e-6, 99, 100) - 1e-6).abs() < 1e-18);
        assert!(cosine_lr(1e-4, 1e-6, 99, 100) <= 1e-6 + 1e-9);
        assert_eq!(cosine_lr(1e-4, 1e-6, 0, 1), 1e-6);
    }

    #[test]
    fn plateau_waits_for_patience() {
        let mut p = Plateau::new(1e-4, 0.5, 3, 1e-6);
        assert_eq!(p.step(1.0), 1e-4);
        for _ in 0..3 {
            assert_eq!(p.step(1.0), 1e-4);
        }
        assert_eq!(p.step(1.0), 5e-5);
        assert_eq!(p.step(0.5), 5e-5);
    }

    #[test]
    fn plateau_respects_floor() {
        let mut p = Plateau::new(4e-6, 0.5, 0, 1e-6);
        p.step(1.0);
        let lrs: Vec<f64> = (0..5).map(|_| p.step(2.0)).collect();
        assert_eq!(lrs, vec![2e-6, 1e-6, 1e-6, 1e-6, 1e-6]);
    }

    proptest! {
        #[test]
        fn cosine_is_monotone(total in 2usize..500) {
            let lrs: Vec<f64> = (0..total).map(|t| cosine_lr(1e-4, 1e-6, t, total)).collect();
            prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(lrs.iter().all(|&l| (1e-6..=1e-4).contains(&l)));
        }

        #[test]
        fn plateau_never_increases(losses in prop::collection::vec(0.0f64..10.0, 1..60), patience in 0usize..5) {
            let mut p = Plateau::new(1e-4, 0.5, patience, 1e-6);
            let mut prev = p.lr;
            let mut since_drop = 0usize;
            for l in losses {
                let lr = p.step(l);
                prop_assert!(lr <= prev && lr >= 1e-6);
                if lr < prev {
                    prop_assert!(since_drop >= patience);
                    since_drop = 0;
                } else {
                    since_drop += 1;
                }
                prev = lr;
            }
        }
    }
}
