use crate::data::Mask;
use crate::error::{Error, Result};
use crate::model::ScoreMap;

/// `pred = 1` iff `score > threshold` (strict, so 0.5 maps to 0 at the
/// default threshold).
pub fn binarize(scores: &ScoreMap, threshold: f64) -> Mask {
    Mask {
        width: scores.width,
        height: scores.height,
        data: scores.probs.iter().map(|&p| u8::from(f64::from(p) > threshold)).collect(),
    }
}

/// Pixel confusion counts with tampered as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn count(pred: &Mask, gt: &Mask) -> Result<Self> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`, or `empty` when all three counts are zero.
    pub fn f1(&self, empty: f64) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            empty
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `TP / (TP + FP + FN)`, or `empty` when all three counts are zero.
    pub fn iou(&self, empty: f64) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            empty
        } else {
            self.tp as f64 / den as f64
        }
    }
}

/// F1 and IoU, both 1.0 when prediction and ground truth are empty.
pub fn f1_iou(pred: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    f1_iou_with_empty(pred, gt, 1.0)
}

pub fn f1_iou_with_empty(pred: &Mask, gt: &Mask, empty: f64) -> Result<(f64, f64)> {
    let c = Confusion::count(pred, gt)?;
    Ok((c.f1(empty), c.iou(empty)))
}

/// Sample-weighted mean `Σ mᵢ·nᵢ / Σ nᵢ`.
pub fn weighted_average(rows: &[(f64, usize)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("weighted_average needs at least one row".into()));
    }
    if rows.iter().any(|&(_, n)| n == 0) {
        return Err(Error::param("count", "every row needs at least one sample"));
    }
    let total: usize = rows.iter().map(|r| r.1).sum();
    let sum: f64 = rows.iter().map(|&(m, n)| m * n as f64).sum();
    Ok(sum / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(data: &[u8]) -> Mask {
        Mask::new(data.len(), 1, data.to_vec()).unwrap()
    }

    #[test]
    fn binarize_is_strict() {
        let s = ScoreMap::new(3, 1, vec![0.5, 0.9, 0.0]).unwrap();
        assert_eq!(binarize(&s, 0.5).data, vec![0, 1, 0]);
        assert_eq!(binarize(&s, 0.0).data, vec![1, 1, 0]);
        let all = ScoreMap::new(2, 2, vec![0.9; 4]).unwrap();
        assert_eq!(binarize(&all, 0.5).count_ones(), 4);
    }

    #[test]
    fn hand_counted_cases() {
        let gt = mask(&[1, 1, 1, 1, 0, 0, 0]);
        let pred = mask(&[1, 1, 0, 0, 1, 1, 0]);
        let (f1, iou) = f1_iou(&pred, &gt).unwrap();
        assert_eq!(f1, 0.5);
        assert_eq!(iou, 1.0 / 3.0);
        assert_eq!(f1_iou(&gt, &gt).unwrap(), (1.0, 1.0));
        let empty = mask(&[0, 0, 0]);
        assert_eq!(f1_iou(&empty, &empty).unwrap(), (1.0, 1.0));
        assert_eq!(f1_iou(&mask(&[0, 1, 0]), &empty).unwrap(), (0.0, 0.0));
        assert_eq!(f1_iou_with_empty(&empty, &empty, 0.0).unwrap(), (0.0, 0.0));
        assert!(f1_iou(&empty, &gt).is_err());
    }

    #[test]
    fn weighted_average_cases() {
        assert_eq!(weighted_average(&[(0.5, 2), (1.0, 3)]).unwrap(), 0.8);
        assert_eq!(weighted_average(&[(0.3, 7)]).unwrap(), 0.3);
        assert_eq!(weighted_average(&[(0.2, 4), (0.6, 4)]).unwrap(), (0.2 + 0.6) / 2.0);
        assert!(weighted_average(&[]).is_err());
        assert!(weighted_average(&[(0.5, 0)]).is_err());
    }

    proptest! {
        #[test]
        fn iou_f1_identity(p in prop::collection::vec(0u8..=1, 64), g in prop::collection::vec(0u8..=1, 64)) {
            let (f1, iou) = f1_iou(&mask(&p), &mask(&g)).unwrap();
            prop_assert!(0.0 <= iou && iou <= f1 && f1 <= 1.0);
            prop_assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
        }

        #[test]
        fn weighted_average_order_and_split_invariant(
            rows in prop::collection::vec((0.0f64..1.0, 1usize..50), 1..8),
            split in 1usize..49,
        ) {
            let base = weighted_average(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            prop_assert!((base - weighted_average(&rev).unwrap()).abs() <= 1e-12);
            let (m, n) = rows[0];
            if n > 1 {
                let k = split.min(n - 1);
                let mut parts = rows[1..].to_vec();
                parts.push((m, k));
                parts.push((m, n - k));
                prop_assert!((base - weighted_average(&parts).unwrap()).abs() <= 1e-12);
            }
        }
    }
}
