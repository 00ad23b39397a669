use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOptions {
    pub temperature: f64,
    pub normalize: bool,
    pub supcon_denominator: bool,
}

impl PairOptions {
    pub fn new(temperature: f64, normalize: bool) -> Self {
        PairOptions {
            temperature,
            normalize,
            supcon_denominator: false,
        }
    }
}

/// Loss value and its gradient with respect to every input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// `-log[(1/|P|) Σ_p exp(a·p/τ) / Σ_n exp(a·n/τ)]`, evaluated with max-shifted
/// log-sum-exp.
pub fn pair_contrast<V: AsRef<[f64]>>(anchor: &[f64], positives: &[V], negatives: &[V], tau: f64, normalize: bool) -> Result<f64> {
    let pos: Vec<&[f64]> = positives.iter().map(AsRef::as_ref).collect();
    let neg: Vec<&[f64]> = negatives.iter().map(AsRef::as_ref).collect();
    Ok(kernel(anchor, &pos, &neg, PairOptions::new(tau, normalize), false)?.loss)
}

pub fn pair_contrast_grad<V: AsRef<[f64]>>(anchor: &[f64], positives: &[V], negatives: &[V], opts: PairOptions) -> Result<PairGrad> {
    let pos: Vec<&[f64]> = positives.iter().map(AsRef::as_ref).collect();
    let neg: Vec<&[f64]> = negatives.iter().map(AsRef::as_ref).collect();
    kernel(anchor, &pos, &neg, opts, true)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Max-shifted log-sum-exp and the softmax weights.
pub(crate) fn log_sum_exp(logits: &[f64]) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (m + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Projects a gradient taken with respect to `x / |x|` back onto `x`.
pub(crate) fn through_normalization(g: &[f64], unit: &[f64], len: f64) -> Vec<f64> {
    let radial = dot(g, unit);
    g.iter().zip(unit).map(|(gi, ui)| (gi - radial * ui) / len).collect()
}

fn validate(anchor: &[f64], pos: &[&[f64]], neg: &[&[f64]], opts: PairOptions) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::param("positives", "must be nonempty"));
    }
    if neg.is_empty() {
        return Err(Error::param("negatives", "must be nonempty"));
    }
    if !(opts.temperature > 0.0) {
        return Err(Error::param("temperature", format!("{} must be > 0", opts.temperature)));
    }
    let d = anchor.len();
    if pos.iter().chain(neg).any(|v| v.len() != d) {
        return Err(Error::Shape("all vectors must share the anchor's dimension".into()));
    }
    if opts.normalize && std::iter::once(&anchor).chain(pos).chain(neg).any(|v| norm(v) == 0.0) {
        return Err(Error::param("embedding", "zero vector cannot be normalized"));
    }
    Ok(())
}

/// Loss on already-prepared vectors together with `∂loss/∂(a·p)` for each
/// positive and `∂loss/∂(a·n)` for each negative.
pub(crate) fn similarity_kernel(a: &[f64], pos: &[&[f64]], neg: &[&[f64]], tau: f64, supcon: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let sp: Vec<f64> = pos.iter().map(|p| dot(a, p) / tau).collect();
    let sn: Vec<f64> = neg.iter().map(|n| dot(a, n) / tau).collect();
    let (lse_p, w_p) = log_sum_exp(&sp);
    let (lse_den, w_den) = if supcon {
        let all: Vec<f64> = sp.iter().chain(&sn).copied().collect();
        log_sum_exp(&all)
    } else {
        log_sum_exp(&sn)
    };
    let loss = -(lse_p - (pos.len() as f64).ln()) + lse_den;
    let (den_p, den_n) = if supcon {
        (w_den[..pos.len()].to_vec(), w_den[pos.len()..].to_vec())
    } else {
        (vec![0.0; pos.len()], w_den)
    };
    let coef_p = w_p.iter().zip(&den_p).map(|(w, d)| (d - w) / tau).collect();
    let coef_n = den_n.iter().map(|d| d / tau).collect();
    (loss, coef_p, coef_n)
}

fn kernel(anchor: &[f64], pos: &[&[f64]], neg: &[&[f64]], opts: PairOptions, want_grad: bool) -> Result<PairGrad> {
    validate(anchor, pos, neg, opts)?;
    let unit = |v: &[f64]| -> (Vec<f64>, f64) {
        if opts.normalize {
            let n = norm(v);
            (v.iter().map(|x| x / n).collect(), n)
        } else {
            (v.to_vec(), 1.0)
        }
    };
    let (a, a_len) = unit(anchor);
    let pu: Vec<(Vec<f64>, f64)> = pos.iter().map(|v| unit(v)).collect();
    let nu: Vec<(Vec<f64>, f64)> = neg.iter().map(|v| unit(v)).collect();
    let pr: Vec<&[f64]> = pu.iter().map(|(v, _)| v.as_slice()).collect();
    let nr: Vec<&[f64]> = nu.iter().map(|(v, _)| v.as_slice()).collect();
    let (loss, coef_p, coef_n) = similarity_kernel(&a, &pr, &nr, opts.temperature, opts.supcon_denominator);

    if !want_grad {
        return Ok(PairGrad {
            loss,
            anchor: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        });
    }

    let d = anchor.len();
    let mut ga = vec![0.0; d];
    let mut side = |units: &[(Vec<f64>, f64)], coefs: &[f64]| -> Vec<Vec<f64>> {
        units
            .iter()
            .zip(coefs)
            .map(|((v, len), &c)| {
                for i in 0..d {
                    ga[i] += c * v[i];
                }
                let g: Vec<f64> = a.iter().map(|x| c * x).collect();
                if opts.normalize {
                    through_normalization(&g, v, *len)
                } else {
                    g
                }
            })
            .collect()
    };
    let gp = side(&pu, &coef_p);
    let gn = side(&nu, &coef_n);
    let ga = if opts.normalize { through_normalization(&ga, &a, a_len) } else { ga };
    Ok(PairGrad {
        loss,
        anchor: ga,
        positives: gp,
        negatives: gn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_values() {
        let a = [1.0, 0.0];
        let l = pair_contrast(&a, &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 1.0, false).unwrap();
        assert!((l + 1.0).abs() < 1e-12);
        let l = pair_contrast(&a, &[vec![0.0, 1.0]], &[vec![0.0, 1.0]], 1.0, false).unwrap();
        assert!(l.abs() < 1e-12);
        let l = pair_contrast(&a, &[vec![1.0, 0.0]], &[vec![0.0, 1.0], vec![0.0, -1.0]], 1.0, false).unwrap();
        let expected = -(std::f64::consts::E / 2.0).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l + 0.30685).abs() < 1e-5);
    }

    #[test]
    fn errors_on_empty_pools_and_zero_vectors() {
        let a = [1.0, 0.0];
        let empty: Vec<Vec<f64>> = vec![];
        assert!(pair_contrast(&a, &empty, &[vec![0.0, 1.0]], 1.0, false).is_err());
        assert!(pair_contrast(&a, &[vec![0.0, 1.0]], &empty, 1.0, false).is_err());
        assert!(pair_contrast(&a, &[vec![0.0, 0.0]], &[vec![0.0, 1.0]], 1.0, true).is_err());
        assert!(pair_contrast(&[0.0, 0.0], &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 1.0, true).is_err());
        assert!(pair_contrast(&a, &[vec![0.0, 0.0]], &[vec![0.0, 1.0]], 1.0, false).is_ok());
    }

    #[test]
    fn large_inner_products_stay_finite() {
        let a = [100.0, 0.0];
        let l = pair_contrast(&a, &[vec![100.0, 0.0]], &[vec![-100.0, 0.0], vec![0.0, 100.0]], 1.0, false).unwrap();
        assert!(l.is_finite());
        assert!((l + 1e4).abs() < 1e-6);
        let l = pair_contrast(&a, &[vec![-100.0, 0.0]], &[vec![100.0, 0.0]], 1.0, false).unwrap();
        assert!((l - 2e4).abs() < 1e-6);
    }

    #[test]
    fn supcon_denominator_is_nonnegative() {
        let opts = PairOptions {
            temperature: 0.5,
            normalize: true,
            supcon_denominator: true,
        };
        let g = pair_contrast_grad(&[1.0, 0.2], &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], opts).unwrap();
        assert!(g.loss > 0.0);
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..=n)
    }

    proptest! {
        #[test]
        fn permutation_invariant(a in prop::collection::vec(-2.0f64..2.0, 4), p in vecs(6), n in vecs(6), tau in 0.05f64..2.0) {
            let base = pair_contrast(&a, &p, &n, tau, false).unwrap();
            let mut pr = p.clone();
            pr.reverse();
            let mut nr = n.clone();
            nr.rotate_left(1);
            let perm = pair_contrast(&a, &pr, &nr, tau, false).unwrap();
            prop_assert!((base - perm).abs() <= 1e-12 * base.abs().max(1.0));
        }

        #[test]
        fn scale_invariant_under_normalization(
            a in prop::collection::vec(0.1f64..2.0, 4), p in vecs(5), n in vecs(5), c in 0.1f64..10.0
        ) {
            prop_assume!(p.iter().chain(&n).all(|v| norm(v) > 1e-3));
            let base = pair_contrast(&a, &p, &n, 0.1, true).unwrap();
            let s = |v: &Vec<f64>| v.iter().map(|x| x * c).collect::<Vec<f64>>();
            let scaled = pair_contrast(
                &a.iter().map(|x| x * c).collect::<Vec<_>>(),
                &p.iter().map(s).collect::<Vec<_>>(),
                &n.iter().map(s).collect::<Vec<_>>(),
                0.1,
                true,
            ).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn finite_for_extreme_inner_products(scale in 1.0f64..100.0, tau in prop::sample::select(vec![0.05f64, 0.1, 1.0])) {
            // Inner products up to 1e4.
            let a = vec![scale, 0.0];
            let p = vec![vec![scale, 0.0]];
            let n = vec![vec![-scale, 0.0], vec![0.0, scale]];
            let l = pair_contrast(&a, &p, &n, tau, false).unwrap();
            prop_assert!(l.is_finite());
        }
    }
}
