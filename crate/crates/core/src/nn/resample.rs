use super::Tensor;

/// Per-axis bilinear interpolation taps with half-pixel centers
/// (`align_corners = false`).
#[derive(Clone, Debug)]
pub struct AxisWeights {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f32>,
}

impl AxisWeights {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            lo.push(i0);
            hi.push(i1);
            frac.push((src - i0 as f64) as f32);
        }
        AxisWeights { lo, hi, frac }
    }
}

/// Bilinear resize of every channel to `(oh, ow)`.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    if (x.h, x.w) == (oh, ow) {
        return x.clone();
    }
    let ys = AxisWeights::new(x.h, oh);
    let xs = AxisWeights::new(x.w, ow);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..oh {
            let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
            let r0 = &src[y0 * x.w..(y0 + 1) * x.w];
            let r1 = &src[y1 * x.w..(y1 + 1) * x.w];
            for ox in 0..ow {
                let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: maps an output-sized gradient back to the
/// `(h, w)` input grid.
pub fn bilinear_resize_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    if (grad.h, grad.w) == (h, w) {
        return grad.clone();
    }
    let ys = AxisWeights::new(h, grad.h);
    let xs = AxisWeights::new(w, grad.w);
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        let g = grad.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..grad.h {
            let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
            for ox in 0..grad.w {
                let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                let v = g[oy * grad.w + ox];
                let top = v * (1.0 - fy);
                let bot = v * fy;
                dst[y0 * w + x0] += top * (1.0 - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bot * (1.0 - fx);
                dst[y1 * w + x1] += bot * fx;
            }
        }
    }
    out
}

/// Non-overlapping average pooling by an integer factor.
pub fn avg_pool(x: &Tensor, factor: usize) -> Tensor {
    if factor == 1 {
        return x.clone();
    }
    let (oh, ow) = (x.h / factor, x.w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh * factor {
            let row = &src[y * x.w..y * x.w + ow * factor];
            let drow = &mut dst[(y / factor) * ow..(y / factor + 1) * ow];
            for (xi, v) in row.iter().enumerate() {
                drow[xi / factor] += v * norm;
            }
        }
    }
    out
}

pub fn avg_pool_backward(grad: &Tensor, factor: usize, h: usize, w: usize) -> Tensor {
    if factor == 1 {
        return grad.clone();
    }
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        let g = grad.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..grad.h * factor {
            for x in 0..grad.w * factor {
                dst[y * w + x] = g[(y / factor) * grad.w + x / factor] * norm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn same_size_resize_is_identity() {
        let x = random(2, 5, 7, 1);
        assert_eq!(bilinear_resize(&x, 5, 7), x);
    }

    #[test]
    fn upsample_by_two_matches_half_pixel_convention() {
        let x = Tensor::from_vec(1, 1, 2, vec![0.0, 1.0]);
        let up = bilinear_resize(&x, 1, 4);
        assert_eq!(up.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let x = Tensor::from_vec(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let down = bilinear_resize(&x, 1, 1);
        assert_eq!(down.data, vec![1.5]);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        for &(h, w, oh, ow) in &[(4, 4, 16, 16), (8, 6, 3, 5), (5, 5, 7, 9)] {
            let x = random(2, h, w, 2);
            let g = random(2, oh, ow, 3);
            let lhs = dot(&bilinear_resize(&x, oh, ow), &g);
            let rhs = dot(&x, &bilinear_resize_backward(&g, h, w));
            assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let x = random(3, 8, 8, 4);
        let g = random(3, 2, 2, 5);
        let lhs = dot(&avg_pool(&x, 4), &g);
        let rhs = dot(&x, &avg_pool_backward(&g, 4, 8, 8));
        assert!((lhs - rhs).abs() < 1e-5);
    }
}
