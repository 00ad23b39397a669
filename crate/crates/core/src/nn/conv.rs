use rand::Rng;

use super::{Param, Tensor};

/// 2-D convolution with square kernel, "same"-style padding `k / 2`, and bias.
/// Lowered to a single GEMM through an im2col buffer.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Saved forward state for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::he_normal(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: Param::zeros(&[out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    /// A 1x1 convolution with all-zero weights and bias.
    pub fn zeros_1x1(in_ch: usize, out_ch: usize) -> Self {
        Conv2d {
            weight: Param::zeros(&[out_ch, in_ch, 1, 1]),
            bias: Param::zeros(&[out_ch]),
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let cols = if self.is_pointwise() {
            x.data.clone()
        } else {
            im2col(x, self.kernel, self.stride, oh, ow)
        };
        let out = self.apply(&cols, oh, ow);
        (
            out,
            ConvCache {
                cols,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        )
    }

    /// Forward pass without keeping backward state.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        if self.is_pointwise() {
            self.apply(&x.data, oh, ow)
        } else {
            let cols = im2col(x, self.kernel, self.stride, oh, ow);
            self.apply(&cols, oh, ow)
        }
    }

    fn apply(&self, cols: &[f32], oh: usize, ow: usize) -> Tensor {
        let p = oh * ow;
        let k = self.in_ch * self.kernel * self.kernel;
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        for (o, plane) in out.data.chunks_mut(p).enumerate() {
            plane.fill(self.bias.value[o]);
        }
        // SAFETY: all pointers cover exactly the (rows, cols) extents passed
        // with the given row/column strides.
        unsafe {
            matrixmultiply::sgemm(
                self.out_ch,
                k,
                p,
                1.0,
                self.weight.value.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                p as isize,
                1,
                1.0,
                out.data.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// requested.
    pub fn backward(&mut self, cache: &ConvCache, grad_out: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let (oh, ow) = cache.out_hw;
        assert_eq!(grad_out.shape(), (self.out_ch, oh, ow), "conv grad shape");
        let p = oh * ow;
        let k = self.in_ch * self.kernel * self.kernel;

        for (o, plane) in grad_out.data.chunks(p).enumerate() {
            self.bias.grad[o] += plane.iter().sum::<f32>();
        }
        // dW (O x K) += dOut (O x P) * cols^T (P x K)
        unsafe {
            matrixmultiply::sgemm(
                self.out_ch,
                p,
                k,
                1.0,
                grad_out.data.as_ptr(),
                p as isize,
                1,
                cache.cols.as_ptr(),
                1,
                p as isize,
                1.0,
                self.weight.grad.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if !want_input_grad {
            return None;
        }
        // dCols (K x P) = W^T (K x O) * dOut (O x P)
        let mut dcols = vec![0.0f32; k * p];
        unsafe {
            matrixmultiply::sgemm(
                k,
                self.out_ch,
                p,
                1.0,
                self.weight.value.as_ptr(),
                1,
                k as isize,
                grad_out.data.as_ptr(),
                p as isize,
                1,
                0.0,
                dcols.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        let (c, h, w) = cache.in_shape;
        if self.is_pointwise() {
            return Some(Tensor::from_vec(c, h, w, dcols));
        }
        Some(col2im(&dcols, cache.in_shape, self.kernel, self.stride, oh, ow))
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

fn im2col(x: &Tensor, k: usize, stride: usize, oh: usize, ow: usize) -> Vec<f32> {
    let pad = k / 2;
    let p = oh * ow;
    let mut cols = vec![0.0f32; x.c * k * k * p];
    for ci in 0..x.c {
        let plane = x.plane(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < x.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], shape: (usize, usize, usize), k: usize, stride: usize, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = shape;
    let pad = k / 2;
    let p = oh * ow;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = out.plane_mut(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
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

    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let pad = (conv.kernel / 2) as isize;
        let mut out = Tensor::zeros(conv.out_ch, oh, ow);
        for o in 0..conv.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[o] as f64;
                    for ci in 0..conv.in_ch {
                        for ky in 0..conv.kernel {
                            for kx in 0..conv.kernel {
                                let iy = (oy * conv.stride + ky) as isize - pad;
                                let ix = (ox * conv.stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    let wv = conv.weight.value
                                        [((o * conv.in_ch + ci) * conv.kernel + ky) * conv.kernel + kx];
                                    acc += wv as f64 * x.at(ci, iy as usize, ix as usize) as f64;
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn gemm_conv_matches_direct_loops() {
        let mut rng = rng_from(1);
        for &(k, s) in &[(3, 1), (3, 2), (1, 1), (5, 1)] {
            let mut conv = Conv2d::new(3, 4, k, s, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_tensor(3, 8, 6, 2);
            let fast = conv.infer(&x);
            let slow = naive_conv(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-5, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from(3);
        for &(k, s) in &[(3, 2), (1, 1), (3, 1)] {
            let mut conv = Conv2d::new(2, 3, k, s, &mut rng);
            let x = random_tensor(2, 6, 6, 4);
            let (out, cache) = conv.forward(&x);
            // Loss = sum(out * r) for a fixed random r.
            let r = random_tensor(out.c, out.h, out.w, 5);
            let dx = conv.backward(&cache, &r, true).unwrap();
            let loss = |conv: &Conv2d, x: &Tensor| -> f64 {
                let o = naive_conv(conv, x);
                o.data.iter().zip(&r.data).map(|(a, b)| *a as f64 * *b as f64).sum()
            };
            let h = 1e-2f32;
            for i in [0usize, 7, 20, x.data.len() - 1] {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h as f64);
                assert!((fd - dx.data[i] as f64).abs() < 1e-3, "dx[{i}]: fd {fd} vs {}", dx.data[i]);
            }
            for i in [0usize, 5, conv.weight.len() - 1] {
                let mut cp = conv.clone();
                cp.weight.value[i] += h;
                let mut cm = conv.clone();
                cm.weight.value[i] -= h;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h as f64);
                assert!((fd - conv.weight.grad[i] as f64).abs() < 1e-3, "dw[{i}]");
            }
            let bias_fd: f64 = r.plane(1).iter().map(|&v| v as f64).sum();
            assert!((bias_fd - conv.bias.grad[1] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn stride_two_halves_even_sizes() {
        let mut rng = rng_from(0);
        let conv = Conv2d::new(1, 1, 3, 2, &mut rng);
        assert_eq!(conv.out_hw(128, 128), (64, 64));
        assert_eq!(conv.out_hw(32, 32), (16, 16));
    }
}
