use rand::Rng;

use super::{FeaturePyramid, ScoreMap};
use crate::nn::{bilinear_resize, bilinear_resize_backward, relu, relu_backward, Conv2d, ConvCache, Param, Tensor};

/// Localization head: coarse levels upsampled onto the stride-4 grid,
/// channel-concatenated, standardized per channel, two 1x1 convolutions with
/// a ReLU between, logits upsampled to input resolution, sigmoid last.
#[derive(Clone, Debug)]
pub struct Head {
    /// Row 0 holds per-channel shifts, row 1 per-channel scales. Fixed
    /// statistics, never handed to the optimizer.
    pub input_norm: Param,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    c1: ConvCache,
    hidden: Tensor,
    c2: ConvCache,
    grid: (usize, usize),
}

impl Head {
    pub fn new<R: Rng>(in_ch: usize, hidden: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(in_ch, hidden, 1, 1, rng);
        let mut conv2 = Conv2d::new(hidden, 1, 1, 1, rng);
        conv2.weight.value.iter_mut().for_each(|w| *w *= 0.1);
        let mut norm = vec![0.0; 2 * in_ch];
        norm[in_ch..].fill(1.0);
        Head {
            input_norm: Param::from_value(&[2, in_ch], norm),
            conv1,
            conv2,
        }
    }

    /// Sets the input standardization to the per-channel mean and inverse
    /// standard deviation over `inputs`. Constant channels get scale 1.
    pub fn fit_input_norm(&mut self, inputs: &[Tensor]) {
        let c = self.input_norm.shape[1];
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = 0usize;
        for t in inputs {
            assert_eq!(t.c, c, "head input channels");
            let hw = t.h * t.w;
            for (ch, plane) in t.data.chunks_exact(hw).enumerate() {
                for &v in plane {
                    sum[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
            n += hw;
        }
        if n == 0 {
            return;
        }
        for ch in 0..c {
            let mean = sum[ch] / n as f64;
            let std = (sq[ch] / n as f64 - mean * mean).max(0.0).sqrt();
            self.input_norm.value[ch] = mean as f32;
            self.input_norm.value[c + ch] = if std > 1e-6 { (1.0 / std) as f32 } else { 1.0 };
        }
    }

    fn standardize(&self, concat: &Tensor) -> Tensor {
        let c = self.input_norm.shape[1];
        let (shift, scale) = self.input_norm.value.split_at(c);
        let hw = concat.h * concat.w;
        let mut out = concat.clone();
        for (ch, plane) in out.data.chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v - shift[ch]) * scale[ch]);
        }
        out
    }

    /// Concatenated head input on the stride-4 grid.
    pub fn concat_input(pyr: &FeaturePyramid) -> Tensor {
        let (h, w) = (pyr.levels[0].h, pyr.levels[0].w);
        let up: Vec<Tensor> = pyr.levels[1..].iter().map(|t| bilinear_resize(t, h, w)).collect();
        Tensor::concat_channels(&[&pyr.levels[0], &up[0], &up[1], &up[2]])
    }

    /// Returns the score map, backward state, and full-resolution logits.
    pub fn forward(&self, pyr: &FeaturePyramid) -> (ScoreMap, HeadCache, Tensor) {
        self.forward_concat(&Self::concat_input(pyr))
    }

    pub fn forward_concat(&self, concat: &Tensor) -> (ScoreMap, HeadCache, Tensor) {
        let (h, w) = (concat.h, concat.w);
        let (hid, c1) = self.conv1.forward(&self.standardize(concat));
        let hidden = relu(hid);
        let (logits, c2) = self.conv2.forward(&hidden);
        let full = bilinear_resize(&logits, h * 4, w * 4);
        let probs = full.data.iter().map(|&z| sigmoid(z)).collect();
        let map = ScoreMap {
            width: w * 4,
            height: h * 4,
            probs,
        };
        (map, HeadCache { c1, hidden, c2, grid: (h, w) }, full)
    }

    /// Accumulates head gradients from the gradient of the full-resolution logits.
    pub fn backward(&mut self, cache: &HeadCache, grad_logits: &Tensor) {
        let g = bilinear_resize_backward(grad_logits, cache.grid.0, cache.grid.1);
        let mut gh = self.conv2.backward(&cache.c2, &g, true).expect("input grad");
        relu_backward(&cache.hidden, &mut gh);
        self.conv1.backward(&cache.c1, &gh, false);
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        vec![
            ("head/conv1.weight".into(), &self.conv1.weight),
            ("head/conv1.bias".into(), &self.conv1.bias),
            ("head/conv2.weight".into(), &self.conv2.weight),
            ("head/conv2.bias".into(), &self.conv2.bias),
            ("head/input_norm".into(), &self.input_norm),
        ]
    }

    /// Every stored tensor, in [`Head::named_params`] order.
    pub fn state_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.input_norm,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }

    pub fn zero_weights(&mut self) {
        for p in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
