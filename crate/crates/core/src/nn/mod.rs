//! Minimal CPU layers with explicit backward passes.
//!
//! Tensors are single images in channel-major (C, H, W) layout. Batching is
//! done by accumulating gradients over samples before an optimizer step, which
//! is exact because no layer couples samples.

mod adam;
mod conv;
mod param;
mod resample;
mod tensor;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCache};
pub use param::Param;
pub use resample::{avg_pool, avg_pool_backward, bilinear_resize, bilinear_resize_backward, AxisWeights};
pub use tensor::Tensor;

/// In-place ReLU; returns the activation for use as the backward mask.
pub fn relu(mut t: Tensor) -> Tensor {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    t
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(output: &Tensor, grad: &mut Tensor) {
    debug_assert_eq!(output.data.len(), grad.data.len());
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Channel-wise (spatial) dropout mask: one keep/drop decision per channel,
/// kept channels scaled by `1 / (1 - rate)`.
pub fn channel_dropout_mask<R: rand::Rng>(channels: usize, rate: f32, rng: &mut R) -> Vec<f32> {
    let keep = 1.0 - rate;
    (0..channels)
        .map(|_| if rng.random::<f32>() < rate { 0.0 } else { 1.0 / keep })
        .collect()
}

pub fn apply_channel_scale(t: &mut Tensor, scale: &[f32]) {
    let plane = t.h * t.w;
    for (c, &s) in scale.iter().enumerate() {
        if s != 1.0 {
            t.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v *= s);
        }
    }
}
