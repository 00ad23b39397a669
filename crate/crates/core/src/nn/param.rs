use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A trainable array with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            value: vec![0.0; n],
            grad: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn from_value(shape: &[usize], value: Vec<f32>) -> Self {
        assert_eq!(value.len(), shape.iter().product::<usize>());
        Param {
            grad: vec![0.0; value.len()],
            value,
            shape: shape.to_vec(),
        }
    }

    /// He-normal initialization with the given fan-in.
    pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let value = (0..n).map(|_| normal.sample(rng) as f32).collect();
        Param::from_value(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.grad.iter().map(|&g| (g as f64) * (g as f64)).sum()
    }
}
