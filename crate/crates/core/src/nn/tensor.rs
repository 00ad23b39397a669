use serde::{Deserialize, Serialize};

/// Dense `f32` tensor in (C, H, W) layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length does not match shape");
        Tensor { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Feature vector of one spatial cell (`y * w + x`), gathered across channels.
    pub fn cell_vector(&self, cell: usize) -> Vec<f64> {
        let n = self.h * self.w;
        (0..self.c).map(|c| self.data[c * n + cell] as f64).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks channels of several tensors sharing spatial size.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut c = 0;
        for p in parts {
            assert_eq!((p.h, p.w), (h, w), "concat requires equal spatial size");
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Tensor { c, h, w, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
