use super::Param;

/// Adam with bias correction and no weight decay. State is keyed by the
/// position of each parameter in the slice passed to [`Adam::step`], so
/// callers must pass parameters in a stable order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears its gradient.
    /// `grad_scale` multiplies gradients first (e.g. `1 / batch`).
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64, grad_scale: f32) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = (lr / bc1) as f32;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j] * grad_scale;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let denom = v[j].sqrt() / bc2_sqrt + eps;
                p.value[j] -= step_size * m[j] / denom;
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        let mut p = Param::from_value(&[3], vec![1.0, 1.0, 1.0]);
        p.grad = vec![2.0, -0.5, 0.0];
        let mut opt = Adam::default();
        opt.step(&mut [&mut p], 0.1, 1.0);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.value[2], 1.0);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::from_value(&[1], vec![5.0]);
        let mut opt = Adam::default();
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.5);
            opt.step(&mut [&mut p], 0.05, 1.0);
        }
        assert!((p.value[0] - 1.5).abs() < 1e-2);
    }
}
