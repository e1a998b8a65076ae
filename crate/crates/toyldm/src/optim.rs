//! Adam over the denoiser parameters.

use crate::denoiser::DenoiserParams;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: DenoiserParams,
    v: DenoiserParams,
    step: i32,
}

impl Adam {
    pub fn new(params: &DenoiserParams) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut DenoiserParams, grads: &DenoiserParams, lr: f32) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step_size = lr / c1;
        let c2_sqrt = c2.sqrt();
        for (((p, g), m), v) in
            params.slices_mut().into_iter().zip(grads.slices()).zip(self.m.slices_mut()).zip(self.v.slices_mut())
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() / c2_sqrt + eps);
            }
        }
    }
}
