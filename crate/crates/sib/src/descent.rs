//! Gradient descent on the decoder reconstruction loss.

use crate::SibError;
use seedmem_core::Tensor;
use seedmem_toyldm::vae::LatentDecoder;
use seedmem_toyldm::{LinearVae, ToyImage};

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub z: Vec<f32>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Fixed-step descent on `||Dec(z) - target||^2` from `start`. A step that
/// would increase the loss is retried with half the step size, and the
/// reduced size is kept, so the loss never increases.
pub fn decoder_descent(
    dec: &dyn LatentDecoder,
    start: &[f32],
    target: &[f32],
    steps: usize,
    lr: f64,
    stage: &'static str,
) -> Result<DescentResult, SibError> {
    if steps == 0 {
        return Err(SibError::InvalidArgument("descent needs at least one step".into()));
    }
    if !(lr > 0.0) {
        return Err(SibError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if start.len() != dec.latent_dim() || target.len() != dec.image_len() {
        return Err(SibError::InvalidArgument("start or target has the wrong size".into()));
    }
    let mut z = start.to_vec();
    let (mut loss, mut grad) = dec.loss_and_grad(&z, target);
    if !loss.is_finite() {
        return Err(SibError::OptimizationFailure { stage, message: format!("initial loss is {loss}") });
    }
    let initial_loss = loss;
    let mut step = lr;
    let mut cand = vec![0f32; z.len()];
    'outer: for _ in 0..steps {
        loop {
            for ((c, &zi), &g) in cand.iter_mut().zip(&z).zip(&grad) {
                *c = (zi as f64 - step * g as f64) as f32;
            }
            let (l, g) = dec.loss_and_grad(&cand, target);
            if !l.is_finite() && !(step > 0.0) {
                return Err(SibError::OptimizationFailure { stage, message: "loss diverged".into() });
            }
            if l <= loss {
                std::mem::swap(&mut z, &mut cand);
                loss = l;
                grad = g;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                break 'outer;
            }
        }
    }
    Ok(DescentResult { z, initial_loss, final_loss: loss })
}

fn as_latent(vae: &LinearVae, z: Vec<f32>) -> Result<Tensor, SibError> {
    Ok(Tensor::new(vae.latent_shape().to_vec(), z).map_err(seedmem_toyldm::LdmError::from)?)
}

/// `argmin_z ||Dec(z) - I_s||^2` starting from `Enc(I_s)`.
pub fn decoder_invert_init(vae: &LinearVae, support: &ToyImage, steps: usize, lr: f64) -> Result<Tensor, SibError> {
    let start = vae.encode(support);
    let r = decoder_descent(vae, start.data(), support.data(), steps, lr, "support fit")?;
    as_latent(vae, r.z)
}

/// `argmin_z ||Dec(z) - I_q||^2` starting from `start`.
pub fn decoder_invert_towards(
    vae: &LinearVae,
    start: &Tensor,
    query: &ToyImage,
    steps: usize,
    lr: f64,
) -> Result<Tensor, SibError> {
    let r = decoder_descent(vae, start.data(), query.data(), steps, lr, "query fit")?;
    as_latent(vae, r.z)
}
