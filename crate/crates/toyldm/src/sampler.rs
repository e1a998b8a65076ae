//! Deterministic generation `z_T -> z_0 -> image`.

use crate::checkpoint::ModelCheckpoint;
use crate::dataset::{ToyImage, IMAGE_LEN};
use crate::denoiser::NoisePredictor;
use crate::schedule::NoiseSchedule;
use crate::{ConceptLabel, LdmError};
use seedmem_core::Tensor;

/// Runs the sampler over `timesteps` (decreasing, ending at 0) for a batch of
/// seeds, calling `observe(t, z_t)` on the starting latents and after every
/// step. `z` is row-major `n x latent_dim` and is updated in place.
pub fn generate_observed(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z: &mut [f32],
    c: &[ConceptLabel],
    timesteps: &[usize],
    mut observe: impl FnMut(usize, &[f32]),
) -> Result<(), LdmError> {
    let k = model.latent_dim();
    let n = c.len();
    if z.len() != n * k {
        return Err(LdmError::invalid(format!("{} latent values for {n} conditions of dim {k}", z.len())));
    }
    if timesteps.len() < 2 || timesteps.windows(2).any(|w| w[1] >= w[0]) || *timesteps.last().unwrap() != 0 {
        return Err(LdmError::invalid("timesteps must decrease strictly to 0"));
    }
    schedule.check_t(timesteps[0])?;
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(LdmError::InferenceFailure { step: timesteps[0], message: format!("non-finite seed value at {i}") });
    }
    observe(timesteps[0], z);
    let mut tvec = vec![0usize; n];
    for w in timesteps.windows(2) {
        let (t, s) = (w[0], w[1]);
        tvec.iter_mut().for_each(|v| *v = t);
        let eps = model.predict_batch(z, &tvec, c)?;
        schedule.generation_step(z, &eps, t, s);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(LdmError::InferenceFailure { step: t, message: "latent became non-finite".into() });
        }
        observe(s, z);
    }
    Ok(())
}

/// Final latents `z_0` for a batch of seeds using every timestep `T..0`.
pub fn generate_latents(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z_t: &[f32],
    c: &[ConceptLabel],
) -> Result<Vec<f32>, LdmError> {
    let ts: Vec<usize> = (0..=schedule.t_max()).rev().collect();
    let mut z = z_t.to_vec();
    generate_observed(model, schedule, &mut z, c, &ts, |_, _| {})?;
    Ok(z)
}

/// `Dec(z_0)` for one seed.
pub fn diffusion_inference(ckpt: &ModelCheckpoint, z_t: &Tensor, c: ConceptLabel) -> Result<ToyImage, LdmError> {
    let k = ckpt.vae.latent_dim();
    if z_t.len() != k {
        return Err(LdmError::invalid(format!("seed has {} values, expected {k}", z_t.len())));
    }
    let z0 = generate_latents(&ckpt.denoiser, &ckpt.schedule, z_t.data(), &[c])?;
    ToyImage::new(ckpt.vae.decode_batch(&z0, 1), c)
}

/// Decoded images for a batch of seeds, labelled with their conditions.
pub fn generate_images(ckpt: &ModelCheckpoint, z_t: &[f32], c: &[ConceptLabel]) -> Result<Vec<ToyImage>, LdmError> {
    let z0 = generate_latents(&ckpt.denoiser, &ckpt.schedule, z_t, c)?;
    let px = ckpt.vae.decode_batch(&z0, c.len());
    px.chunks(IMAGE_LEN).zip(c).map(|(p, &ci)| ToyImage::new(p.to_vec(), ci)).collect()
}
