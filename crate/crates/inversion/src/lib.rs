//! Seed recovery: map a clean latent `z_0` back to a seed `z_T`.
//!
//! One inversion step from `s` to `t > s` solves the generation step for
//! `z_t` with the noise prediction frozen:
//!
//! ```text
//! z_t = (z_s + gamma(t, s) eps(z, t, c)) / ratio(t, s)
//! ```
//!
//! Plain inversion evaluates `eps` at `z_s`. Refined inversion then iterates
//! the fixed point `z_t <- (z_s + gamma eps(z_t, t, c)) / ratio` so that the
//! generation step from the recovered `z_t` lands back on `z_s`.

mod seed;

pub use seed::{read_seed_file, write_seed_file, LatentSeed, SeedMethod, SEED_FILE_MAGIC};

use seedmem_core::{psnr, Tensor};
use seedmem_likelihood::nll_slice;
use seedmem_toyldm::{generate_latents, ConceptLabel, LdmError, ModelCheckpoint, NoisePredictor, NoiseSchedule, ToyImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inversion failure at step {step}: {message}")]
    InversionFailure { step: usize, message: String },
    #[error(transparent)]
    Model(#[from] LdmError),
    #[error("seed file error: {0}")]
    SeedFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionParams {
    /// Number of inversion jumps; `0` uses every timestep of the schedule.
    pub steps: usize,
    /// Noise evaluations per jump; `1` is plain inversion.
    pub renoise_iters: usize,
}

impl Default for InversionParams {
    fn default() -> Self {
        InversionParams { steps: 0, renoise_iters: 5 }
    }
}

impl InversionParams {
    pub fn resolved_steps(&self, schedule: &NoiseSchedule) -> usize {
        if self.steps == 0 {
            schedule.t_max()
        } else {
            self.steps
        }
    }
}

/// One plain inversion step `z_{t-1} -> z_t`.
pub fn ddim_invert_step(
    ckpt: &ModelCheckpoint,
    z_prev: &Tensor,
    t: usize,
    c: ConceptLabel,
) -> Result<Tensor, InversionError> {
    if t == 0 || t > ckpt.schedule.t_max() {
        return Err(InversionError::InvalidArgument(format!("timestep {t} outside [1, {}]", ckpt.schedule.t_max())));
    }
    let eps = ckpt.denoiser.predict(z_prev, t, c)?;
    let zt = ckpt.schedule.inversion_step(z_prev.data(), eps.data(), t, t - 1);
    Ok(Tensor::new(z_prev.shape().to_vec(), zt).map_err(LdmError::from)?)
}

/// Batched refined inversion. `z0` is row-major `n x latent_dim`.
///
/// `on_residual(t, j, r)` receives the per-sample norms `||z_t^(j+1) - z_t^(j)||`
/// for refinement iteration `j` at timestep `t`.
pub fn renoise_invert_batch(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z0: &[f32],
    c: &[ConceptLabel],
    steps: usize,
    renoise_iters: usize,
    mut on_residual: impl FnMut(usize, usize, &[f64]),
) -> Result<Vec<f32>, InversionError> {
    if renoise_iters == 0 {
        return Err(InversionError::InvalidArgument("renoise_iters must be at least 1".into()));
    }
    let k = model.latent_dim();
    let n = c.len();
    if z0.len() != n * k {
        return Err(InversionError::InvalidArgument(format!("{} latent values for {n} conditions", z0.len())));
    }
    let mut ts = schedule.timesteps(steps).map_err(|e| InversionError::InvalidArgument(e.to_string()))?;
    ts.reverse();
    let mut z = z0.to_vec();
    let mut tvec = vec![0usize; n];
    let mut resid = vec![0f64; n];
    for w in ts.windows(2) {
        let (s, t) = (w[0], w[1]);
        tvec.iter_mut().for_each(|v| *v = t);
        let eps = model.predict_batch(&z, &tvec, c)?;
        let mut zt = schedule.inversion_step(&z, &eps, t, s);
        for j in 0..renoise_iters - 1 {
            let eps = model.predict_batch(&zt, &tvec, c)?;
            let zn = schedule.inversion_step(&z, &eps, t, s);
            for ((r, a), b) in resid.iter_mut().zip(zn.chunks(k)).zip(zt.chunks(k)) {
                *r = a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
            }
            on_residual(t, j, &resid);
            zt = zn;
        }
        if let Some(i) = zt.iter().position(|v| !v.is_finite()) {
            return Err(InversionError::InversionFailure {
                step: t,
                message: format!("non-finite latent in sample {}", i / k),
            });
        }
        z = zt;
    }
    Ok(z)
}

/// Refined inversion of a single latent; `renoise_iters = 1` is plain inversion.
pub fn renoise_invert(
    ckpt: &ModelCheckpoint,
    z0: &Tensor,
    c: ConceptLabel,
    steps: usize,
    renoise_iters: usize,
) -> Result<LatentSeed, InversionError> {
    if steps == 0 {
        return Err(InversionError::InvalidArgument("steps must be at least 1".into()));
    }
    let z = renoise_invert_batch(&ckpt.denoiser, &ckpt.schedule, z0.data(), &[c], steps, renoise_iters, |_, _, _| {})?;
    let method = if renoise_iters == 1 { SeedMethod::DdimInverted } else { SeedMethod::RenoiseInverted };
    LatentSeed::new(Tensor::new(z0.shape().to_vec(), z).map_err(LdmError::from)?, method, "latent", c)
        .map(|s| s.with_param("steps", steps).with_param("renoise_iters", renoise_iters))
}

/// Seed, reconstruction and scores of one inverted image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInversion {
    pub seed: LatentSeed,
    pub reconstruction: ToyImage,
    pub psnr: f64,
    pub nll: f64,
}

/// Batched version of [`invert_image`]; `ids[i]` names image `i` in provenance.
pub fn invert_latents(
    ckpt: &ModelCheckpoint,
    z0: &[f32],
    targets: &[&ToyImage],
    conds: &[ConceptLabel],
    ids: &[String],
    params: &InversionParams,
) -> Result<Vec<ImageInversion>, InversionError> {
    let n = conds.len();
    if targets.len() != n || ids.len() != n {
        return Err(InversionError::InvalidArgument("targets, conditions and ids must have equal length".into()));
    }
    let steps = params.resolved_steps(&ckpt.schedule);
    let k = ckpt.vae.latent_dim();
    let seeds = renoise_invert_batch(&ckpt.denoiser, &ckpt.schedule, z0, conds, steps, params.renoise_iters, |_, _, _| {})?;
    let z_rec = generate_latents(&ckpt.denoiser, &ckpt.schedule, &seeds, conds)?;
    let px = ckpt.vae.decode_batch(&z_rec, n);
    let method = if params.renoise_iters == 1 { SeedMethod::DdimInverted } else { SeedMethod::RenoiseInverted };
    let shape = ckpt.vae.latent_shape().to_vec();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let z = seeds[i * k..(i + 1) * k].to_vec();
        let nll = nll_slice(&z, 0.0, 1.0).map_err(|e| InversionError::InvalidArgument(e.to_string()))?;
        let seed = LatentSeed::new(Tensor::new(shape.clone(), z).map_err(LdmError::from)?, method, &ids[i], conds[i])?
            .with_param("steps", steps)
            .with_param("renoise_iters", params.renoise_iters);
        let reconstruction = ToyImage::new(px[i * seedmem_toyldm::IMAGE_LEN..(i + 1) * seedmem_toyldm::IMAGE_LEN].to_vec(), conds[i])?;
        let p = psnr(&targets[i].pixels, &reconstruction.pixels, 1.0).map_err(LdmError::from)?;
        out.push(ImageInversion { seed, reconstruction, psnr: p, nll });
    }
    Ok(out)
}

/// Encode, invert, regenerate and score a batch of images.
pub fn invert_images(
    ckpt: &ModelCheckpoint,
    images: &[&ToyImage],
    conds: &[ConceptLabel],
    ids: &[String],
    params: &InversionParams,
) -> Result<Vec<ImageInversion>, InversionError> {
    let pixels: Vec<f32> = images.iter().flat_map(|i| i.data().iter().copied()).collect();
    let z0 = ckpt.vae.encode_batch(&pixels, images.len());
    invert_latents(ckpt, &z0, images, conds, ids, params)
}

/// `z_0 = Enc(image)`, refined inversion, regeneration and PSNR against `image`.
pub fn invert_image(
    ckpt: &ModelCheckpoint,
    image: &ToyImage,
    c: ConceptLabel,
    id: &str,
    params: &InversionParams,
) -> Result<ImageInversion, InversionError> {
    Ok(invert_images(ckpt, &[image], &[c], &[id.to_string()], params)?.remove(0))
}
