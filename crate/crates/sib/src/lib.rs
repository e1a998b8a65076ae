//! Sequential inversion block (SIB).
//!
//! For a query image `I_q` and a support image `I_s`:
//!
//! 1. fit `z_s = argmin ||Dec(z) - I_s||^2` starting from `Enc(I_s)`;
//! 2. from `z_s`, descend on `||Dec(z) - I_q||^2` to get `z_(s->q)`;
//! 3. invert `z_(s->q)` to a seed with refined inversion.
//!
//! The decoder is nearly flat in many directions, so different supports end
//! in different latents that all decode to the query, and their seeds are
//! distinct "memories" of it.

mod descent;
mod geometry;
mod shuffle;

pub use descent::{decoder_descent, decoder_invert_init, decoder_invert_towards, DescentResult};
pub use geometry::{geometry_report, GeometryReport};
pub use shuffle::{patch_permute, patch_shuffle, patch_unshuffle};

use seedmem_core::{RngStream, Tensor};
use seedmem_inversion::{invert_image, invert_latents, ImageInversion, InversionError, InversionParams, LatentSeed, SeedMethod};
use seedmem_toyldm::{ConceptLabel, LdmError, ModelCheckpoint, ToyImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SibError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimization failure in {stage}: {message}")]
    OptimizationFailure { stage: &'static str, message: String },
    #[error("inversion stage: {0}")]
    Inversion(#[from] InversionError),
    #[error(transparent)]
    Model(#[from] LdmError),
    #[error("{failed} of {total} supports failed; first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SibParams {
    pub decoder_steps: usize,
    pub decoder_lr: f64,
    pub inversion: InversionParams,
}

impl Default for SibParams {
    fn default() -> Self {
        SibParams { decoder_steps: 3000, decoder_lr: 0.2, inversion: InversionParams::default() }
    }
}

/// One SIB seed for a query.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMemory {
    pub seed: LatentSeed,
    pub support_id: String,
    pub query_id: String,
    /// PSNR of the regenerated image against the query.
    pub psnr: f64,
    pub nll: f64,
}

impl SeedMemory {
    fn from_inversion(inv: ImageInversion, support_id: &str, query_id: &str, method: SeedMethod) -> Self {
        let mut seed = inv.seed;
        seed.method = method;
        seed.source = query_id.to_string();
        seed.params.insert("support".into(), support_id.to_string());
        SeedMemory { seed, support_id: support_id.to_string(), query_id: query_id.to_string(), psnr: inv.psnr, nll: inv.nll }
    }
}

/// Starting latents (step 2 output) for every support.
fn sib_starts(ckpt: &ModelCheckpoint, supports: &[&ToyImage], query: &ToyImage, params: &SibParams) -> Vec<Result<Vec<f32>, SibError>> {
    supports
        .iter()
        .map(|s| {
            let z_s = decoder_invert_init(&ckpt.vae, s, params.decoder_steps, params.decoder_lr)?;
            let z = decoder_invert_towards(&ckpt.vae, &z_s, query, params.decoder_steps, params.decoder_lr)?;
            Ok(z.into_data())
        })
        .collect()
}

/// Inverts each start latent; failures stay per item.
fn invert_starts(
    ckpt: &ModelCheckpoint,
    starts: Vec<Result<Vec<f32>, SibError>>,
    query: &ToyImage,
    c: ConceptLabel,
    ids: &[String],
    query_id: &str,
    params: &SibParams,
    method: SeedMethod,
) -> Vec<Result<SeedMemory, SibError>> {
    let ok: Vec<usize> = (0..starts.len()).filter(|&i| starts[i].is_ok()).collect();
    let z0: Vec<f32> = ok.iter().flat_map(|&i| starts[i].as_ref().unwrap().iter().copied()).collect();
    let run = |z: &[f32], idx: &[usize]| {
        let targets = vec![query; idx.len()];
        let conds = vec![c; idx.len()];
        let names: Vec<String> = idx.iter().map(|&i| ids[i].clone()).collect();
        invert_latents(ckpt, z, &targets, &conds, &names, &params.inversion)
    };
    let mut batch = match run(&z0, &ok) {
        Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(_) => {
            // isolate the failing items
            let k = ckpt.vae.latent_dim();
            ok.iter()
                .enumerate()
                .map(|(j, &i)| run(&z0[j * k..(j + 1) * k], &[i]).map(|mut v| v.remove(0)))
                .collect()
        }
    }
    .into_iter();
    starts
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s?;
            let inv = batch.next().expect("one result per start")?;
            Ok(SeedMemory::from_inversion(inv, &ids[i], query_id, method))
        })
        .collect()
}

/// Runs the block for one support image.
pub fn sequential_inversion_block(
    ckpt: &ModelCheckpoint,
    support: &ToyImage,
    support_id: &str,
    query: &ToyImage,
    query_id: &str,
    c: ConceptLabel,
    params: &SibParams,
) -> Result<SeedMemory, SibError> {
    let starts = sib_starts(ckpt, &[support], query, params);
    invert_starts(ckpt, starts, query, c, &[support_id.to_string()], query_id, params, SeedMethod::Sib).remove(0)
}

/// Keeps successes; fails when more than half of the items failed.
fn apply_failure_budget(results: Vec<Result<SeedMemory, SibError>>) -> Result<Vec<SeedMemory>, SibError> {
    let total = results.len();
    let mut first = None;
    let mut ok = Vec::with_capacity(total);
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => {
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let failed = total - ok.len();
    if failed * 2 > total {
        return Err(SibError::TooManyFailures { failed, total, first: first.unwrap_or_default() });
    }
    Ok(ok)
}

/// Memories of one query plus the direct seed they are measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCollection {
    pub direct: ImageInversion,
    pub memories: Vec<SeedMemory>,
    pub failed: usize,
    pub geometry: GeometryReport,
}

fn collect(direct: ImageInversion, results: Vec<Result<SeedMemory, SibError>>) -> Result<MemoryCollection, SibError> {
    let total = results.len();
    let memories = apply_failure_budget(results)?;
    let seeds: Vec<&[f32]> = memories.iter().map(|m| m.seed.z.data()).collect();
    let geometry = geometry_report(&seeds, direct.seed.z.data())?;
    Ok(MemoryCollection { failed: total - memories.len(), direct, memories, geometry })
}

/// SIB for every support, with geometry relative to the direct seed of the query.
pub fn collect_memories(
    ckpt: &ModelCheckpoint,
    query: &ToyImage,
    query_id: &str,
    supports: &[(String, &ToyImage)],
    c: ConceptLabel,
    params: &SibParams,
) -> Result<MemoryCollection, SibError> {
    if supports.len() < 2 {
        return Err(SibError::InvalidArgument(format!("need at least 2 supports, got {}", supports.len())));
    }
    let direct = invert_image(ckpt, query, c, query_id, &params.inversion)?;
    let imgs: Vec<&ToyImage> = supports.iter().map(|s| s.1).collect();
    let ids: Vec<String> = supports.iter().map(|s| s.0.clone()).collect();
    let starts = sib_starts(ckpt, &imgs, query, params);
    collect(direct, invert_starts(ckpt, starts, query, c, &ids, query_id, params, SeedMethod::Sib))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Latents drawn from the encoder posterior around the query.
    SampleNear,
    /// Posterior draws plus channel-normalized noise scaled by [`FAR_NOISE_SCALE`].
    SampleFar,
    /// SIB whose decoder search starts from a random latent instead of a support image.
    SibRandomNoise,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SampleNear => "sample-near",
            BaselineKind::SampleFar => "sample-far",
            BaselineKind::SibRandomNoise => "sib-random-noise",
        }
    }
}

pub const FAR_NOISE_SCALE: f32 = 10.0;

/// Adds noise that has unit norm across channels at every spatial position, times `scale`.
pub fn add_channel_normalized_noise(z: &mut [f32], shape: [usize; 3], scale: f32, rng: &mut RngStream) {
    let [ch, h, w] = shape;
    let plane = h * w;
    let mut noise = vec![0f32; ch * plane];
    rng.fill_normal(&mut noise);
    for p in 0..plane {
        let norm = (0..ch).map(|c| noise[c * plane + p].powi(2)).sum::<f32>().sqrt().max(1e-12);
        for c in 0..ch {
            z[c * plane + p] += scale * noise[c * plane + p] / norm;
        }
    }
}

/// The comparison initializations, each followed by inversion and scoring.
pub fn baseline_initializations(
    ckpt: &ModelCheckpoint,
    query: &ToyImage,
    query_id: &str,
    c: ConceptLabel,
    kind: BaselineKind,
    n: usize,
    rng: &mut RngStream,
    params: &SibParams,
) -> Result<MemoryCollection, SibError> {
    if n < 2 {
        return Err(SibError::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let direct = invert_image(ckpt, query, c, query_id, &params.inversion)?;
    let k = ckpt.vae.latent_dim();
    let shape = ckpt.vae.latent_shape();
    let ids: Vec<String> = (0..n).map(|i| format!("{}-{i}", kind.name())).collect();
    let starts: Vec<Result<Vec<f32>, SibError>> = match kind {
        BaselineKind::SampleNear | BaselineKind::SampleFar => (0..n)
            .map(|_| {
                let mut z = ckpt.vae.sample_posterior(query, rng).into_data();
                if kind == BaselineKind::SampleFar {
                    add_channel_normalized_noise(&mut z, shape, FAR_NOISE_SCALE, rng);
                }
                Ok(z)
            })
            .collect(),
        BaselineKind::SibRandomNoise => (0..n)
            .map(|_| {
                let mut z = vec![0f32; k];
                rng.fill_normal(&mut z);
                let start = Tensor::new(shape.to_vec(), z).map_err(LdmError::from)?;
                Ok(decoder_invert_towards(&ckpt.vae, &start, query, params.decoder_steps, params.decoder_lr)?.into_data())
            })
            .collect(),
    };
    let method = SeedMethod::RenoiseInverted;
    let mut results = invert_starts(ckpt, starts, query, c, &ids, query_id, params, method);
    for m in results.iter_mut().flatten() {
        m.seed.params.insert("baseline".into(), kind.name().into());
    }
    collect(direct, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory(id: &str) -> Result<SeedMemory, SibError> {
        let seed = LatentSeed::new(Tensor::from_vec(vec![1.0, 2.0]), SeedMethod::Sib, "q", ConceptLabel(1)).unwrap();
        Ok(SeedMemory { seed, support_id: id.into(), query_id: "q".into(), psnr: 30.0, nll: 3.0 })
    }

    fn failure() -> Result<SeedMemory, SibError> {
        Err(SibError::OptimizationFailure { stage: "x", message: "boom".into() })
    }

    #[test]
    fn half_failed_is_tolerated_more_is_not() {
        let ok = apply_failure_budget(vec![memory("a"), failure(), memory("b"), failure()]).unwrap();
        assert_eq!(ok.iter().map(|m| m.support_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        match apply_failure_budget(vec![memory("a"), failure(), failure()]) {
            Err(SibError::TooManyFailures { failed: 2, total: 3, first }) => assert!(first.contains("boom")),
            other => panic!("{other:?}"),
        }
    }
}
