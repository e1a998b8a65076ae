//! Concept erasure by negative-guidance finetuning.
//!
//! The denoiser is finetuned so that, under the target condition, it predicts
//! `e_f(z, t, null) - eta (e_f(z, t, target) - e_f(z, t, null))`, where `e_f`
//! is the frozen starting model. Training latents come from the frozen
//! model's own sampling trajectories (no image data is needed). A
//! preservation term keeps predictions under the other conditions close to
//! the frozen model.

use seedmem_core::RngStream;
use seedmem_toyldm::optim::Adam;
use seedmem_toyldm::{
    generate_observed, ConceptDetector, ConceptLabel, LdmError, ModelCheckpoint, NoisePredictor,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const METHOD_NAME: &str = "negative-guidance-finetune";

#[derive(Debug, Error)]
pub enum ErasureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training failure: {0}")]
    TrainingFailure(String),
    #[error(transparent)]
    Model(#[from] LdmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErasureConfig {
    pub target: u32,
    /// Negative guidance strength.
    pub eta: f32,
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
    /// Timesteps are drawn uniformly from `[max(1, ceil(lo T)), ceil(hi T)]`.
    pub t_range: [f64; 2],
    /// Weight of the term keeping non-target predictions at the frozen values.
    pub preservation: f32,
    /// Seeds per condition in the trajectory pool.
    pub pool_seeds: usize,
    pub seed: u64,
}

impl Default for ErasureConfig {
    fn default() -> Self {
        ErasureConfig {
            target: 1,
            eta: 1.0,
            steps: 2000,
            lr: 1e-4,
            batch: 64,
            t_range: [0.0, 1.0],
            preservation: 1.0,
            pool_seeds: 256,
            seed: 0,
        }
    }
}

impl ErasureConfig {
    pub fn target_label(&self) -> ConceptLabel {
        ConceptLabel(self.target)
    }

    /// Inclusive timestep bounds for a schedule with `t_max` steps.
    pub fn timestep_bounds(&self, t_max: usize) -> Result<(usize, usize), ErasureError> {
        let [lo, hi] = self.t_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(ErasureError::InvalidArgument(format!("bad timestep range {:?}", self.t_range)));
        }
        let a = ((lo * t_max as f64).ceil() as usize).max(1);
        let b = ((hi * t_max as f64).ceil() as usize).max(a);
        Ok((a, b.min(t_max)))
    }

    fn validate(&self, ckpt: &ModelCheckpoint) -> Result<(), ErasureError> {
        if self.target == 0 {
            return Err(ErasureError::InvalidArgument("cannot erase the null concept".into()));
        }
        if self.target as usize >= ckpt.denoiser.num_conditions() {
            return Err(ErasureError::InvalidArgument(format!("model has no concept {}", self.target)));
        }
        if !(self.eta >= 0.0) || !(self.lr > 0.0) || self.batch == 0 || self.pool_seeds == 0 {
            return Err(ErasureError::InvalidArgument("eta >= 0, lr > 0, batch > 0 and pool_seeds > 0 required".into()));
        }
        self.timestep_bounds(ckpt.schedule.t_max())?;
        Ok(())
    }
}

/// Latents `z_t` visited while sampling from the frozen model, for every
/// condition, seed and timestep.
struct TrajectoryPool {
    k: usize,
    t_len: usize,
    seeds: usize,
    latents: Vec<f32>,
}

impl TrajectoryPool {
    fn build(ckpt: &ModelCheckpoint, seeds: usize, rng: &mut RngStream) -> Result<Self, ErasureError> {
        let k = ckpt.vae.latent_dim();
        let t_max = ckpt.schedule.t_max();
        let t_len = t_max + 1;
        let nc = ckpt.denoiser.num_conditions();
        let mut latents = vec![0f32; nc * seeds * t_len * k];
        let ts: Vec<usize> = (0..=t_max).rev().collect();
        for c in 0..nc {
            let mut z = vec![0f32; seeds * k];
            rng.fill_normal(&mut z);
            let labels = vec![ConceptLabel(c as u32); seeds];
            let base = c * seeds * t_len * k;
            generate_observed(&ckpt.denoiser, &ckpt.schedule, &mut z, &labels, &ts, |t, zt| {
                for (i, row) in zt.chunks(k).enumerate() {
                    let off = base + (i * t_len + t) * k;
                    latents[off..off + k].copy_from_slice(row);
                }
            })?;
        }
        Ok(TrajectoryPool { k, t_len, seeds, latents })
    }

    fn get(&self, c: usize, seed: usize, t: usize) -> &[f32] {
        let off = ((c * self.seeds + seed) * self.t_len + t) * self.k;
        &self.latents[off..off + self.k]
    }
}

/// Returns an erased copy of `ckpt`; the input is left untouched.
pub fn erase_concept(ckpt: &ModelCheckpoint, cfg: &ErasureConfig) -> Result<ModelCheckpoint, ErasureError> {
    cfg.validate(ckpt)?;
    let mut out = ckpt.clone();
    record_provenance(&mut out, cfg);
    if cfg.steps == 0 {
        return Ok(out);
    }
    let root = RngStream::new(cfg.seed, 0);
    let frozen = &ckpt.denoiser;
    let pool = TrajectoryPool::build(ckpt, cfg.pool_seeds, &mut root.derive(1))?;
    let mut r = root.derive(2);
    let (t_lo, t_hi) = cfg.timestep_bounds(ckpt.schedule.t_max())?;
    let (b, k) = (cfg.batch, ckpt.vae.latent_dim());
    let nc = frozen.num_conditions();
    let target = cfg.target_label();
    let mut opt = Adam::new(out.denoiser.params());

    let mut z = vec![0f32; 2 * b * k];
    let mut ts = vec![0usize; 2 * b];
    let mut cs = vec![ConceptLabel::NULL; 2 * b];
    let mut frozen_c = vec![ConceptLabel::NULL; 3 * b];
    for step in 0..cfg.steps {
        for i in 0..b {
            let t = r.int_inclusive(t_lo, t_hi);
            let pc = r.index(nc);
            let ps = r.index(pool.seeds);
            let keep = r.index(nc) as u32;
            let zt = pool.get(pc, ps, t);
            z[i * k..(i + 1) * k].copy_from_slice(zt);
            z[(b + i) * k..(b + i + 1) * k].copy_from_slice(zt);
            ts[i] = t;
            ts[b + i] = t;
            cs[i] = target;
            cs[b + i] = if keep == cfg.target { ConceptLabel::NULL } else { ConceptLabel(keep) };
        }
        // frozen predictions: [null | target | preserved condition]
        let mut fz = Vec::with_capacity(3 * b * k);
        fz.extend_from_slice(&z[..b * k]);
        fz.extend_from_slice(&z[..b * k]);
        fz.extend_from_slice(&z[b * k..]);
        let mut ft = ts[..b].to_vec();
        ft.extend_from_slice(&ts[..b]);
        ft.extend_from_slice(&ts[b..]);
        for i in 0..b {
            frozen_c[i] = ConceptLabel::NULL;
            frozen_c[b + i] = target;
            frozen_c[2 * b + i] = cs[b + i];
        }
        let fe = frozen.predict_batch(&fz, &ft, &frozen_c)?;
        let mut goal = vec![0f32; 2 * b * k];
        for j in 0..b * k {
            let (en, et) = (fe[j], fe[b * k + j]);
            goal[j] = en - cfg.eta * (et - en);
            goal[b * k + j] = fe[2 * b * k + j];
        }

        let (pred, cache) = out.denoiser.forward_with_cache(&z, &ts, &cs)?;
        let mut loss = 0f64;
        let dout: Vec<f32> = pred
            .iter()
            .zip(&goal)
            .enumerate()
            .map(|(j, (&p, &g))| {
                let w = if j < b * k { 1.0 } else { cfg.preservation };
                let d = p - g;
                loss += (w * d * d) as f64;
                2.0 * w * d / b as f32
            })
            .collect();
        let loss = loss / b as f64;
        if !loss.is_finite() {
            return Err(ErasureError::TrainingFailure(format!("loss became {loss} at step {step}")));
        }
        let grads = out.denoiser.backward(&z, &cache, &dout);
        opt.update(out.denoiser.params_mut(), &grads, cfg.lr);
    }
    Ok(out)
}

fn record_provenance(ckpt: &mut ModelCheckpoint, cfg: &ErasureConfig) {
    let name = ckpt
        .meta
        .concept_names
        .get(cfg.target as usize - 1)
        .cloned()
        .unwrap_or_else(|| cfg.target.to_string());
    let e = &mut ckpt.meta.erasure;
    e.insert("method".into(), METHOD_NAME.into());
    e.insert("target".into(), cfg.target.to_string());
    e.insert("target_name".into(), name);
    e.insert("eta".into(), cfg.eta.to_string());
    e.insert("steps".into(), cfg.steps.to_string());
    e.insert("lr".into(), cfg.lr.to_string());
    e.insert("batch".into(), cfg.batch.to_string());
    e.insert("t_range".into(), format!("{},{}", cfg.t_range[0], cfg.t_range[1]));
    e.insert("preservation".into(), cfg.preservation.to_string());
    e.insert("pool_seeds".into(), cfg.pool_seeds.to_string());
    e.insert("seed".into(), cfg.seed.to_string());
}

/// Fraction of `n` samples conditioned on `concept` that `detector` assigns to `concept`.
pub fn erasure_efficacy(
    ckpt: &ModelCheckpoint,
    concept: ConceptLabel,
    n: usize,
    rng: &mut RngStream,
    detector: &dyn ConceptDetector,
) -> Result<f64, ErasureError> {
    if n < 20 {
        return Err(ErasureError::InvalidArgument(format!("need at least 20 samples, got {n}")));
    }
    let k = ckpt.vae.latent_dim();
    let mut z = vec![0f32; n * k];
    rng.fill_normal(&mut z);
    let images = seedmem_toyldm::generate_images(ckpt, &z, &vec![concept; n])?;
    let hits = images.iter().filter(|img| detector.detect(img) == concept).count();
    Ok(hits as f64 / n as f64)
}
