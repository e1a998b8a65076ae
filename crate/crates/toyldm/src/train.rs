//! Epsilon-prediction training of the denoiser.

use crate::checkpoint::ModelCheckpoint;
use crate::config::ModelConfig;
use crate::dataset::{make_dataset, ToyImage, IMAGE_LEN};
use crate::denoiser::Denoiser;
use crate::optim::Adam;
use crate::schedule::{build_schedule, NoiseSchedule};
use crate::vae::{train_vae, LinearVae};
use crate::{ConceptLabel, LdmError};
use seedmem_core::RngStream;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Batch loss per step: mean over the batch of the per-sample squared error.
    pub losses: Vec<f32>,
}

impl TrainLog {
    fn window_mean(&self, from: usize, to: usize) -> f64 {
        let w = &self.losses[from..to.max(from + 1).min(self.losses.len())];
        w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64
    }

    /// Mean loss over the first `frac` of the steps (at least one step).
    pub fn head_mean(&self, frac: f64) -> f64 {
        let n = ((self.losses.len() as f64 * frac) as usize).max(1);
        self.window_mean(0, n)
    }

    /// Mean loss over the last `frac` of the steps (at least one step).
    pub fn tail_mean(&self, frac: f64) -> f64 {
        let n = ((self.losses.len() as f64 * frac) as usize).max(1);
        self.window_mean(self.losses.len() - n, self.losses.len())
    }
}

/// Trains a fresh denoiser on `data` encoded by `vae`.
///
/// Each step draws a batch with replacement, perturbs `z_0 = Enc(x)` with
/// `latent_noise`, replaces the label by the null condition with probability
/// `cond_dropout`, draws `t` uniformly from `1..=T` and minimizes
/// `||eps - eps_theta(z_t, t, c)||^2`.
pub fn train_denoiser(
    vae: &LinearVae,
    data: &[ToyImage],
    schedule: &NoiseSchedule,
    cfg: &ModelConfig,
    rng: &RngStream,
) -> Result<(Denoiser, TrainLog), LdmError> {
    let tc = &cfg.train;
    let num_concepts = cfg.dataset.num_concepts();
    if data.is_empty() {
        return Err(LdmError::invalid("no training images"));
    }
    if tc.batch == 0 || tc.steps == 0 {
        return Err(LdmError::invalid("batch size and step count must be positive"));
    }
    if !(tc.latent_noise >= 0.0 && tc.latent_noise.is_finite()) {
        return Err(LdmError::invalid(format!("latent noise must be finite and non-negative, got {}", tc.latent_noise)));
    }
    if let Some(img) = data.iter().find(|i| i.label.is_null() || i.label.index() > num_concepts) {
        return Err(LdmError::invalid(format!("image label {} is not a concept of the dataset", img.label)));
    }
    let k = vae.latent_dim();
    let pixels: Vec<f32> = data.iter().flat_map(|i| i.data().iter().copied()).collect();
    debug_assert_eq!(pixels.len(), data.len() * IMAGE_LEN);
    let latents = vae.encode_batch(&pixels, data.len());

    let mut init_rng = rng.derive(1);
    let mut den = Denoiser::new(&cfg.denoiser, k, num_concepts, schedule.t_max(), &mut init_rng)?;
    let mut opt = Adam::new(den.params());
    let mut r = rng.derive(2);
    let decay_step = (tc.steps as f64 * tc.decay_at) as usize;
    let (b, t_max) = (tc.batch, schedule.t_max());
    let noise = tc.latent_noise;
    let mut log = TrainLog { losses: Vec::with_capacity(tc.steps) };
    let mut zt = vec![0f32; b * k];
    let mut eps = vec![0f32; b * k];
    let mut ts = vec![0usize; b];
    let mut cs = vec![ConceptLabel::NULL; b];
    for step in 0..tc.steps {
        r.fill_normal(&mut eps);
        for i in 0..b {
            let idx = r.index(data.len());
            cs[i] = if r.uniform() < tc.cond_dropout { ConceptLabel::NULL } else { data[idx].label };
            ts[i] = r.int_inclusive(1, t_max);
            let a = schedule.alpha_bar_at(ts[i]);
            let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
            let z0 = &latents[idx * k..(idx + 1) * k];
            for ((o, &z), &e) in zt[i * k..(i + 1) * k].iter_mut().zip(z0).zip(&eps[i * k..(i + 1) * k]) {
                *o = sa * (z + noise * r.normal()) + sn * e;
            }
        }
        let (loss, grads) = den.mse_loss_and_grad(&zt, &ts, &cs, &eps)?;
        if !loss.is_finite() {
            return Err(LdmError::TrainingFailure(format!("loss became {loss} at step {step}")));
        }
        log.losses.push(loss as f32);
        let lr = if step >= decay_step { tc.lr * tc.decay_factor } else { tc.lr };
        opt.update(den.params_mut(), &grads, lr);
    }
    Ok((den, log))
}

/// Renders the dataset, fits the autoencoder and trains the denoiser.
pub fn build_model(cfg: &ModelConfig) -> Result<(ModelCheckpoint, TrainLog), LdmError> {
    let root = RngStream::new(cfg.train.seed, 0);
    let data = make_dataset(&cfg.dataset, &root.derive(10))?;
    let vae = train_vae(&data, &cfg.vae)?;
    let schedule = build_schedule(cfg.schedule.steps, cfg.schedule.kind)?;
    let (den, log) = train_denoiser(&vae, &data, &schedule, cfg, &root.derive(20))?;
    let ckpt = ModelCheckpoint::new(schedule, vae, den, cfg.train.seed, cfg.dataset.hash(), cfg.dataset.concept_names());
    Ok((ckpt, log))
}
