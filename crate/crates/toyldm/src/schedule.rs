//! Cumulative noise levels and deterministic step coefficients.
//!
//! `alpha_bar[t]` is the cumulative signal fraction at step `t`, with
//! `alpha_bar[0] = 1`. A step from `t` down to `s < t` is
//! `z_s = ratio(t, s) z_t - gamma(t, s) eps`, where
//! `ratio = sqrt(a_s / a_t)` and
//! `gamma = sqrt(a_s (1 - a_t) / a_t) - sqrt(1 - a_s)`.

use crate::LdmError;
use seedmem_core::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Squared-cosine schedule with offset 0.008, floored at 1e-4.
    Cosine,
    /// `beta_t` linear in sqrt-space from 0.0085 to 0.12.
    ScaledLinear,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::ScaledLinear => "scaled-linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self, LdmError> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "scaled-linear" => Ok(ScheduleKind::ScaledLinear),
            other => Err(LdmError::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

pub const COSINE_FLOOR: f64 = 1e-4;
const COSINE_OFFSET: f64 = 0.008;
const BETA_START: f64 = 0.0085;
const BETA_END: f64 = 0.12;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: Option<ScheduleKind>,
    alpha_bar: Vec<f64>,
    gamma: Vec<f64>,
}

pub fn build_schedule(t_max: usize, kind: ScheduleKind) -> Result<NoiseSchedule, LdmError> {
    if t_max < 10 {
        return Err(LdmError::invalid(format!("schedule needs T >= 10, got {t_max}")));
    }
    let alpha_bar: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let x = (t as f64 / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            let f0 = f(0);
            (0..=t_max)
                .map(|t| if t == 0 { 1.0 } else { (1.0 - COSINE_FLOOR) * (f(t) / f0).max(0.0) + COSINE_FLOOR })
                .collect()
        }
        ScheduleKind::ScaledLinear => {
            let (lo, hi) = (BETA_START.sqrt(), BETA_END.sqrt());
            let mut ab = Vec::with_capacity(t_max + 1);
            ab.push(1.0);
            let mut acc = 1.0;
            for i in 0..t_max {
                let b = lo + (hi - lo) * i as f64 / (t_max - 1) as f64;
                acc *= 1.0 - b * b;
                ab.push(acc);
            }
            ab
        }
    };
    let mut s = NoiseSchedule::from_alpha_bar(alpha_bar)?;
    s.kind = Some(kind);
    Ok(s)
}

impl NoiseSchedule {
    /// Schedule from explicit levels; requires `a_0 = 1` and strictly
    /// decreasing positive values. Used for checkpoints and short test schedules.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, LdmError> {
        if alpha_bar.len() < 2 {
            return Err(LdmError::invalid("schedule needs at least one step"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(LdmError::invalid("alpha_bar[0] must be 1"));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(LdmError::invalid("alpha_bar must be positive and strictly decreasing"));
            }
        }
        let mut gamma = vec![0.0; alpha_bar.len()];
        for t in 1..alpha_bar.len() {
            gamma[t] = gamma_coef(alpha_bar[t], alpha_bar[t - 1]);
        }
        Ok(NoiseSchedule { kind: None, alpha_bar, gamma })
    }

    pub fn kind(&self) -> Option<ScheduleKind> {
        self.kind
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Single-step coefficients `gamma_t`, index 0 unused.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn check_t(&self, t: usize) -> Result<(), LdmError> {
        if t > self.t_max() {
            return Err(LdmError::invalid(format!("timestep {t} outside [0, {}]", self.t_max())));
        }
        Ok(())
    }

    /// `gamma` for the jump `t -> s`.
    pub fn gamma_between(&self, t: usize, s: usize) -> f64 {
        gamma_coef(self.alpha_bar[t], self.alpha_bar[s])
    }

    /// `sqrt(a_s / a_t)` for the jump `t -> s`.
    pub fn ratio_between(&self, t: usize, s: usize) -> f64 {
        (self.alpha_bar[s] / self.alpha_bar[t]).sqrt()
    }

    /// Decreasing timesteps `T = t_0 > t_1 > ... > 0` using `steps` jumps.
    pub fn timesteps(&self, steps: usize) -> Result<Vec<usize>, LdmError> {
        let tm = self.t_max();
        if steps == 0 || steps > tm {
            return Err(LdmError::invalid(format!("step count {steps} outside [1, {tm}]")));
        }
        let mut ts: Vec<usize> = (0..=steps).map(|i| (tm * (steps - i) + steps / 2) / steps).collect();
        ts.dedup();
        Ok(ts)
    }

    /// `z_s = ratio z_t - gamma eps`, in place.
    pub fn generation_step(&self, z: &mut [f32], eps: &[f32], t: usize, s: usize) {
        let r = self.ratio_between(t, s) as f32;
        let g = self.gamma_between(t, s) as f32;
        for (zi, &e) in z.iter_mut().zip(eps) {
            *zi = r * *zi - g * e;
        }
    }

    /// Inverse of [`generation_step`](Self::generation_step) for a given eps:
    /// `z_t = (z_s + gamma eps) / ratio`.
    pub fn inversion_step(&self, z_s: &[f32], eps: &[f32], t: usize, s: usize) -> Vec<f32> {
        let r = self.ratio_between(t, s);
        let g = self.gamma_between(t, s);
        z_s.iter().zip(eps).map(|(&z, &e)| ((z as f64 + g * e as f64) / r) as f32).collect()
    }
}

fn gamma_coef(a_t: f64, a_s: f64) -> f64 {
    (a_s * (1.0 - a_t) / a_t).sqrt() - (1.0 - a_s).sqrt()
}

/// `sqrt(a_t) z0 + sqrt(1 - a_t) eps`.
pub fn forward_diffuse(z0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor, LdmError> {
    schedule.check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(LdmError::invalid(format!("noise shape {:?} != latent shape {:?}", eps.shape(), z0.shape())));
    }
    let a = schedule.alpha_bar_at(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z0.zip(eps, |z, e| (sa * z as f64 + sn * e as f64) as f32)?)
}
