//! MLP noise predictor.
//!
//! ```text
//! h1  = silu(W1 z + Wt1 e(t) + b1 + E1[c])
//! h2  = silu(W2 h1 + Wt2 e(t) + b2 + E2[c])
//! out = W3 h2 + b3 + (Wg e(t) + bg) * z
//! ```
//!
//! `e(t)` is a sinusoidal embedding of `t * 1000 / T`. Row 0 of both concept
//! tables is the null condition; it is zero and never updated.

use crate::config::DenoiserConfig;
use crate::{ConceptLabel, LdmError};
use seedmem_core::linalg::gemm;
use seedmem_core::{RngStream, Tensor};

/// Anything that predicts noise for a batch of latents.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;

    /// Number of condition ids including the null id.
    fn num_conditions(&self) -> usize;

    /// `z` is row-major `n x latent_dim` with `n = t.len() = c.len()`.
    fn predict_batch(&self, z: &[f32], t: &[usize], c: &[ConceptLabel]) -> Result<Vec<f32>, LdmError>;

    fn predict(&self, z: &Tensor, t: usize, c: ConceptLabel) -> Result<Tensor, LdmError> {
        if z.len() != self.latent_dim() {
            return Err(LdmError::invalid(format!("latent has {} values, expected {}", z.len(), self.latent_dim())));
        }
        let out = self.predict_batch(z.data(), &[t], &[c])?;
        Ok(Tensor::new(z.shape().to_vec(), out)?)
    }
}

pub const PARAM_NAMES: [&str; 12] = ["w1", "wt1", "b1", "e1", "w2", "wt2", "b2", "e2", "w3", "b3", "wg", "bg"];

/// Flat parameter arrays, also used as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub w1: Vec<f32>,
    pub wt1: Vec<f32>,
    pub b1: Vec<f32>,
    pub e1: Vec<f32>,
    pub w2: Vec<f32>,
    pub wt2: Vec<f32>,
    pub b2: Vec<f32>,
    pub e2: Vec<f32>,
    pub w3: Vec<f32>,
    pub b3: Vec<f32>,
    pub wg: Vec<f32>,
    pub bg: Vec<f32>,
}

impl DenoiserParams {
    pub fn slices(&self) -> [&[f32]; 12] {
        [
            &self.w1, &self.wt1, &self.b1, &self.e1, &self.w2, &self.wt2, &self.b2, &self.e2, &self.w3, &self.b3,
            &self.wg, &self.bg,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f32]; 12] {
        [
            &mut self.w1,
            &mut self.wt1,
            &mut self.b1,
            &mut self.e1,
            &mut self.w2,
            &mut self.wt2,
            &mut self.b2,
            &mut self.e2,
            &mut self.w3,
            &mut self.b3,
            &mut self.wg,
            &mut self.bg,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f32>| vec![0f32; v.len()];
        DenoiserParams {
            w1: z(&self.w1),
            wt1: z(&self.wt1),
            b1: z(&self.b1),
            e1: z(&self.e1),
            w2: z(&self.w2),
            wt2: z(&self.wt2),
            b2: z(&self.b2),
            e2: z(&self.e2),
            w3: z(&self.w3),
            b3: z(&self.b3),
            wg: z(&self.wg),
            bg: z(&self.bg),
        }
    }

    pub fn num_values(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    latent_dim: usize,
    hidden: usize,
    time_dim: usize,
    num_conditions: usize,
    t_max: usize,
    params: DenoiserParams,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n: usize,
    te: Vec<f32>,
    a1: Vec<f32>,
    h1: Vec<f32>,
    a2: Vec<f32>,
    h2: Vec<f32>,
    conds: Vec<usize>,
}

/// `[sin(a_i), cos(a_i)]` with `a_i = t (1000 / T) 10000^(-i / half)`.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let scale = 1000.0 / t_max as f64;
    let mut out = vec![0f32; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * scale * freq;
        out[i] = a.sin() as f32;
        out[half + i] = a.cos() as f32;
    }
    out
}

fn silu(a: f32) -> f32 {
    a / (1.0 + (-a).exp())
}

fn silu_grad(a: f32) -> f32 {
    let s = 1.0 / (1.0 + (-a).exp());
    s * (1.0 + a * (1.0 - s))
}

fn uniform_fill(rng: &mut RngStream, n: usize, bound: f64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect()
}

impl Denoiser {
    /// Fresh network for `num_concepts` concepts plus the null condition.
    pub fn new(
        cfg: &DenoiserConfig,
        latent_dim: usize,
        num_concepts: usize,
        t_max: usize,
        rng: &mut RngStream,
    ) -> Result<Self, LdmError> {
        if latent_dim == 0 || cfg.hidden == 0 || cfg.time_dim < 2 || !cfg.time_dim.is_multiple_of(2) || t_max == 0 {
            return Err(LdmError::invalid("denoiser dimensions must be positive and time_dim even"));
        }
        let (k, h, td, nc) = (latent_dim, cfg.hidden, cfg.time_dim, num_concepts + 1);
        let bk = 1.0 / (k as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        let bt = 1.0 / (td as f64).sqrt();
        let table = |rng: &mut RngStream| {
            let mut e = vec![0f32; nc * h];
            for v in &mut e[h..] {
                *v = cfg.embedding_std * rng.normal();
            }
            e
        };
        let w1 = uniform_fill(rng, h * k, bk);
        let wt1 = uniform_fill(rng, h * td, bt);
        let b1 = uniform_fill(rng, h, bk);
        let e1 = table(rng);
        let w2 = uniform_fill(rng, h * h, bh);
        let wt2 = uniform_fill(rng, h * td, bt);
        let b2 = uniform_fill(rng, h, bh);
        let e2 = table(rng);
        let w3 = uniform_fill(rng, k * h, bh).into_iter().map(|v| v * cfg.out_scale).collect();
        let params = DenoiserParams {
            w1,
            wt1,
            b1,
            e1,
            w2,
            wt2,
            b2,
            e2,
            w3,
            b3: vec![0.0; k],
            wg: vec![0.0; k * td],
            bg: vec![0.0; k],
        };
        Ok(Denoiser { latent_dim: k, hidden: h, time_dim: td, num_conditions: nc, t_max, params })
    }

    pub fn from_params(
        latent_dim: usize,
        hidden: usize,
        time_dim: usize,
        num_conditions: usize,
        t_max: usize,
        params: DenoiserParams,
    ) -> Result<Self, LdmError> {
        let (k, h, td, nc) = (latent_dim, hidden, time_dim, num_conditions);
        let expected = [h * k, h * td, h, nc * h, h * h, h * td, h, nc * h, k * h, k, k * td, k];
        for ((name, s), e) in PARAM_NAMES.iter().zip(params.slices()).zip(expected) {
            if s.len() != e {
                return Err(LdmError::invalid(format!("parameter {name} has {} values, expected {e}", s.len())));
            }
        }
        if nc < 2 || !time_dim.is_multiple_of(2) || t_max == 0 {
            return Err(LdmError::invalid("invalid denoiser dimensions"));
        }
        Ok(Denoiser { latent_dim: k, hidden: h, time_dim: td, num_conditions: nc, t_max, params })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DenoiserParams {
        &mut self.params
    }

    /// Shape of each parameter array, in `PARAM_NAMES` order.
    pub fn param_shapes(&self) -> [Vec<usize>; 12] {
        let (k, h, td, nc) = (self.latent_dim, self.hidden, self.time_dim, self.num_conditions);
        [
            vec![h, k],
            vec![h, td],
            vec![h],
            vec![nc, h],
            vec![h, h],
            vec![h, td],
            vec![h],
            vec![nc, h],
            vec![k, h],
            vec![k],
            vec![k, td],
            vec![k],
        ]
    }

    /// Concept embedding rows (first layer table).
    pub fn embedding(&self, c: ConceptLabel) -> Result<&[f32], LdmError> {
        let ci = self.check_condition(c)?;
        Ok(&self.params.e1[ci * self.hidden..(ci + 1) * self.hidden])
    }

    fn check_condition(&self, c: ConceptLabel) -> Result<usize, LdmError> {
        if c.index() >= self.num_conditions {
            return Err(LdmError::invalid(format!(
                "unknown concept id {c}, model knows 0..{}",
                self.num_conditions - 1
            )));
        }
        Ok(c.index())
    }

    fn check_inputs(&self, z: &[f32], t: &[usize], c: &[ConceptLabel]) -> Result<Vec<usize>, LdmError> {
        let n = t.len();
        if c.len() != n || z.len() != n * self.latent_dim {
            return Err(LdmError::invalid(format!(
                "batch mismatch: {} latent values, {} timesteps, {} conditions",
                z.len(),
                n,
                c.len()
            )));
        }
        if let Some(&bad) = t.iter().find(|&&ti| ti > self.t_max) {
            return Err(LdmError::invalid(format!("timestep {bad} outside [0, {}]", self.t_max)));
        }
        c.iter().map(|&ci| self.check_condition(ci)).collect()
    }

    /// Forward pass keeping activations for [`backward`](Self::backward).
    pub fn forward_with_cache(
        &self,
        z: &[f32],
        t: &[usize],
        c: &[ConceptLabel],
    ) -> Result<(Vec<f32>, ForwardCache), LdmError> {
        let conds = self.check_inputs(z, t, c)?;
        let (n, k, h, td) = (t.len(), self.latent_dim, self.hidden, self.time_dim);
        let p = &self.params;
        let mut te = Vec::with_capacity(n * td);
        for &ti in t {
            te.extend(time_embedding(ti, self.t_max, td));
        }

        let layer = |input: &[f32], fan_in: usize, w: &[f32], wt: &[f32], b: &[f32], e: &[f32]| {
            let mut a = vec![0f32; n * h];
            for (row, &ci) in a.chunks_mut(h).zip(&conds) {
                for ((v, &bb), &ee) in row.iter_mut().zip(b).zip(&e[ci * h..(ci + 1) * h]) {
                    *v = bb + ee;
                }
            }
            gemm(n, fan_in, h, 1.0, input, false, w, true, 1.0, &mut a);
            gemm(n, td, h, 1.0, &te, false, wt, true, 1.0, &mut a);
            a
        };
        let a1 = layer(z, k, &p.w1, &p.wt1, &p.b1, &p.e1);
        let h1: Vec<f32> = a1.iter().map(|&a| silu(a)).collect();
        let a2 = layer(&h1, h, &p.w2, &p.wt2, &p.b2, &p.e2);
        let h2: Vec<f32> = a2.iter().map(|&a| silu(a)).collect();

        let mut gate = vec![0f32; n * k];
        for row in gate.chunks_mut(k) {
            row.copy_from_slice(&p.bg);
        }
        gemm(n, td, k, 1.0, &te, false, &p.wg, true, 1.0, &mut gate);
        let mut out = vec![0f32; n * k];
        for (row, (grow, zrow)) in out.chunks_mut(k).zip(gate.chunks(k).zip(z.chunks(k))) {
            for (((o, &b), &g), &zz) in row.iter_mut().zip(&p.b3).zip(grow).zip(zrow) {
                *o = b + g * zz;
            }
        }
        gemm(n, h, k, 1.0, &h2, false, &p.w3, true, 1.0, &mut out);
        Ok((out, ForwardCache { n, te, a1, h1, a2, h2, conds }))
    }

    /// Parameter gradients of `sum(dout * out)` for the cached forward pass.
    pub fn backward(&self, z: &[f32], cache: &ForwardCache, dout: &[f32]) -> DenoiserParams {
        let (n, k, h, td) = (cache.n, self.latent_dim, self.hidden, self.time_dim);
        let p = &self.params;
        let mut g = p.zeros_like();

        col_sums(dout, k, &mut g.b3);
        gemm(k, n, h, 1.0, dout, true, &cache.h2, false, 0.0, &mut g.w3);
        let dgate: Vec<f32> = dout.iter().zip(z).map(|(&d, &zz)| d * zz).collect();
        col_sums(&dgate, k, &mut g.bg);
        gemm(k, n, td, 1.0, &dgate, true, &cache.te, false, 0.0, &mut g.wg);

        let mut dh2 = vec![0f32; n * h];
        gemm(n, k, h, 1.0, dout, false, &p.w3, false, 0.0, &mut dh2);
        let da2: Vec<f32> = dh2.iter().zip(&cache.a2).map(|(&d, &a)| d * silu_grad(a)).collect();
        gemm(h, n, h, 1.0, &da2, true, &cache.h1, false, 0.0, &mut g.w2);
        gemm(h, n, td, 1.0, &da2, true, &cache.te, false, 0.0, &mut g.wt2);
        col_sums(&da2, h, &mut g.b2);
        scatter_rows(&da2, h, &cache.conds, &mut g.e2);

        let mut dh1 = vec![0f32; n * h];
        gemm(n, h, h, 1.0, &da2, false, &p.w2, false, 0.0, &mut dh1);
        let da1: Vec<f32> = dh1.iter().zip(&cache.a1).map(|(&d, &a)| d * silu_grad(a)).collect();
        gemm(h, n, k, 1.0, &da1, true, z, false, 0.0, &mut g.w1);
        gemm(h, n, td, 1.0, &da1, true, &cache.te, false, 0.0, &mut g.wt1);
        col_sums(&da1, h, &mut g.b1);
        scatter_rows(&da1, h, &cache.conds, &mut g.e1);
        g
    }

    /// Mean over the batch of `||out - target||^2` and its parameter gradients.
    pub fn mse_loss_and_grad(
        &self,
        z: &[f32],
        t: &[usize],
        c: &[ConceptLabel],
        target: &[f32],
    ) -> Result<(f64, DenoiserParams), LdmError> {
        let (out, cache) = self.forward_with_cache(z, t, c)?;
        if target.len() != out.len() {
            return Err(LdmError::invalid("target length does not match the batch"));
        }
        let n = t.len() as f64;
        let mut loss = 0f64;
        let dout: Vec<f32> = out
            .iter()
            .zip(target)
            .map(|(&o, &e)| {
                let d = o - e;
                loss += d as f64 * d as f64;
                (2.0 * d as f64 / n) as f32
            })
            .collect();
        Ok((loss / n, self.backward(z, &cache, &dout)))
    }
}

fn col_sums(m: &[f32], cols: usize, out: &mut [f32]) {
    let mut acc = vec![0f64; cols];
    for row in m.chunks(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

fn scatter_rows(m: &[f32], cols: usize, conds: &[usize], table: &mut [f32]) {
    for (row, &ci) in m.chunks(cols).zip(conds) {
        if ci == 0 {
            continue;
        }
        for (t, &v) in table[ci * cols..(ci + 1) * cols].iter_mut().zip(row) {
            *t += v;
        }
    }
}

impl NoisePredictor for Denoiser {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn num_conditions(&self) -> usize {
        self.num_conditions
    }

    fn predict_batch(&self, z: &[f32], t: &[usize], c: &[ConceptLabel]) -> Result<Vec<f32>, LdmError> {
        Ok(self.forward_with_cache(z, t, c)?.0)
    }
}
