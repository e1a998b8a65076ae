//! Closed-form linear autoencoder.
//!
//! The image is split by DCT band. Low-band content (everything outside the
//! grain band) is projected on its leading principal components, each scaled
//! to unit variance ("shape" channels). Each grain-band DCT coefficient gets
//! its own channel, scaled by the pooled grain std. The latent vector is
//! `[shape channels, grain channels]` viewed as `latent_shape`.

use crate::config::VaeConfig;
use crate::dataset::{ToyImage, IMAGE_LEN, IMAGE_SIDE};
use crate::{dct, LdmError};
use nalgebra::{DMatrix, SymmetricEigen};
use seedmem_core::linalg::gemm;
use seedmem_core::{RngStream, Tensor};

/// Differentiable decoder with a clamped output, as used by latent searches.
pub trait LatentDecoder {
    fn latent_dim(&self) -> usize;
    fn image_len(&self) -> usize;
    /// Decoded image clamped to `[0, 1]`.
    fn decode_vec(&self, z: &[f32]) -> Vec<f32>;
    /// `||Dec(z) - target||^2` and its gradient in `z`. The clamp passes
    /// gradient only where the unclamped output lies strictly inside `(0, 1)`.
    fn loss_and_grad(&self, z: &[f32], target: &[f32]) -> (f64, Vec<f32>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearVae {
    latent_shape: [usize; 3],
    shape_dims: usize,
    posterior_std: f32,
    mean: Vec<f32>,
    /// `latent_dim x IMAGE_LEN`, row `i` maps centred pixels to channel `i`.
    encoder: Vec<f32>,
    /// `IMAGE_LEN x latent_dim`, column `i` is the image of channel `i`.
    decoder: Vec<f32>,
}

/// Fits the autoencoder to `images` in closed form.
pub fn train_vae(images: &[ToyImage], cfg: &VaeConfig) -> Result<LinearVae, LdmError> {
    if images.len() < 100 {
        return Err(LdmError::invalid(format!("need at least 100 images, got {}", images.len())));
    }
    let k = cfg.latent_dim();
    let band = cfg.grain_band;
    let hi: Vec<usize> = (0..IMAGE_LEN).filter(|&i| dct::in_high_band(i / IMAGE_SIDE, i % IMAGE_SIDE, band)).collect();
    let lo: Vec<usize> = (0..IMAGE_LEN).filter(|&i| !dct::in_high_band(i / IMAGE_SIDE, i % IMAGE_SIDE, band)).collect();
    if k <= hi.len() {
        return Err(LdmError::invalid(format!(
            "latent dim {k} leaves no shape channels next to {} grain channels",
            hi.len()
        )));
    }
    let ns = k - hi.len();
    if ns > lo.len() {
        return Err(LdmError::invalid("latent dim exceeds the image dimension"));
    }

    let n = images.len();
    let mut mean = vec![0f64; IMAGE_LEN];
    for img in images {
        for (m, &p) in mean.iter_mut().zip(img.data()) {
            *m += p as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let d = dct::dct_matrix();
    let nl = lo.len();
    let mut low = vec![0f64; n * nl];
    let mut hi_sq = 0f64;
    let mut centred = vec![0f64; IMAGE_LEN];
    for (r, img) in images.iter().enumerate() {
        for ((c, &p), &m) in centred.iter_mut().zip(img.data()).zip(&mean) {
            *c = p as f64 - m;
        }
        let coef = dct::forward(&d, &centred);
        for (j, &i) in lo.iter().enumerate() {
            low[r * nl + j] = coef[i];
        }
        hi_sq += hi.iter().map(|&i| coef[i] * coef[i]).sum::<f64>();
    }
    let grain_std = (hi_sq / (n * hi.len()) as f64).sqrt();

    let mut cov = vec![0f64; nl * nl];
    // SAFETY: row-major n x nl input, nl x nl output, strides match the buffers.
    unsafe {
        matrixmultiply::dgemm(
            nl,
            n,
            nl,
            1.0 / (n - 1) as f64,
            low.as_ptr(),
            1,
            nl as isize,
            low.as_ptr(),
            nl as isize,
            1,
            0.0,
            cov.as_mut_ptr(),
            nl as isize,
            1,
        );
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(nl, nl, &cov));
    let mut order: Vec<usize> = (0..nl).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let weakest = eig.eigenvalues[order[ns - 1]];
    if !(top > 0.0) || !(weakest > 1e-12 * top) || !(grain_std > 0.0) {
        return Err(LdmError::TrainingFailure(format!(
            "degenerate data: leading variance {top:.3e}, variance of shape channel {ns} {weakest:.3e}, grain std {grain_std:.3e}"
        )));
    }

    let mut encoder = vec![0f32; k * IMAGE_LEN];
    let mut decoder = vec![0f32; IMAGE_LEN * k];
    let mut coef = vec![0f64; IMAGE_LEN];
    for ch in 0..k {
        coef.iter_mut().for_each(|c| *c = 0.0);
        let gain = if ch < ns {
            let col = order[ch];
            for (j, &i) in lo.iter().enumerate() {
                coef[i] = eig.eigenvectors[(j, col)];
            }
            eig.eigenvalues[col].sqrt()
        } else {
            coef[hi[ch - ns]] = 1.0;
            grain_std
        };
        let basis = dct::inverse(&d, &coef);
        for (p, &b) in basis.iter().enumerate() {
            encoder[ch * IMAGE_LEN + p] = (b / gain) as f32;
            decoder[p * k + ch] = (b * gain) as f32;
        }
    }
    Ok(LinearVae {
        latent_shape: cfg.latent_shape,
        shape_dims: ns,
        posterior_std: cfg.posterior_std,
        mean: mean.iter().map(|&m| m as f32).collect(),
        encoder,
        decoder,
    })
}

impl LinearVae {
    pub fn from_parts(
        latent_shape: [usize; 3],
        shape_dims: usize,
        posterior_std: f32,
        mean: Vec<f32>,
        encoder: Vec<f32>,
        decoder: Vec<f32>,
    ) -> Result<Self, LdmError> {
        let k: usize = latent_shape.iter().product();
        if mean.len() != IMAGE_LEN || encoder.len() != k * IMAGE_LEN || decoder.len() != k * IMAGE_LEN {
            return Err(LdmError::invalid("autoencoder array sizes do not match the latent shape"));
        }
        if shape_dims > k {
            return Err(LdmError::invalid("shape channel count exceeds latent dim"));
        }
        Ok(LinearVae { latent_shape, shape_dims, posterior_std, mean, encoder, decoder })
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.latent_shape
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_shape.iter().product()
    }

    /// Number of leading principal-component channels.
    pub fn shape_dims(&self) -> usize {
        self.shape_dims
    }

    pub fn posterior_std(&self) -> f32 {
        self.posterior_std
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn encoder(&self) -> &[f32] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[f32] {
        &self.decoder
    }

    /// Squared norm of each decoder column.
    pub fn gain_sq(&self) -> Vec<f64> {
        let k = self.latent_dim();
        let mut g = vec![0f64; k];
        for p in 0..IMAGE_LEN {
            for (ch, gs) in g.iter_mut().enumerate() {
                let v = self.decoder[p * k + ch] as f64;
                *gs += v * v;
            }
        }
        g
    }

    /// Posterior mean `Enc(x)` as a latent tensor.
    pub fn encode(&self, img: &ToyImage) -> Tensor {
        let z = self.encode_batch(img.data(), 1);
        Tensor::new(self.latent_shape.to_vec(), z).expect("latent length")
    }

    /// Draw from the posterior `N(Enc(x), posterior_std^2 I)`.
    pub fn sample_posterior(&self, img: &ToyImage, rng: &mut RngStream) -> Tensor {
        let mut z = self.encode(img);
        for v in z.data_mut() {
            *v += self.posterior_std * rng.normal();
        }
        z
    }

    pub fn decode(&self, z: &Tensor) -> Result<ToyImage, LdmError> {
        if z.len() != self.latent_dim() {
            return Err(LdmError::invalid(format!("latent has {} values, expected {}", z.len(), self.latent_dim())));
        }
        ToyImage::new(self.decode_vec(z.data()), crate::ConceptLabel::NULL)
    }

    /// Row-major `n x IMAGE_LEN` pixels to `n x latent_dim` latents.
    pub fn encode_batch(&self, pixels: &[f32], n: usize) -> Vec<f32> {
        let k = self.latent_dim();
        let mut centred = pixels.to_vec();
        for row in centred.chunks_mut(IMAGE_LEN) {
            for (v, &m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        let mut z = vec![0f32; n * k];
        gemm(n, IMAGE_LEN, k, 1.0, &centred, false, &self.encoder, true, 0.0, &mut z);
        z
    }

    /// Unclamped `n x IMAGE_LEN` decoder output.
    pub fn decode_raw_batch(&self, z: &[f32], n: usize) -> Vec<f32> {
        let k = self.latent_dim();
        let mut x = vec![0f32; n * IMAGE_LEN];
        for row in x.chunks_mut(IMAGE_LEN) {
            row.copy_from_slice(&self.mean);
        }
        gemm(n, k, IMAGE_LEN, 1.0, z, false, &self.decoder, true, 1.0, &mut x);
        x
    }

    /// Clamped `n x IMAGE_LEN` decoder output.
    pub fn decode_batch(&self, z: &[f32], n: usize) -> Vec<f32> {
        let mut x = self.decode_raw_batch(z, n);
        x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        x
    }
}

impl LatentDecoder for LinearVae {
    fn latent_dim(&self) -> usize {
        LinearVae::latent_dim(self)
    }

    fn image_len(&self) -> usize {
        IMAGE_LEN
    }

    fn decode_vec(&self, z: &[f32]) -> Vec<f32> {
        self.decode_batch(z, 1)
    }

    fn loss_and_grad(&self, z: &[f32], target: &[f32]) -> (f64, Vec<f32>) {
        let k = LinearVae::latent_dim(self);
        let raw = self.decode_raw_batch(z, 1);
        let mut loss = 0f64;
        let mut resid = vec![0f32; IMAGE_LEN];
        for ((r, &x), &t) in resid.iter_mut().zip(&raw).zip(target) {
            let diff = x.clamp(0.0, 1.0) - t;
            loss += diff as f64 * diff as f64;
            if x > 0.0 && x < 1.0 {
                *r = 2.0 * diff;
            }
        }
        let mut grad = vec![0f32; k];
        seedmem_core::linalg::matvec_t(IMAGE_LEN, k, &self.decoder, &resid, &mut grad);
        (loss, grad)
    }
}
