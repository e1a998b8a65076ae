//! Model and dataset configuration, read from `key = value` files with
//! `[section]` headers (TOML). Every field has a default, so an empty file is
//! the default configuration.

use crate::schedule::ScheduleKind;
use crate::LdmError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Disc,
    Square,
    Cross,
}

/// One concept of the dataset. `size` is the disc radius, the square
/// half-side or the cross half-length; `width` is the cross half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub count: usize,
    pub size: [f64; 2],
    #[serde(default = "default_width")]
    pub width: [f64; 2],
}

fn default_width() -> [f64; 2] {
    [1.5, 2.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub classes: Vec<ClassSpec>,
    /// Centre offset range in pixels, uniform in `[-jitter, jitter]` per axis.
    pub jitter: f64,
    pub intensity: [f64; 2],
    pub blur_sigma: f64,
    pub background: f64,
    /// Std of each grain DCT coefficient.
    pub texture_sigma: f64,
    /// First DCT frequency (per axis) of the grain band.
    pub texture_band: usize,
}

impl DatasetSpec {
    pub fn with_counts(mut self, per_class: usize) -> Self {
        for c in &mut self.classes {
            c.count = per_class;
        }
        self
    }

    pub fn num_concepts(&self) -> usize {
        self.classes.len()
    }

    pub fn concept_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Label id (1-based) of the class with the given name.
    pub fn concept_id(&self, name: &str) -> Option<u32> {
        self.classes.iter().position(|c| c.name == name).map(|i| i as u32 + 1)
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }

    pub fn validate(&self) -> Result<(), LdmError> {
        if self.classes.len() < 3 {
            return Err(LdmError::Config(format!("need at least 3 concepts, got {}", self.classes.len())));
        }
        for c in &self.classes {
            if c.count == 0 {
                return Err(LdmError::invalid(format!("class `{}` has count 0", c.name)));
            }
            if c.size[0] > c.size[1] || c.width[0] > c.width[1] || c.size[0] <= 0.0 {
                return Err(LdmError::invalid(format!("class `{}` has an invalid range", c.name)));
            }
        }
        if self.jitter < 0.0 || self.blur_sigma < 0.0 || self.texture_sigma < 0.0 {
            return Err(LdmError::invalid("jitter, blur and texture must be non-negative"));
        }
        if self.intensity[0] > self.intensity[1] {
            return Err(LdmError::invalid("intensity range is reversed"));
        }
        if self.texture_band >= crate::IMAGE_SIDE {
            return Err(LdmError::invalid("texture band starts beyond the image"));
        }
        Ok(())
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: vec![
                ClassSpec {
                    name: "disc".into(),
                    shape: ShapeKind::Disc,
                    count: 5000,
                    size: [5.0, 9.0],
                    width: default_width(),
                },
                ClassSpec {
                    name: "square".into(),
                    shape: ShapeKind::Square,
                    count: 5000,
                    size: [4.0, 7.5],
                    width: default_width(),
                },
                ClassSpec {
                    name: "cross".into(),
                    shape: ShapeKind::Cross,
                    count: 5000,
                    size: [6.0, 10.0],
                    width: default_width(),
                },
            ],
            jitter: 2.0,
            intensity: [0.6, 0.9],
            blur_sigma: 1.5,
            background: 0.05,
            texture_sigma: 0.005,
            texture_band: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_shape: [usize; 3],
    /// Isotropic std of the encoder posterior around `Enc(x)`.
    pub posterior_std: f32,
    /// First DCT frequency (per axis) given one channel per coefficient.
    pub grain_band: usize,
}

impl VaeConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_shape.iter().product()
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { latent_shape: [4, 8, 8], posterior_std: 0.01, grain_band: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { kind: ScheduleKind::ScaledLinear, steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub embedding_std: f32,
    pub out_scale: f32,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { hidden: 512, time_dim: 64, embedding_std: 0.1, out_scale: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    /// Fraction of steps after which the learning rate is multiplied by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f32,
    pub cond_dropout: f64,
    /// Std of Gaussian noise added to clean training latents. Without it the
    /// learned flow contracts sharply onto the data manifold and exact
    /// inversion amplifies small off-manifold errors.
    pub latent_noise: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 15_000,
            batch: 128,
            lr: 1e-3,
            decay_at: 0.7,
            decay_factor: 0.1,
            cond_dropout: 0.1,
            latent_noise: 0.1,
            seed: 0,
        }
    }
}

/// Everything needed to build a checkpoint from scratch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dataset: DatasetSpec,
    pub vae: VaeConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, LdmError> {
        let cfg: ModelConfig = toml::from_str(s).map_err(|e| LdmError::Config(e.to_string()))?;
        cfg.dataset.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl DatasetSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, LdmError> {
        let spec: DatasetSpec = toml::from_str(s).map_err(|e| LdmError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// SHA-256 (hex) of the TOML serialization of `value`.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let text = toml::to_string(value).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
