//! Model checkpoint: schedule, autoencoder, denoiser and provenance.
//!
//! Stored as an [`ArrayFile`] with magic `SMCKPT01`. Scalars live in the
//! metadata block; the schedule levels are written as shortest round-trip
//! decimal strings so reloading is exact.

use crate::denoiser::{Denoiser, DenoiserParams, PARAM_NAMES};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::vae::LinearVae;
use crate::LdmError;
use seedmem_core::binfmt::{ArrayFile, NamedArray};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SMCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;
const ERASURE_PREFIX: &str = "erasure.";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub training_seed: u64,
    /// Hash of the dataset spec the model was trained on.
    pub dataset_hash: String,
    /// Concept names in label order (label `i + 1` is `concept_names[i]`).
    pub concept_names: Vec<String>,
    /// Empty for a vanilla model; filled by concept erasure.
    pub erasure: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub schedule: NoiseSchedule,
    pub vae: LinearVae,
    pub denoiser: Denoiser,
    pub meta: CheckpointMeta,
}

impl ModelCheckpoint {
    pub fn new(
        schedule: NoiseSchedule,
        vae: LinearVae,
        denoiser: Denoiser,
        training_seed: u64,
        dataset_hash: String,
        concept_names: Vec<String>,
    ) -> Self {
        ModelCheckpoint {
            schedule,
            vae,
            denoiser,
            meta: CheckpointMeta { training_seed, dataset_hash, concept_names, erasure: BTreeMap::new() },
        }
    }

    pub fn is_erased(&self) -> bool {
        !self.meta.erasure.is_empty()
    }

    /// Label id of a concept name.
    pub fn concept_id(&self, name: &str) -> Option<u32> {
        self.meta.concept_names.iter().position(|c| c == name).map(|i| i as u32 + 1)
    }

    pub fn to_array_file(&self) -> ArrayFile {
        let mut f = ArrayFile::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let m = &mut f.metadata;
        let s = &self.schedule;
        m.insert("schedule.kind".into(), s.kind().map_or("custom", |k| k.name()).into());
        m.insert("schedule.t_max".into(), s.t_max().to_string());
        let ab: Vec<String> = s.alpha_bar().iter().map(|a| a.to_string()).collect();
        m.insert("schedule.alpha_bar".into(), ab.join(","));
        let shape = self.vae.latent_shape();
        m.insert("vae.latent_shape".into(), format!("{},{},{}", shape[0], shape[1], shape[2]));
        m.insert("vae.shape_dims".into(), self.vae.shape_dims().to_string());
        m.insert("vae.posterior_std".into(), self.vae.posterior_std().to_string());
        let d = &self.denoiser;
        m.insert("denoiser.hidden".into(), d.hidden().to_string());
        m.insert("denoiser.time_dim".into(), d.time_dim().to_string());
        m.insert("training_seed".into(), self.meta.training_seed.to_string());
        m.insert("dataset_hash".into(), self.meta.dataset_hash.clone());
        m.insert("concepts".into(), self.meta.concept_names.join(","));
        for (k, v) in &self.meta.erasure {
            m.insert(format!("{ERASURE_PREFIX}{k}"), v.clone());
        }
        let k = self.vae.latent_dim();
        f.arrays.push(NamedArray::new("vae.mean", vec![crate::dataset::IMAGE_LEN], self.vae.mean().to_vec()));
        f.arrays.push(NamedArray::new("vae.encoder", vec![k, crate::dataset::IMAGE_LEN], self.vae.encoder().to_vec()));
        f.arrays.push(NamedArray::new("vae.decoder", vec![crate::dataset::IMAGE_LEN, k], self.vae.decoder().to_vec()));
        for ((name, data), shape) in PARAM_NAMES.iter().zip(d.params().slices()).zip(d.param_shapes()) {
            f.arrays.push(NamedArray::new(format!("denoiser.{name}"), shape, data.to_vec()));
        }
        f
    }

    pub fn from_array_file(f: &ArrayFile) -> Result<Self, LdmError> {
        if f.version != CHECKPOINT_VERSION {
            return Err(LdmError::Checkpoint(format!("unsupported checkpoint version {}", f.version)));
        }
        let meta = |key: &str| f.meta(key).map_err(|e| LdmError::Checkpoint(e.to_string()));
        let num = |key: &str| -> Result<usize, LdmError> {
            meta(key)?.parse().map_err(|_| LdmError::Checkpoint(format!("metadata `{key}` is not an integer")))
        };
        let alpha_bar: Vec<f64> = meta("schedule.alpha_bar")?
            .split(',')
            .map(|v| v.parse().map_err(|_| LdmError::Checkpoint(format!("bad schedule level `{v}`"))))
            .collect::<Result<_, _>>()?;
        let mut schedule = NoiseSchedule::from_alpha_bar(alpha_bar)?;
        if schedule.t_max() != num("schedule.t_max")? {
            return Err(LdmError::Checkpoint("schedule length does not match t_max".into()));
        }
        let kind = meta("schedule.kind")?;
        if kind != "custom" {
            let kind = ScheduleKind::parse(kind)?;
            let rebuilt = crate::schedule::build_schedule(schedule.t_max(), kind)?;
            if rebuilt.alpha_bar() != schedule.alpha_bar() {
                return Err(LdmError::Checkpoint(format!("stored levels do not match a {} schedule", kind.name())));
            }
            schedule = rebuilt;
        }

        let dims: Vec<usize> = meta("vae.latent_shape")?
            .split(',')
            .map(|v| v.parse().map_err(|_| LdmError::Checkpoint("bad latent shape".into())))
            .collect::<Result<_, _>>()?;
        let latent_shape: [usize; 3] =
            dims.try_into().map_err(|_| LdmError::Checkpoint("latent shape must have 3 dims".into()))?;
        let posterior_std: f32 =
            meta("vae.posterior_std")?.parse().map_err(|_| LdmError::Checkpoint("bad posterior std".into()))?;
        let arr = |name: &str| -> Result<Vec<f32>, LdmError> {
            Ok(f.require(name).map_err(|e| LdmError::Checkpoint(e.to_string()))?.data.clone())
        };
        let vae = LinearVae::from_parts(
            latent_shape,
            num("vae.shape_dims")?,
            posterior_std,
            arr("vae.mean")?,
            arr("vae.encoder")?,
            arr("vae.decoder")?,
        )?;

        let e1 = f.require("denoiser.e1").map_err(|e| LdmError::Checkpoint(e.to_string()))?;
        let num_conditions = *e1.shape.first().ok_or_else(|| LdmError::Checkpoint("empty embedding table".into()))?;
        let mut vals = PARAM_NAMES.iter().map(|n| arr(&format!("denoiser.{n}")));
        let mut next = || vals.next().expect("twelve parameters");
        let params = DenoiserParams {
            w1: next()?,
            wt1: next()?,
            b1: next()?,
            e1: next()?,
            w2: next()?,
            wt2: next()?,
            b2: next()?,
            e2: next()?,
            w3: next()?,
            b3: next()?,
            wg: next()?,
            bg: next()?,
        };
        let denoiser = Denoiser::from_params(
            vae.latent_dim(),
            num("denoiser.hidden")?,
            num("denoiser.time_dim")?,
            num_conditions,
            schedule.t_max(),
            params,
        )?;

        let concepts = meta("concepts")?;
        let concept_names: Vec<String> =
            if concepts.is_empty() { Vec::new() } else { concepts.split(',').map(String::from).collect() };
        if concept_names.len() + 1 != num_conditions {
            return Err(LdmError::Checkpoint("concept names do not match the embedding table".into()));
        }
        let erasure = f
            .metadata
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(ERASURE_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        let training_seed =
            meta("training_seed")?.parse().map_err(|_| LdmError::Checkpoint("bad training seed".into()))?;
        Ok(ModelCheckpoint {
            schedule,
            vae,
            denoiser,
            meta: CheckpointMeta { training_seed, dataset_hash: meta("dataset_hash")?.to_string(), concept_names, erasure },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_array_file().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LdmError> {
        let f = ArrayFile::from_bytes(bytes, &CHECKPOINT_MAGIC).map_err(|e| LdmError::Checkpoint(e.to_string()))?;
        Self::from_array_file(&f)
    }

    pub fn save(&self, path: &Path) -> Result<(), LdmError> {
        self.to_array_file().save(path).map_err(|e| LdmError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LdmError> {
        let f = ArrayFile::load(path, &CHECKPOINT_MAGIC).map_err(|e| LdmError::Checkpoint(e.to_string()))?;
        Self::from_array_file(&f)
    }
}
