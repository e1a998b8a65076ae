//! Latent seeds with provenance and their binary file format.
//!
//! A seed file is an [`ArrayFile`] with magic `SMSEEDS1`: one array `seeds`
//! of shape `n x latent_shape`, and per-record metadata keys
//! `seed.<i>.<field>`.

use crate::InversionError;
use seedmem_core::binfmt::{ArrayFile, NamedArray};
use seedmem_core::Tensor;
use seedmem_toyldm::ConceptLabel;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

pub const SEED_FILE_MAGIC: [u8; 8] = *b"SMSEEDS1";
const SEED_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedMethod {
    Sampled,
    DdimInverted,
    RenoiseInverted,
    Sib,
}

impl SeedMethod {
    pub fn name(self) -> &'static str {
        match self {
            SeedMethod::Sampled => "sampled",
            SeedMethod::DdimInverted => "ddim-inverted",
            SeedMethod::RenoiseInverted => "renoise-inverted",
            SeedMethod::Sib => "sib",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SeedMethod::Sampled, SeedMethod::DdimInverted, SeedMethod::RenoiseInverted, SeedMethod::Sib]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

impl fmt::Display for SeedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A seed `z_T` with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeed {
    pub z: Tensor,
    pub method: SeedMethod,
    pub source: String,
    pub condition: ConceptLabel,
    /// Hyperparameters of the producing procedure, e.g. `steps`, `renoise_iters`.
    pub params: BTreeMap<String, String>,
}

impl LatentSeed {
    pub fn new(z: Tensor, method: SeedMethod, source: &str, condition: ConceptLabel) -> Result<Self, InversionError> {
        if !z.is_finite() {
            return Err(InversionError::InvalidArgument("seed has non-finite entries".into()));
        }
        if source.is_empty() {
            return Err(InversionError::InvalidArgument("seed source id is empty".into()));
        }
        Ok(LatentSeed { z, method, source: source.to_string(), condition, params: BTreeMap::new() })
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }
}

pub fn write_seed_file(path: &Path, seeds: &[LatentSeed]) -> Result<(), InversionError> {
    to_array_file(seeds)?.save(path).map_err(|e| InversionError::SeedFile(e.to_string()))
}

pub fn read_seed_file(path: &Path) -> Result<Vec<LatentSeed>, InversionError> {
    let f = ArrayFile::load(path, &SEED_FILE_MAGIC).map_err(|e| InversionError::SeedFile(e.to_string()))?;
    from_array_file(&f)
}

fn to_array_file(seeds: &[LatentSeed]) -> Result<ArrayFile, InversionError> {
    let mut f = ArrayFile::new(SEED_FILE_MAGIC, SEED_FILE_VERSION);
    let shape = seeds.first().map(|s| s.z.shape().to_vec()).unwrap_or_else(|| vec![0]);
    let mut data = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        if s.z.shape() != shape.as_slice() {
            return Err(InversionError::SeedFile("seeds in one file must share a shape".into()));
        }
        data.extend_from_slice(s.z.data());
        let m = &mut f.metadata;
        m.insert(format!("seed.{i}.method"), s.method.name().into());
        m.insert(format!("seed.{i}.source"), s.source.clone());
        m.insert(format!("seed.{i}.condition"), s.condition.to_string());
        for (k, v) in &s.params {
            m.insert(format!("seed.{i}.param.{k}"), v.clone());
        }
    }
    f.metadata.insert("count".into(), seeds.len().to_string());
    let mut full = vec![seeds.len()];
    full.extend(shape);
    f.arrays.push(NamedArray::new("seeds", full, data));
    Ok(f)
}

fn from_array_file(f: &ArrayFile) -> Result<Vec<LatentSeed>, InversionError> {
    let err = |m: String| InversionError::SeedFile(m);
    let count: usize = f.meta("count").map_err(|e| err(e.to_string()))?.parse().map_err(|_| err("bad count".into()))?;
    let arr = f.require("seeds").map_err(|e| err(e.to_string()))?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if arr.shape.first() != Some(&count) {
        return Err(err("seed array does not match the record count".into()));
    }
    let shape = arr.shape[1..].to_vec();
    let k: usize = shape.iter().product();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let get = |field: &str| f.meta(&format!("seed.{i}.{field}")).map_err(|e| err(e.to_string()));
        let method = SeedMethod::parse(get("method")?).ok_or_else(|| err(format!("seed {i} has an unknown method")))?;
        let condition = ConceptLabel(get("condition")?.parse().map_err(|_| err(format!("seed {i} has a bad condition")))?);
        let z = Tensor::new(shape.clone(), arr.data[i * k..(i + 1) * k].to_vec()).map_err(|e| err(e.to_string()))?;
        let mut seed = LatentSeed::new(z, method, get("source")?, condition)?;
        let prefix = format!("seed.{i}.param.");
        for (key, v) in f.metadata.range(prefix.clone()..) {
            match key.strip_prefix(&prefix) {
                Some(p) => {
                    seed.params.insert(p.to_string(), v.clone());
                }
                None => break,
            }
        }
        out.push(seed);
    }
    Ok(out)
}
