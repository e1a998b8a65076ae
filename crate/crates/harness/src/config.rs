//! Experiment configuration: a TOML file plus `--dotted.key value` overrides.

use crate::HarnessError;
use seedmem_inversion::InversionParams;
use seedmem_sib::SibParams;
use seedmem_toyldm::config::canonical_hash;
use seedmem_toyldm::DatasetSpec;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Concept,
    Image,
    Shuffle,
    NormSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Concept => "concept",
            ExperimentKind::Image => "image",
            ExperimentKind::Shuffle => "shuffle",
            ExperimentKind::NormSweep => "norm-sweep",
        }
    }
}

/// Which checkpoint an experiment probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelRole {
    Vanilla,
    Erased,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Vanilla => "vanilla",
            ModelRole::Erased => "erased",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    pub vanilla: Option<PathBuf>,
    pub erased: Option<PathBuf>,
}

impl CheckpointPaths {
    pub fn get(&self, role: ModelRole) -> Option<&PathBuf> {
        match role {
            ModelRole::Vanilla => self.vanilla.as_ref(),
            ModelRole::Erased => self.erased.as_ref(),
        }
    }
}

/// Concept ids of the erased set `E` and the reference set `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptSets {
    pub erased: Vec<u32>,
    pub reference: Vec<u32>,
}

impl Default for ConceptSets {
    fn default() -> Self {
        ConceptSets { erased: vec![1], reference: vec![2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Counts {
    /// Images drawn from `E` (concept and shuffle experiments).
    pub erased: usize,
    /// Images drawn from `R`.
    pub reference: usize,
    pub queries: usize,
    pub supports: usize,
    /// Samples per baseline initialization.
    pub baseline_samples: usize,
    pub shuffle: usize,
    /// Seeds per norm in the norm sweep.
    pub norm_samples: usize,
    /// Images per class for the detection classifier.
    pub classifier_per_class: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Counts {
            erased: 50,
            reference: 50,
            queries: 5,
            supports: 10,
            baseline_samples: 10,
            shuffle: 20,
            norm_samples: 100,
            classifier_per_class: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SibSection {
    pub decoder_steps: usize,
    pub decoder_lr: f64,
}

impl Default for SibSection {
    fn default() -> Self {
        let p = SibParams::default();
        SibSection { decoder_steps: p.decoder_steps, decoder_lr: p.decoder_lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub model: ModelRole,
    /// Also run the concept experiment on the vanilla checkpoint and compare `d_N`.
    pub compare_vanilla: bool,
    /// Image experiment: also run the three baseline initializations.
    pub baselines: bool,
    /// Worker threads; 0 takes `ERASURE_MEMORY_THREADS` or all cores.
    pub threads: usize,
    pub out: PathBuf,
    /// Shuffle patch size in pixels.
    pub patch: usize,
    /// Seed norms of the sweep; empty selects `{0, 100, 128, 150, 180} * sqrt(k / 16384)`.
    pub alphas: Vec<f64>,
    pub histogram_bins: usize,
    pub checkpoints: CheckpointPaths,
    pub sets: ConceptSets,
    pub counts: Counts,
    pub inversion: InversionParams,
    pub sib: SibSection,
    pub dataset: DatasetSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Concept,
            seed: 0,
            model: ModelRole::Erased,
            compare_vanilla: false,
            baselines: false,
            threads: 0,
            out: PathBuf::from("out"),
            patch: 4,
            alphas: Vec::new(),
            histogram_bins: 40,
            checkpoints: CheckpointPaths::default(),
            sets: ConceptSets::default(),
            counts: Counts::default(),
            inversion: InversionParams::default(),
            sib: SibSection::default(),
            dataset: DatasetSpec::default(),
        }
    }
}

/// Norms of the sweep, scaled from a 16384-dimensional latent to `k`.
pub fn default_alphas(k: usize) -> Vec<f64> {
    let s = (k as f64 / 16384.0).sqrt();
    [0.0, 100.0, 128.0, 150.0, 180.0].iter().map(|a| a * s).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, then applies `(dotted.key, value)` overrides. Values are
    /// read as TOML literals when possible and as strings otherwise.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let table = apply_overrides(text, overrides)?;
        table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the resolved config without `threads` and `out`, which do not
    /// change results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.out = PathBuf::new();
        canonical_hash(&c)
    }

    pub fn sib_params(&self) -> SibParams {
        SibParams { decoder_steps: self.sib.decoder_steps, decoder_lr: self.sib.decoder_lr, inversion: self.inversion }
    }

    /// Checks set membership, counts and that referenced checkpoints exist.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.dataset.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let nc = self.dataset.num_concepts() as u32;
        let s = &self.sets;
        if s.erased.is_empty() || s.reference.is_empty() {
            return bad("erased and reference concept sets must be non-empty".into());
        }
        if let Some(c) = s.erased.iter().chain(&s.reference).find(|&&c| c == 0 || c > nc) {
            return bad(format!("concept id {c} is outside 1..={nc}"));
        }
        if let Some(c) = s.erased.iter().find(|c| s.reference.contains(c)) {
            return bad(format!("concept {c} is in both the erased and the reference set"));
        }
        if self.patch == 0 || !seedmem_toyldm::IMAGE_SIDE.is_multiple_of(self.patch) {
            return bad(format!("patch {} must divide the image side {}", self.patch, seedmem_toyldm::IMAGE_SIDE));
        }
        let c = &self.counts;
        match self.kind {
            ExperimentKind::Concept if c.erased == 0 || c.reference == 0 => return bad("concept experiment needs images in both sets".into()),
            ExperimentKind::Image if c.queries == 0 || c.supports < 2 => return bad("image experiment needs a query and at least 2 supports".into()),
            ExperimentKind::Image if self.baselines && c.baseline_samples < 2 => return bad("baselines need at least 2 samples".into()),
            ExperimentKind::Shuffle if c.shuffle == 0 => return bad("shuffle experiment needs images".into()),
            ExperimentKind::NormSweep if c.norm_samples == 0 => return bad("norm sweep needs samples".into()),
            _ => {}
        }
        if self.histogram_bins < 10 {
            return bad(format!("histogram_bins must be at least 10, got {}", self.histogram_bins));
        }
        let mut roles = vec![self.model];
        if self.compare_vanilla {
            roles.push(ModelRole::Vanilla);
        }
        for role in roles {
            match self.checkpoints.get(role) {
                None => return bad(format!("no {} checkpoint configured", role.name())),
                Some(p) if !p.is_file() => return bad(format!("{} checkpoint {} does not exist", role.name(), p.display())),
                _ => {}
            }
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parses `text` as a TOML table and sets each dotted key.
pub fn apply_overrides(text: &str, overrides: &[(String, String)]) -> Result<toml::Table, HarnessError> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    for (key, raw) in overrides {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(HarnessError::Config(format!("bad override key `{key}`")));
        }
        let mut table = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{p}` is not a section")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    }
    Ok(root)
}
