//! Experiment reports. Every aggregate is a pure function of the rows (and,
//! for geometry, of the seeds the rows point to), so a report can be checked
//! by recomputation.

use crate::config::ExperimentKind;
use crate::HarnessError;
use seedmem_inversion::{write_seed_file, LatentSeed};
use seedmem_likelihood::{clt_reference, emd_1d, emd_to_reference, histogram_export, NllSampleSet, SetTag};
use seedmem_sib::{geometry_report, GeometryReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
/// Group name of the reference set `R`.
pub const REFERENCE_GROUP: &str = "R";
/// Group name of the directly inverted query in the image experiment.
pub const DIRECT_GROUP: &str = "direct";
pub const PSNR_GATE: f64 = 25.0;

/// One scored image or seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub model: String,
    pub group: String,
    pub concept: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub psnr: Option<f64>,
    pub nll: Option<f64>,
    pub detected: Option<bool>,
    /// Index into the run's seed list (`seeds.bin`).
    pub seed_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Row {
    pub fn new(id: impl Into<String>, model: &str, group: &str, concept: u32) -> Self {
        Row {
            id: id.into(),
            model: model.into(),
            group: group.into(),
            concept,
            query: None,
            support: None,
            alpha: None,
            psnr: None,
            nll: None,
            detected: None,
            seed_index: None,
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Aggregates of one `(model, group)`. The EMD columns compare the group's
/// seed NLLs with the normal reference `N` and with the `R` group of the
/// same model; `d_n = EMD(group, N) / EMD(R, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub group: String,
    pub count: usize,
    pub failed: usize,
    pub mean_psnr: Option<f64>,
    pub mean_nll: Option<f64>,
    pub detection_rate: Option<f64>,
    pub emd_to_normal: Option<f64>,
    pub emd_reference_to_normal: Option<f64>,
    pub emd_to_reference: Option<f64>,
    pub d_n: Option<f64>,
}

/// Rows of `group_b` matched by id to rows of `group_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub model: String,
    pub group_a: String,
    pub group_b: String,
    pub pairs: usize,
    pub frac_nll_b_above_a: f64,
    pub mean_psnr_a: Option<f64>,
    pub mean_psnr_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub model: String,
    pub group: String,
    pub query: String,
    /// Seeds of the group whose PSNR passes [`PSNR_GATE`].
    pub passing: usize,
    pub total: usize,
    pub mean_psnr: f64,
    #[serde(flatten)]
    pub stats: GeometryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub op: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Gate {
    pub fn new(name: &str, value: f64, op: &str, threshold: f64) -> Self {
        let passed = match op {
            "<=" => value <= threshold,
            ">=" => value >= threshold,
            "<" => value < threshold,
            ">" => value > threshold,
            _ => panic!("unknown gate operator {op}"),
        };
        Gate { name: name.into(), value, op: op.into(), threshold, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    /// SHA-256 of each checkpoint file, by role.
    pub checkpoints: BTreeMap<String, String>,
    pub seed: u64,
    pub latent_dim: usize,
    pub erased_concepts: Vec<u32>,
    pub reference_concepts: Vec<u32>,
    pub reference_set: String,
    pub classifier_accuracy: f64,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub created_unix: u64,
    pub provenance: Provenance,
    pub rows: Vec<Row>,
    pub summaries: Vec<Summary>,
    pub paired: Vec<PairedSummary>,
    pub geometry: Vec<GeometryRow>,
    pub gates: Vec<Gate>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn summary(&self, model: &str, group: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.model == model && s.group == group)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn all_gates_pass(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    /// Recomputes summaries and pairs from the rows and compares them.
    pub fn verify(&self) -> Result<(), HarnessError> {
        let k = self.provenance.latent_dim;
        if summarize(&self.rows, k)? != self.summaries {
            return Err(HarnessError::Report("summaries do not match the rows".into()));
        }
        if pair_summaries(&self.rows, &pair_groups(self.kind)) != self.paired {
            return Err(HarnessError::Report("paired summaries do not match the rows".into()));
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `(model, group)` keys in order of first appearance.
fn group_keys(rows: &[Row]) -> Vec<(String, String)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, g)| *m == r.model && *g == r.group) {
            keys.push((r.model.clone(), r.group.clone()));
        }
    }
    keys
}

fn nlls<'a>(rows: &'a [Row], model: &'a str, group: &'a str) -> Vec<f64> {
    rows.iter().filter(|r| r.model == model && r.group == group && !r.failed()).filter_map(|r| r.nll).collect()
}

pub fn summarize(rows: &[Row], k: usize) -> Result<Vec<Summary>, HarnessError> {
    let reference = clt_reference(k, 1.0)?;
    let to_normal = |v: &[f64]| -> Result<Option<f64>, HarnessError> {
        if v.is_empty() {
            return Ok(None);
        }
        Ok(Some(emd_to_reference(&NllSampleSet::new(v.to_vec(), SetTag::Erased, k)?, &reference)?))
    };
    let mut out = Vec::new();
    for (model, group) in group_keys(rows) {
        let sel: Vec<&Row> = rows.iter().filter(|r| r.model == model && r.group == group).collect();
        let ok: Vec<&Row> = sel.iter().copied().filter(|r| !r.failed()).collect();
        let psnr: Vec<f64> = ok.iter().filter_map(|r| r.psnr).collect();
        let det: Vec<f64> = ok.iter().filter_map(|r| r.detected).map(|d| if d { 1.0 } else { 0.0 }).collect();
        let own = nlls(rows, &model, &group);
        let refs = nlls(rows, &model, REFERENCE_GROUP);
        let emd_n = to_normal(&own)?;
        let emd_rn = if refs.is_empty() { None } else { to_normal(&refs)? };
        let emd_r = if own.is_empty() || refs.is_empty() { None } else { Some(emd_1d(&own, &refs)?) };
        let d_n = match (emd_n, emd_rn) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        out.push(Summary {
            failed: sel.len() - ok.len(),
            count: ok.len(),
            mean_psnr: mean(&psnr),
            mean_nll: mean(&own),
            detection_rate: mean(&det),
            emd_to_normal: emd_n,
            emd_reference_to_normal: emd_rn,
            emd_to_reference: emd_r,
            d_n,
            model,
            group,
        });
    }
    Ok(out)
}

pub fn pair_groups(kind: ExperimentKind) -> Vec<(&'static str, &'static str)> {
    match kind {
        ExperimentKind::Shuffle => vec![("original", "shuffled"), ("original", "reverted")],
        _ => Vec::new(),
    }
}

pub fn pair_summaries(rows: &[Row], pairs: &[(&str, &str)]) -> Vec<PairedSummary> {
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut out = Vec::new();
    for model in models {
        for &(ga, gb) in pairs {
            let a: BTreeMap<&str, &Row> =
                rows.iter().filter(|r| r.model == model && r.group == ga && !r.failed()).map(|r| (r.id.as_str(), r)).collect();
            let matched: Vec<(&Row, &Row)> = rows
                .iter()
                .filter(|r| r.model == model && r.group == gb && !r.failed())
                .filter_map(|b| a.get(b.id.as_str()).map(|&ra| (ra, b)))
                .collect();
            if matched.is_empty() {
                continue;
            }
            let nll_pairs: Vec<(f64, f64)> = matched.iter().filter_map(|(x, y)| Some((x.nll?, y.nll?))).collect();
            let above = nll_pairs.iter().filter(|(x, y)| y > x).count();
            out.push(PairedSummary {
                model: model.to_string(),
                group_a: ga.into(),
                group_b: gb.into(),
                pairs: matched.len(),
                frac_nll_b_above_a: if nll_pairs.is_empty() { 0.0 } else { above as f64 / nll_pairs.len() as f64 },
                mean_psnr_a: mean(&matched.iter().filter_map(|(x, _)| x.psnr).collect::<Vec<_>>()),
                mean_psnr_b: mean(&matched.iter().filter_map(|(_, y)| y.psnr).collect::<Vec<_>>()),
            });
        }
    }
    out
}

/// Geometry of every `(model, group, query)` with at least two seeds,
/// measured against the seed of the `direct` row of the same query.
pub fn geometry_rows(rows: &[Row], seeds: &[LatentSeed]) -> Result<Vec<GeometryRow>, HarnessError> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows.iter().filter(|r| r.group != DIRECT_GROUP) {
        if let Some(q) = &r.query {
            let key = (r.model.clone(), r.group.clone(), q.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    let seed_of = |r: &Row| r.seed_index.and_then(|i| seeds.get(i));
    let mut out = Vec::new();
    for (model, group, query) in keys {
        let Some(direct) = rows
            .iter()
            .find(|r| r.model == model && r.group == DIRECT_GROUP && r.query.as_deref() == Some(query.as_str()))
            .and_then(seed_of)
        else {
            continue;
        };
        let sel: Vec<&Row> = rows
            .iter()
            .filter(|r| r.model == model && r.group == group && r.query.as_deref() == Some(query.as_str()))
            .collect();
        let ok: Vec<&Row> = sel.iter().copied().filter(|r| !r.failed() && seed_of(r).is_some()).collect();
        if ok.len() < 2 {
            continue;
        }
        let z: Vec<&[f32]> = ok.iter().map(|r| seed_of(r).expect("filtered").z.data()).collect();
        let psnr: Vec<f64> = ok.iter().filter_map(|r| r.psnr).collect();
        out.push(GeometryRow {
            passing: psnr.iter().filter(|&&p| p >= PSNR_GATE).count(),
            total: sel.len(),
            mean_psnr: mean(&psnr).unwrap_or(f64::NAN),
            stats: geometry_report(&z, direct.z.data())?,
            model,
            group,
            query,
        });
    }
    Ok(out)
}

/// Long-format pairwise seed distances of every geometry group.
pub fn write_pairwise_csv(w: &mut impl Write, rows: &[Row], seeds: &[LatentSeed]) -> std::io::Result<()> {
    writeln!(w, "model,group,query,id_a,id_b,cosine,euclidean")?;
    let sel: Vec<&Row> =
        rows.iter().filter(|r| r.group != DIRECT_GROUP && r.query.is_some() && !r.failed() && r.seed_index.is_some()).collect();
    for (i, a) in sel.iter().enumerate() {
        for b in &sel[i + 1..] {
            if a.model != b.model || a.group != b.group || a.query != b.query {
                continue;
            }
            let (za, zb) = (&seeds[a.seed_index.unwrap()].z, &seeds[b.seed_index.unwrap()].z);
            let cos = seedmem_core::cosine_distance(za, zb).unwrap_or(f64::NAN);
            let euc = seedmem_core::euclidean_distance(za, zb).unwrap_or(f64::NAN);
            writeln!(w, "{},{},{},{},{},{cos},{euc}", a.model, a.group, a.query.as_deref().unwrap_or(""), a.id, b.id)?;
        }
    }
    Ok(())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows_csv(w: &mut impl Write, rows: &[Row]) -> std::io::Result<()> {
    writeln!(w, "id,model,group,concept,query,support,alpha,psnr,nll,detected,seed_index,error")?;
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.model,
            r.group,
            r.concept,
            opt(&r.query),
            opt(&r.support),
            opt(&r.alpha),
            opt(&r.psnr),
            opt(&r.nll),
            opt(&r.detected),
            opt(&r.seed_index),
            err
        )?;
    }
    Ok(())
}

pub fn write_geometry_csv(w: &mut impl Write, geometry: &[GeometryRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "model,group,query,count,passing,total,mean_psnr,mean_pairwise_cosine,mean_pairwise_euclidean,mean_dist_to_direct,std_dist_to_direct,cv"
    )?;
    for g in geometry {
        let s = &g.stats;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            g.model,
            g.group,
            g.query,
            s.count,
            g.passing,
            g.total,
            g.mean_psnr,
            s.mean_pairwise_cosine,
            s.mean_pairwise_euclidean,
            s.mean_dist_to_direct,
            s.std_dist_to_direct,
            s.cv
        )?;
    }
    Ok(())
}

/// NLL histogram of every `(model, group)` with seed NLLs, plus the reference density.
pub fn write_histogram_csv(w: &mut impl Write, rows: &[Row], k: usize, bins: usize) -> Result<(), HarnessError> {
    let reference = clt_reference(k, 1.0)?;
    let mut sets = Vec::new();
    let mut names = Vec::new();
    for (model, group) in group_keys(rows) {
        let v = nlls(rows, &model, &group);
        if !v.is_empty() {
            sets.push(NllSampleSet::new(v, SetTag::Erased, k)?);
            names.push(format!("{model}/{group}"));
        }
    }
    let refs: Vec<&NllSampleSet> = sets.iter().collect();
    let mut table = histogram_export(&refs, &reference, bins)?;
    for (col, name) in table.columns.iter_mut().zip(names) {
        col.0 = name;
    }
    table.write_csv(w)?;
    Ok(())
}

/// Report plus the seeds its rows refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub seeds: Vec<LatentSeed>,
    pub histogram_bins: usize,
}

impl ExperimentRun {
    /// Writes `report.json`, `rows.csv`, `histogram.csv`, `geometry.csv`,
    /// `pairwise.csv` and `seeds.bin` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let r = &self.report;
        fs::write(dir.join("report.json"), r.to_json())?;
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &r.rows)?;
        fs::write(dir.join("rows.csv"), &buf)?;
        buf.clear();
        write_histogram_csv(&mut buf, &r.rows, r.provenance.latent_dim, self.histogram_bins)?;
        fs::write(dir.join("histogram.csv"), &buf)?;
        buf.clear();
        write_geometry_csv(&mut buf, &r.geometry)?;
        fs::write(dir.join("geometry.csv"), &buf)?;
        buf.clear();
        write_pairwise_csv(&mut buf, &r.rows, &self.seeds)?;
        fs::write(dir.join("pairwise.csv"), &buf)?;
        if !self.seeds.is_empty() {
            write_seed_file(&dir.join("seeds.bin"), &self.seeds)?;
        }
        Ok(())
    }
}
