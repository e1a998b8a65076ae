//! The four experiment families.

use crate::classifier::{train_toy_classifier, ToyClassifier};
use crate::config::{default_alphas, ExperimentConfig, ExperimentKind, ModelRole};
use crate::report::*;
use crate::HarnessError;
use rayon::prelude::*;
use seedmem_core::{RngStream, Tensor};
use seedmem_inversion::{invert_images, ImageInversion, InversionParams, LatentSeed, SeedMethod};
use seedmem_likelihood::nll_slice;
use seedmem_sib::{baseline_initializations, collect_memories, patch_shuffle, patch_unshuffle, BaselineKind, MemoryCollection};
use seedmem_toyldm::{generate_images, make_dataset, ConceptDetector, ConceptLabel, ModelCheckpoint, ToyImage};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

/// Images per inversion batch. Fixed so that results do not depend on the
/// number of worker threads.
const CHUNK: usize = 16;
/// Largest tolerated fraction of failed rows.
const ROW_FAILURE_BUDGET: f64 = 0.1;
/// Stream of the experiment's own randomness, apart from model training.
const EXPERIMENT_STREAM: u64 = 1;

pub const THREADS_ENV: &str = "ERASURE_MEMORY_THREADS";

fn thread_count(cfg: &ExperimentConfig) -> usize {
    if cfg.threads > 0 {
        return cfg.threads;
    }
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(0)
}

fn file_sha256(path: &std::path::Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Loaded checkpoints, classifier and thread pool of one experiment.
struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    models: Vec<(ModelRole, ModelCheckpoint)>,
    classifier: ToyClassifier,
    pool: rayon::ThreadPool,
    hashes: BTreeMap<String, String>,
    rng: RngStream,
}

impl<'a> Setup<'a> {
    fn new(cfg: &'a ExperimentConfig, kind: ExperimentKind) -> Result<Self, HarnessError> {
        if cfg.kind != kind {
            return Err(HarnessError::Config(format!("config is for a {} experiment, not {}", cfg.kind.name(), kind.name())));
        }
        cfg.validate()?;
        let mut roles = vec![cfg.model];
        if kind == ExperimentKind::Concept && cfg.compare_vanilla && cfg.model != ModelRole::Vanilla {
            roles.push(ModelRole::Vanilla);
        }
        let mut models = Vec::new();
        let mut hashes = BTreeMap::new();
        for role in roles {
            let path = cfg.checkpoints.get(role).expect("validated");
            let ckpt = ModelCheckpoint::load(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            if ckpt.meta.concept_names != cfg.dataset.concept_names() {
                return Err(HarnessError::Config(format!(
                    "{} checkpoint concepts {:?} differ from the dataset concepts {:?}",
                    role.name(),
                    ckpt.meta.concept_names,
                    cfg.dataset.concept_names()
                )));
            }
            hashes.insert(role.name().to_string(), file_sha256(path)?);
            models.push((role, ckpt));
        }
        let rng = RngStream::new(cfg.seed, EXPERIMENT_STREAM);
        let data = make_dataset(&cfg.dataset.clone().with_counts(cfg.counts.classifier_per_class), &rng.derive(1))?;
        let classifier = train_toy_classifier(&data, &mut rng.derive(2))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count(cfg))
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        Ok(Setup { cfg, models, classifier, pool, hashes, rng })
    }

    fn primary(&self) -> &ModelCheckpoint {
        &self.models[0].1
    }

    fn latent_dim(&self) -> usize {
        self.primary().vae.latent_dim()
    }

    /// `n` images of `concepts`, alternating between them; ids are `c<concept>-<index>`.
    fn draw_images(&self, concepts: &[u32], n: usize, stream: u64) -> Result<Vec<(String, ToyImage)>, HarnessError> {
        let per_class = n.div_ceil(concepts.len());
        let data = make_dataset(&self.cfg.dataset.clone().with_counts(per_class), &self.rng.derive(stream))?;
        Ok((0..n)
            .map(|i| {
                let c = concepts[i % concepts.len()];
                let j = i / concepts.len();
                (format!("c{c}-{j}"), data[(c as usize - 1) * per_class + j].clone())
            })
            .collect())
    }

    fn detected(&self, img: &ToyImage, c: u32) -> bool {
        self.classifier.detect(img).id() == c
    }

    fn report(&self, kind: ExperimentKind, rows: Vec<Row>, seeds: Vec<LatentSeed>, counts: BTreeMap<String, usize>) -> Result<ExperimentRun, HarnessError> {
        check_failure_budget(&rows)?;
        let k = self.latent_dim();
        let summaries = summarize(&rows, k)?;
        let paired = pair_summaries(&rows, &pair_groups(kind));
        let geometry = geometry_rows(&rows, &seeds)?;
        let mut report = ExperimentReport {
            schema_version: SCHEMA_VERSION,
            kind,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            provenance: Provenance {
                config_hash: self.cfg.hash(),
                checkpoints: self.hashes.clone(),
                seed: self.cfg.seed,
                latent_dim: k,
                erased_concepts: self.cfg.sets.erased.clone(),
                reference_concepts: self.cfg.sets.reference.clone(),
                reference_set: "non-erased concepts of the same synthetic dataset".into(),
                classifier_accuracy: self.classifier.held_out_accuracy(),
                counts,
            },
            rows,
            summaries,
            paired,
            geometry,
            gates: Vec::new(),
        };
        report.gates = gates(&report, self.cfg);
        Ok(ExperimentRun { report, seeds, histogram_bins: self.cfg.histogram_bins })
    }
}

fn check_failure_budget(rows: &[Row]) -> Result<(), HarnessError> {
    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed as f64 > ROW_FAILURE_BUDGET * rows.len() as f64 {
        let first = rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(HarnessError::TooManyFailures { failed, total: rows.len(), first });
    }
    Ok(())
}

/// Inverts `items` in fixed chunks on the pool. A failing chunk is retried
/// image by image so that one divergence costs one row.
fn invert_chunked(
    pool: &rayon::ThreadPool,
    ckpt: &ModelCheckpoint,
    items: &[(String, &ToyImage)],
    params: &InversionParams,
) -> Vec<Result<ImageInversion, String>> {
    let run = |chunk: &[(String, &ToyImage)]| {
        let imgs: Vec<&ToyImage> = chunk.iter().map(|x| x.1).collect();
        let conds: Vec<ConceptLabel> = imgs.iter().map(|i| i.label).collect();
        let ids: Vec<String> = chunk.iter().map(|x| x.0.clone()).collect();
        invert_images(ckpt, &imgs, &conds, &ids, params)
    };
    pool.install(|| {
        items
            .par_chunks(CHUNK)
            .map(|chunk| match run(chunk) {
                Ok(v) => v.into_iter().map(Ok).collect(),
                Err(_) => chunk
                    .iter()
                    .map(|x| run(std::slice::from_ref(x)).map(|mut v| v.remove(0)).map_err(|e| e.to_string()))
                    .collect::<Vec<_>>(),
            })
            .collect::<Vec<_>>()
            .concat()
    })
}

/// Appends one row per inversion result; seeds go to `seeds`.
fn push_inversions(
    setup: &Setup,
    rows: &mut Vec<Row>,
    seeds: &mut Vec<LatentSeed>,
    model: &str,
    group: &str,
    items: &[(String, &ToyImage)],
    results: Vec<Result<ImageInversion, String>>,
) {
    for ((id, img), res) in items.iter().zip(results) {
        let mut row = Row::new(id.clone(), model, group, img.label.id());
        match res {
            Ok(inv) => {
                row.psnr = Some(inv.psnr);
                row.nll = Some(inv.nll);
                row.detected = Some(setup.detected(&inv.reconstruction, img.label.id()));
                row.seed_index = Some(seeds.len());
                seeds.push(inv.seed);
            }
            Err(e) => row.error = Some(e),
        }
        rows.push(row);
    }
}

fn as_refs(v: &[(String, ToyImage)]) -> Vec<(String, &ToyImage)> {
    v.iter().map(|(id, img)| (id.clone(), img)).collect()
}

/// Inverts images of the erased set `E` and the reference set `R` and
/// compares their seed likelihoods.
pub fn run_concept_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let setup = Setup::new(cfg, ExperimentKind::Concept)?;
    let e = setup.draw_images(&cfg.sets.erased, cfg.counts.erased, 10)?;
    let r = setup.draw_images(&cfg.sets.reference, cfg.counts.reference, 11)?;
    let (mut rows, mut seeds) = (Vec::new(), Vec::new());
    for (role, ckpt) in &setup.models {
        for (group, items) in [("E", &e), (REFERENCE_GROUP, &r)] {
            let items = as_refs(items);
            let res = invert_chunked(&setup.pool, ckpt, &items, &cfg.inversion);
            push_inversions(&setup, &mut rows, &mut seeds, role.name(), group, &items, res);
        }
    }
    let counts = BTreeMap::from([("E".to_string(), e.len()), (REFERENCE_GROUP.to_string(), r.len())]);
    setup.report(ExperimentKind::Concept, rows, seeds, counts)
}

fn memory_rows(
    rows: &mut Vec<Row>,
    seeds: &mut Vec<LatentSeed>,
    model: &str,
    group: &str,
    query_id: &str,
    concept: u32,
    n_expected: usize,
    res: Result<MemoryCollection, String>,
    with_direct: bool,
) {
    match res {
        Ok(m) => {
            if with_direct {
                let mut row = Row::new(query_id, model, DIRECT_GROUP, concept);
                row.query = Some(query_id.into());
                row.psnr = Some(m.direct.psnr);
                row.nll = Some(m.direct.nll);
                row.seed_index = Some(seeds.len());
                seeds.push(m.direct.seed);
                rows.push(row);
            }
            let done = m.memories.len();
            for mem in m.memories {
                let mut row = Row::new(format!("{query_id}/{}", mem.support_id), model, group, concept);
                row.query = Some(query_id.into());
                row.support = Some(mem.support_id);
                row.psnr = Some(mem.psnr);
                row.nll = Some(mem.nll);
                row.seed_index = Some(seeds.len());
                seeds.push(mem.seed);
                rows.push(row);
            }
            for i in done..n_expected {
                let mut row = Row::new(format!("{query_id}/failed-{i}"), model, group, concept);
                row.query = Some(query_id.into());
                row.error = Some("memory failed".into());
                rows.push(row);
            }
        }
        Err(e) => {
            for i in 0..n_expected {
                let mut row = Row::new(format!("{query_id}/failed-{i}"), model, group, concept);
                row.query = Some(query_id.into());
                row.error = Some(e.clone());
                rows.push(row);
            }
        }
    }
}

const BASELINES: [BaselineKind; 3] = [BaselineKind::SampleNear, BaselineKind::SampleFar, BaselineKind::SibRandomNoise];

/// Collects SIB memories of erased-concept queries from reference-set
/// supports, optionally with the baseline initializations.
pub fn run_image_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let setup = Setup::new(cfg, ExperimentKind::Image)?;
    let (role, ckpt) = (&setup.models[0].0, &setup.models[0].1);
    let model = role.name();
    let queries = setup.draw_images(&cfg.sets.erased, cfg.counts.queries, 12)?;
    let supports = setup.draw_images(&cfg.sets.reference, cfg.counts.supports, 13)?;
    let r = setup.draw_images(&cfg.sets.reference, cfg.counts.reference, 11)?;
    let params = cfg.sib_params();
    let support_refs = as_refs(&supports);
    // task 0 of each query is SIB, tasks 1.. are the baselines
    let kinds: Vec<Option<BaselineKind>> =
        std::iter::once(None).chain(if cfg.baselines { BASELINES.map(Some).to_vec() } else { Vec::new() }).collect();
    let tasks: Vec<(usize, usize)> = (0..queries.len()).flat_map(|q| (0..kinds.len()).map(move |t| (q, t))).collect();
    let results: Vec<Result<MemoryCollection, String>> = setup.pool.install(|| {
        tasks
            .par_iter()
            .map(|&(qi, ti)| {
                let (qid, q) = &queries[qi];
                match kinds[ti] {
                    None => collect_memories(ckpt, q, qid, &support_refs, q.label, &params),
                    Some(kind) => {
                        let mut rng = setup.rng.derive(500 + qi as u64).derive(ti as u64);
                        baseline_initializations(ckpt, q, qid, q.label, kind, cfg.counts.baseline_samples, &mut rng, &params)
                    }
                }
                .map_err(|e| e.to_string())
            })
            .collect()
    });
    let (mut rows, mut seeds) = (Vec::new(), Vec::new());
    for (&(qi, ti), res) in tasks.iter().zip(results) {
        let (qid, q) = &queries[qi];
        let (group, n) = match kinds[ti] {
            None => ("sib", supports.len()),
            Some(kind) => (kind.name(), cfg.counts.baseline_samples),
        };
        memory_rows(&mut rows, &mut seeds, model, group, qid, q.label.id(), n, res, ti == 0);
    }
    let r_refs = as_refs(&r);
    let res = invert_chunked(&setup.pool, ckpt, &r_refs, &cfg.inversion);
    push_inversions(&setup, &mut rows, &mut seeds, model, REFERENCE_GROUP, &r_refs, res);
    let counts = BTreeMap::from([
        ("queries".to_string(), queries.len()),
        ("supports".to_string(), supports.len()),
        (REFERENCE_GROUP.to_string(), r.len()),
    ]);
    setup.report(ExperimentKind::Image, rows, seeds, counts)
}

/// Inverts erased-set images before and after patch shuffling.
pub fn run_shuffle_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let setup = Setup::new(cfg, ExperimentKind::Shuffle)?;
    let (role, ckpt) = (&setup.models[0].0, &setup.models[0].1);
    let model = role.name();
    let originals = setup.draw_images(&cfg.sets.erased, cfg.counts.shuffle, 14)?;
    let mut shuffled = Vec::with_capacity(originals.len());
    let mut perms = Vec::with_capacity(originals.len());
    for (i, (id, img)) in originals.iter().enumerate() {
        let perm_seed = setup.rng.derive(600).derive(i as u64).next_u64();
        let (s, p) = patch_shuffle(img, cfg.patch, perm_seed)?;
        shuffled.push((id.clone(), s));
        perms.push(p);
    }
    let (mut rows, mut seeds) = (Vec::new(), Vec::new());
    let o_refs = as_refs(&originals);
    let res = invert_chunked(&setup.pool, ckpt, &o_refs, &cfg.inversion);
    push_inversions(&setup, &mut rows, &mut seeds, model, "original", &o_refs, res);
    let s_refs = as_refs(&shuffled);
    let res = invert_chunked(&setup.pool, ckpt, &s_refs, &cfg.inversion);
    let reverted: Vec<Option<Result<f64, String>>> = res
        .iter()
        .zip(&perms)
        .zip(&originals)
        .map(|((r, perm), (_, orig))| {
            r.as_ref().ok().map(|inv| {
                let back = patch_unshuffle(&inv.reconstruction, cfg.patch, perm).map_err(|e| e.to_string())?;
                seedmem_core::psnr(&orig.pixels, &back.pixels, 1.0).map_err(|e| e.to_string())
            })
        })
        .collect();
    push_inversions(&setup, &mut rows, &mut seeds, model, "shuffled", &s_refs, res);
    for ((id, img), rev) in originals.iter().zip(reverted) {
        let mut row = Row::new(id.clone(), model, "reverted", img.label.id());
        match rev {
            Some(Ok(p)) => row.psnr = Some(p),
            Some(Err(e)) => row.error = Some(e),
            None => row.error = Some("shuffled inversion failed".into()),
        }
        rows.push(row);
    }
    let counts = BTreeMap::from([("images".to_string(), originals.len()), ("patch".to_string(), cfg.patch)]);
    setup.report(ExperimentKind::Shuffle, rows, seeds, counts)
}

/// Generates from seeds of fixed norm `alpha` and records detection and NLL.
pub fn run_norm_sweep(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let setup = Setup::new(cfg, ExperimentKind::NormSweep)?;
    let (role, ckpt) = (&setup.models[0].0, &setup.models[0].1);
    let model = role.name();
    let k = setup.latent_dim();
    let shape = ckpt.vae.latent_shape().to_vec();
    let alphas = if cfg.alphas.is_empty() { default_alphas(k) } else { cfg.alphas.clone() };
    if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(HarnessError::Config("alphas must be finite and non-negative".into()));
    }
    let concepts: Vec<u32> = cfg.sets.erased.iter().chain(&cfg.sets.reference).copied().collect();
    let n = cfg.counts.norm_samples;
    let mut base_rng = setup.rng.derive(400);
    let dirs: Vec<Vec<f32>> = (0..n)
        .map(|_| {
            let mut z = vec![0f32; k];
            base_rng.fill_normal(&mut z);
            let norm = z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            z.iter().map(|v| (*v as f64 / norm) as f32).collect()
        })
        .collect();
    let conds: Vec<ConceptLabel> = (0..n).map(|i| ConceptLabel(concepts[i % concepts.len()])).collect();
    let (mut rows, mut seeds) = (Vec::new(), Vec::new());
    for (ai, &alpha) in alphas.iter().enumerate() {
        let z: Vec<f32> = dirs.iter().flat_map(|d| d.iter().map(|v| (*v as f64 * alpha) as f32)).collect();
        let idx: Vec<usize> = (0..n).collect();
        let images: Vec<Result<Vec<ToyImage>, String>> = setup.pool.install(|| {
            idx.par_chunks(CHUNK)
                .map(|c| {
                    let (lo, hi) = (c[0], c[c.len() - 1] + 1);
                    generate_images(ckpt, &z[lo * k..hi * k], &conds[lo..hi]).map_err(|e| e.to_string())
                })
                .collect()
        });
        let group = format!("alpha={alpha}");
        for (ci, chunk) in idx.chunks(CHUNK).zip(images) {
            for (j, &i) in ci.iter().enumerate() {
                let mut row = Row::new(format!("a{ai}-s{i}"), model, &group, conds[i].id());
                row.alpha = Some(alpha);
                let zi = &z[i * k..(i + 1) * k];
                match &chunk {
                    Ok(imgs) => {
                        row.nll = Some(nll_slice(zi, 0.0, 1.0)?);
                        row.detected = Some(setup.detected(&imgs[j], conds[i].id()));
                        row.seed_index = Some(seeds.len());
                        let t = Tensor::new(shape.clone(), zi.to_vec()).map_err(seedmem_toyldm::LdmError::from)?;
                        seeds.push(
                            LatentSeed::new(t, SeedMethod::Sampled, &row.id, conds[i])?.with_param("alpha", alpha),
                        );
                    }
                    Err(e) => row.error = Some(e.clone()),
                }
                rows.push(row);
            }
        }
    }
    let counts = BTreeMap::from([("samples".to_string(), n), ("alphas".to_string(), alphas.len())]);
    setup.report(ExperimentKind::NormSweep, rows, seeds, counts)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    match cfg.kind {
        ExperimentKind::Concept => run_concept_experiment(cfg),
        ExperimentKind::Image => run_image_experiment(cfg),
        ExperimentKind::Shuffle => run_shuffle_experiment(cfg),
        ExperimentKind::NormSweep => run_norm_sweep(cfg),
    }
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Pass/fail checks of a report, derived from its summaries and geometry.
pub fn gates(report: &ExperimentReport, cfg: &ExperimentConfig) -> Vec<Gate> {
    let model = cfg.model.name();
    let mut out = Vec::new();
    match report.kind {
        ExperimentKind::Concept => {
            if let Some(e) = report.summary(model, "E") {
                out.push(Gate::new("mean PSNR of erased-set reconstructions", e.mean_psnr.unwrap_or(f64::NAN), ">=", PSNR_GATE));
            }
            let d = |m: &str| report.summary(m, "E").and_then(|s| s.d_n);
            if cfg.model == ModelRole::Erased {
                if let (Some(de), Some(dv)) = (d("erased"), d("vanilla")) {
                    out.push(Gate::new("d_N(erased) / d_N(vanilla)", de / dv, "<=", 2.0));
                }
            }
        }
        ExperimentKind::Image => {
            let sib: Vec<&GeometryRow> = report.geometry.iter().filter(|g| g.model == model && g.group == "sib").collect();
            if !sib.is_empty() {
                let worst = sib.iter().map(|g| g.passing as f64 / g.total as f64).fold(f64::INFINITY, f64::min);
                out.push(Gate::new("worst per-query fraction of memories >= 25 dB", worst, ">=", 0.8));
                out.push(Gate::new("mean pairwise cosine distance of memories", mean_of(sib.iter().map(|g| g.stats.mean_pairwise_cosine)), ">=", 0.3));
                out.push(Gate::new("worst per-query distance CV", sib.iter().map(|g| g.stats.cv).fold(0.0, f64::max), "<=", 0.1));
            }
            let group_mean = |grp: &str, f: fn(&GeometryRow) -> f64| {
                mean_of(report.geometry.iter().filter(|g| g.model == model && g.group == grp).map(f))
            };
            if report.geometry.iter().any(|g| g.group == BaselineKind::SampleNear.name()) {
                out.push(Gate::new("sample-near mean pairwise cosine", group_mean("sample-near", |g| g.stats.mean_pairwise_cosine), "<=", 0.05));
            }
            if report.geometry.iter().any(|g| g.group == BaselineKind::SampleFar.name()) {
                let sib_psnr = report.summary(model, "sib").and_then(|s| s.mean_psnr).unwrap_or(f64::NAN);
                let far = report.summary(model, "sample-far").and_then(|s| s.mean_psnr).unwrap_or(f64::NAN);
                out.push(Gate::new("sample-far PSNR minus SIB PSNR", far - sib_psnr, "<", -3.0));
            }
        }
        ExperimentKind::Shuffle => {
            if let Some(p) = report.paired.iter().find(|p| p.model == model && p.group_b == "shuffled") {
                out.push(Gate::new("fraction with higher shuffled NLL", p.frac_nll_b_above_a, ">=", 0.8));
                let diff = p.mean_psnr_b.unwrap_or(f64::NAN) - p.mean_psnr_a.unwrap_or(f64::NAN);
                out.push(Gate::new("shuffled minus original mean PSNR", diff, "<", 0.0));
            }
        }
        ExperimentKind::NormSweep => {
            let k = report.provenance.latent_dim as f64;
            let rate = |a: f64| {
                report
                    .rows
                    .iter()
                    .find(|r| r.alpha.is_some_and(|x| (x - a).abs() < 1e-9))
                    .and_then(|r| report.summary(&r.model, &r.group))
                    .and_then(|s| s.detection_rate)
            };
            if let (Some(typ), Some(zero)) = (rate(k.sqrt()), rate(0.0)) {
                out.push(Gate::new("detection at |z| = sqrt(k) minus detection at 0", typ - zero, ">", 0.0));
            }
        }
    }
    out
}
