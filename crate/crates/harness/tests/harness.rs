use proptest::prelude::*;
use seedmem_core::RngStream;
use seedmem_erasure::{erase_concept, ErasureConfig};
use seedmem_harness::config::default_alphas;
use seedmem_harness::report::{geometry_rows, summarize, Gate, Row};
use seedmem_harness::*;
use seedmem_inversion::read_seed_file;
use seedmem_toyldm::{build_model, make_dataset, DatasetSpec, ModelConfig};
use std::path::PathBuf;
use std::sync::OnceLock;

/// Small vanilla and erased checkpoints written to a temporary directory.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static F: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = ModelConfig::default();
        cfg.dataset = DatasetSpec::default().with_counts(40);
        cfg.denoiser.hidden = 32;
        cfg.denoiser.time_dim = 8;
        cfg.schedule.steps = 20;
        cfg.train.steps = 80;
        cfg.train.batch = 16;
        let (ckpt, _) = build_model(&cfg).unwrap();
        let erased = erase_concept(&ckpt, &ErasureConfig { steps: 5, batch: 8, pool_seeds: 4, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (v, e) = (dir.path().join("vanilla.ckpt"), dir.path().join("erased.ckpt"));
        ckpt.save(&v).unwrap();
        erased.save(&e).unwrap();
        (dir, v, e)
    })
}

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let f = fixture();
    let mut cfg = ExperimentConfig { kind, ..Default::default() };
    cfg.checkpoints.vanilla = Some(f.1.clone());
    cfg.checkpoints.erased = Some(f.2.clone());
    cfg.counts.erased = 6;
    cfg.counts.reference = 6;
    cfg.counts.queries = 2;
    cfg.counts.supports = 3;
    cfg.counts.baseline_samples = 2;
    cfg.counts.shuffle = 4;
    cfg.counts.norm_samples = 6;
    cfg.counts.classifier_per_class = 60;
    cfg.sib.decoder_steps = 20;
    cfg.inversion.renoise_iters = 2;
    cfg
}

#[test]
fn classifier_is_perfect_on_jitter_free_single_class() {
    let spec = DatasetSpec { jitter: 0.0, ..DatasetSpec::default() }.with_counts(60);
    let data: Vec<_> = make_dataset(&spec, &RngStream::new(3, 0)).unwrap().into_iter().filter(|i| i.label.id() == 1).collect();
    let clf = train_toy_classifier(&data, &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(clf.held_out_accuracy(), 1.0);
}

#[test]
fn classifier_is_deterministic_and_checks_counts() {
    let data = make_dataset(&DatasetSpec::default().with_counts(60), &RngStream::new(4, 0)).unwrap();
    let a = train_toy_classifier(&data, &mut RngStream::new(9, 0)).unwrap();
    let b = train_toy_classifier(&data, &mut RngStream::new(9, 0)).unwrap();
    assert_eq!(a, b);
    assert!(a.held_out_accuracy() >= 0.95);
    assert!(matches!(train_toy_classifier(&data[..100], &mut RngStream::new(9, 0)), Err(ClassifierError::InvalidArgument(_))));
}

#[test]
fn config_parses_overrides_and_validates() {
    let text = "kind = \"image\"\nseed = 4\n[counts]\nqueries = 3\n";
    let cfg = ExperimentConfig::from_toml_with_overrides(
        text,
        &[("counts.supports".into(), "12".into()), ("sib.decoder_lr".into(), "0.05".into()), ("out".into(), "runs/a".into())],
    )
    .unwrap();
    assert_eq!((cfg.kind, cfg.seed, cfg.counts.queries, cfg.counts.supports), (ExperimentKind::Image, 4, 3, 12));
    assert_eq!(cfg.sib.decoder_lr, 0.05);
    assert_eq!(cfg.out, PathBuf::from("runs/a"));
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_toml_str("").unwrap().hash(), ExperimentConfig::default().hash());
    assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    let moved = ExperimentConfig { threads: 7, out: "elsewhere".into(), ..cfg.clone() };
    assert_eq!(moved.hash(), cfg.hash());
    assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    assert!(ExperimentConfig::from_toml_with_overrides("", &[("counts.nope".into(), "1".into())]).is_err());

    let mut c = small_config(ExperimentKind::Concept);
    assert!(c.validate().is_ok());
    c.sets.reference = vec![1, 2];
    assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    let mut c = small_config(ExperimentKind::Concept);
    c.checkpoints.erased = Some("/nonexistent/erased.ckpt".into());
    assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    let mut c = small_config(ExperimentKind::Concept);
    c.sets.erased = vec![4];
    assert!(c.validate().is_err());
    let mut c = small_config(ExperimentKind::Shuffle);
    c.patch = 5;
    assert!(c.validate().is_err());
}

#[test]
fn default_alphas_include_the_typical_norm() {
    let a = default_alphas(256);
    assert_eq!(a.len(), 5);
    assert_eq!(a[0], 0.0);
    assert!((a[2] - 16.0).abs() < 1e-12);
    assert!((default_alphas(16384)[4] - 180.0).abs() < 1e-12);
}

fn row(model: &str, group: &str, id: usize, nll: f64, psnr: f64) -> Row {
    let mut r = Row::new(format!("i{id}"), model, group, 1);
    r.nll = Some(nll);
    r.psnr = Some(psnr);
    r
}

#[test]
fn identical_sets_have_unit_relative_distance() {
    let values: Vec<f64> = (0..40).map(|i| 350.0 + i as f64 * 0.7).collect();
    let mut rows: Vec<Row> = values.iter().enumerate().map(|(i, &v)| row("m", "E", i, v, 30.0)).collect();
    rows.extend(values.iter().enumerate().map(|(i, &v)| row("m", "R", i, v, 30.0)));
    let s = summarize(&rows, 256).unwrap();
    assert_eq!(s.len(), 2);
    assert!((s[0].d_n.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(s[0].emd_to_reference, Some(0.0));
}

proptest! {
    #[test]
    fn summaries_match_hand_computation(
        e in prop::collection::vec((300.0f64..450.0, 10.0f64..50.0), 1..20),
        r in prop::collection::vec((300.0f64..450.0, 10.0f64..50.0), 1..20),
        failed in 0usize..3,
    ) {
        let mut rows: Vec<Row> = e.iter().enumerate().map(|(i, &(n, p))| row("m", "E", i, n, p)).collect();
        rows.extend(r.iter().enumerate().map(|(i, &(n, p))| row("m", "R", i, n, p)));
        for i in 0..failed {
            let mut f = Row::new(format!("f{i}"), "m", "E", 1);
            f.error = Some("diverged".into());
            rows.push(f);
        }
        let s = summarize(&rows, 256).unwrap();
        let se = &s[0];
        prop_assert_eq!((se.count, se.failed), (e.len(), failed));
        let mean_psnr = e.iter().map(|x| x.1).sum::<f64>() / e.len() as f64;
        prop_assert!((se.mean_psnr.unwrap() - mean_psnr).abs() < 1e-9);
        let ev: Vec<f64> = e.iter().map(|x| x.0).collect();
        let rv: Vec<f64> = r.iter().map(|x| x.0).collect();
        let refn = seedmem_likelihood::clt_reference(256, 1.0).unwrap();
        let set = |v: &[f64]| seedmem_likelihood::NllSampleSet::new(v.to_vec(), seedmem_likelihood::SetTag::Erased, 256).unwrap();
        let d = seedmem_likelihood::relative_distance(&set(&ev), &set(&rv), &refn).unwrap();
        prop_assert!((se.d_n.unwrap() - d).abs() < 1e-9);
        prop_assert!((se.emd_to_reference.unwrap() - seedmem_likelihood::emd_1d(&ev, &rv).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn gate_operators() {
    assert!(Gate::new("a", 1.0, "<=", 1.0).passed);
    assert!(!Gate::new("a", 1.0, "<", 1.0).passed);
    assert!(Gate::new("a", 2.0, ">", 1.0).passed);
    assert!(!Gate::new("a", f64::NAN, ">=", 1.0).passed);
}

fn without_timestamp(r: &ExperimentReport) -> String {
    let mut r = r.clone();
    r.created_unix = 0;
    r.to_json()
}

#[test]
fn concept_experiment_is_consistent_and_thread_independent() {
    let mut cfg = small_config(ExperimentKind::Concept);
    cfg.compare_vanilla = true;
    cfg.threads = 1;
    let a = run_concept_experiment(&cfg).unwrap();
    cfg.threads = 3;
    let b = run_concept_experiment(&cfg).unwrap();
    assert!(without_timestamp(&a.report) == without_timestamp(&b.report), "reports differ between 1 and 3 threads");
    assert_eq!(a.seeds, b.seeds);
    let r = &a.report;
    r.verify().unwrap();
    assert_eq!(r.rows.len(), 24);
    assert_eq!(r.provenance.checkpoints.len(), 2);
    assert_eq!(r.provenance.config_hash, cfg.hash());
    assert!(r.summary("erased", "E").is_some() && r.summary("vanilla", "R").is_some());
    assert_eq!(r.summary("erased", "R").unwrap().d_n, Some(1.0));
    assert!(r.gate("d_N(erased) / d_N(vanilla)").is_some());
    let back = ExperimentReport::from_json(&r.to_json()).unwrap();
    assert_eq!(&back, r);

    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    for f in ["report.json", "rows.csv", "histogram.csv", "geometry.csv", "pairwise.csv", "seeds.bin"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let rows_csv = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows_csv.lines().count(), 25);
    assert_eq!(read_seed_file(&dir.path().join("seeds.bin")).unwrap(), a.seeds);
}

#[test]
fn tampered_report_fails_verification() {
    let cfg = small_config(ExperimentKind::Concept);
    let mut r = run_concept_experiment(&cfg).unwrap().report;
    r.rows[0].nll = Some(r.rows[0].nll.unwrap() + 1.0);
    assert!(r.verify().is_err());
}

#[test]
fn wrong_kind_is_a_config_error() {
    let cfg = small_config(ExperimentKind::Shuffle);
    assert!(matches!(run_concept_experiment(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn image_experiment_geometry_recomputes_from_seeds() {
    let mut cfg = small_config(ExperimentKind::Image);
    cfg.baselines = true;
    let run = run_image_experiment(&cfg).unwrap();
    let r = &run.report;
    r.verify().unwrap();
    assert_eq!(geometry_rows(&r.rows, &run.seeds).unwrap(), r.geometry);
    // SIB plus three baselines for each of the two queries
    assert_eq!(r.geometry.len(), 8);
    for g in &r.geometry {
        assert_eq!(g.stats.count + (g.total - g.stats.count), g.total);
    }
    assert!(r.summary("erased", "direct").is_some());
    for name in ["sample-near", "sample-far", "sib-random-noise"] {
        assert!(r.summary("erased", name).is_some(), "{name}");
    }
    assert!(r.gate("sample-near mean pairwise cosine").is_some());
}

#[test]
fn shuffle_experiment_pairs_rows() {
    let run = run_shuffle_experiment(&small_config(ExperimentKind::Shuffle)).unwrap();
    let r = &run.report;
    r.verify().unwrap();
    let p = r.paired.iter().find(|p| p.group_b == "shuffled").unwrap();
    assert_eq!(p.pairs, 4);
    assert_eq!(r.rows.iter().filter(|x| x.group == "reverted").count(), 4);
    assert_eq!(r.gates.len(), 2);
}

#[test]
fn norm_sweep_likelihoods_follow_the_closed_form() {
    let mut cfg = small_config(ExperimentKind::NormSweep);
    cfg.model = ModelRole::Vanilla;
    let run = run_norm_sweep(&cfg).unwrap();
    let r = &run.report;
    r.verify().unwrap();
    let k = 256.0;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for row in &r.rows {
        let a = row.alpha.unwrap();
        // NLL = k/2 log(2 pi) + |z|^2 / 2, with |z| = alpha
        assert!((row.nll.unwrap() - (k * half_log_2pi + a * a / 2.0)).abs() < 1e-3, "{row:?}");
    }
    let typical = r.rows.iter().find(|x| x.alpha == Some(16.0)).unwrap().nll.unwrap();
    let clt_mean = k * (half_log_2pi + 0.5);
    assert!((typical - clt_mean).abs() / clt_mean < 0.03);
    assert_eq!(r.summaries.len(), 5);
    assert_eq!(r.gates.len(), 1);
}
