use proptest::prelude::*;
use seedmem_core::RngStream;
use seedmem_erasure::{erase_concept, erasure_efficacy, ErasureConfig, ErasureError, METHOD_NAME};
use seedmem_toyldm::{build_model, ConceptDetector, ConceptLabel, DatasetSpec, ModelCheckpoint, ModelConfig, ToyImage};

fn small_checkpoint() -> ModelCheckpoint {
    let mut cfg = ModelConfig::default();
    cfg.dataset = DatasetSpec::default().with_counts(40);
    cfg.denoiser.hidden = 24;
    cfg.denoiser.time_dim = 8;
    cfg.schedule.steps = 20;
    cfg.train.steps = 30;
    cfg.train.batch = 16;
    build_model(&cfg).unwrap().0
}

fn quick_config() -> ErasureConfig {
    ErasureConfig { target: 2, steps: 5, batch: 8, pool_seeds: 4, lr: 1e-3, ..ErasureConfig::default() }
}

/// Labels an image by its brightness: a stand-in for a trained detector.
struct Brightness;

impl ConceptDetector for Brightness {
    fn detect(&self, image: &ToyImage) -> ConceptLabel {
        let mean: f32 = image.data().iter().sum::<f32>() / image.data().len() as f32;
        ConceptLabel(if mean > 0.15 { 1 } else { 2 })
    }
}

#[test]
fn null_concept_cannot_be_erased() {
    let ckpt = small_checkpoint();
    let cfg = ErasureConfig { target: 0, ..quick_config() };
    assert!(matches!(erase_concept(&ckpt, &cfg), Err(ErasureError::InvalidArgument(_))));
    let cfg = ErasureConfig { target: 4, ..quick_config() };
    assert!(matches!(erase_concept(&ckpt, &cfg), Err(ErasureError::InvalidArgument(_))));
}

#[test]
fn zero_steps_and_zero_guidance_leave_parameters_identical() {
    let ckpt = small_checkpoint();
    let cfg = ErasureConfig { eta: 0.0, steps: 0, ..quick_config() };
    let out = erase_concept(&ckpt, &cfg).unwrap();
    assert_eq!(out.denoiser, ckpt.denoiser);
    assert_eq!(out.vae, ckpt.vae);
    assert_eq!(out.schedule, ckpt.schedule);
    assert!(out.is_erased());
}

#[test]
fn erasure_changes_only_the_denoiser_and_records_provenance() {
    let ckpt = small_checkpoint();
    let before = ckpt.clone();
    let out = erase_concept(&ckpt, &quick_config()).unwrap();
    assert_eq!(ckpt, before, "input checkpoint was modified");
    assert_ne!(out.denoiser, ckpt.denoiser);
    assert_eq!(out.vae.decoder().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               ckpt.vae.decoder().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(out.vae, ckpt.vae);
    let e = &out.meta.erasure;
    assert_eq!(e["method"], METHOD_NAME);
    assert_eq!(e["target_name"], "square");
    assert_eq!(e["steps"], "5");
    let reloaded = ModelCheckpoint::from_bytes(&out.to_bytes()).unwrap();
    assert_eq!(reloaded.meta.erasure, out.meta.erasure);
    // the null embedding row stays zero through finetuning
    assert!(out.denoiser.embedding(ConceptLabel::NULL).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn erasure_is_deterministic() {
    let ckpt = small_checkpoint();
    let a = erase_concept(&ckpt, &quick_config()).unwrap();
    let b = erase_concept(&ckpt, &quick_config()).unwrap();
    assert_eq!(a, b);
    let c = erase_concept(&ckpt, &ErasureConfig { seed: 1, ..quick_config() }).unwrap();
    assert_ne!(a.denoiser, c.denoiser);
}

#[test]
fn efficacy_counts_detector_hits() {
    let ckpt = small_checkpoint();
    let d1 = erasure_efficacy(&ckpt, ConceptLabel(1), 20, &mut RngStream::new(0, 0), &Brightness).unwrap();
    let d2 = erasure_efficacy(&ckpt, ConceptLabel(2), 20, &mut RngStream::new(0, 0), &Brightness).unwrap();
    assert!((0.0..=1.0).contains(&d1) && (0.0..=1.0).contains(&d2));
    assert!(((d1 * 20.0).round() - d1 * 20.0).abs() < 1e-9);
    assert!(matches!(
        erasure_efficacy(&ckpt, ConceptLabel(1), 0, &mut RngStream::new(0, 0), &Brightness),
        Err(ErasureError::InvalidArgument(_))
    ));
}

#[test]
fn timestep_range_maps_to_inclusive_bounds() {
    let cfg = ErasureConfig { t_range: [0.2, 1.0], ..ErasureConfig::default() };
    assert_eq!(cfg.timestep_bounds(100).unwrap(), (20, 100));
    assert_eq!(ErasureConfig::default().timestep_bounds(100).unwrap(), (1, 100));
    let bad = ErasureConfig { t_range: [0.8, 0.2], ..ErasureConfig::default() };
    assert!(bad.timestep_bounds(100).is_err());
}

proptest! {
    #[test]
    fn timestep_bounds_stay_inside_the_schedule(lo in 0.0f64..1.0, span in 0.0f64..1.0, t_max in 10usize..500) {
        let hi = (lo + span).min(1.0);
        let cfg = ErasureConfig { t_range: [lo, hi], ..ErasureConfig::default() };
        let (a, b) = cfg.timestep_bounds(t_max).unwrap();
        prop_assert!(1 <= a && a <= b && b <= t_max);
    }
}
