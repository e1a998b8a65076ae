use seedmem_core::{sample_standard_normal, RngStream, Tensor};
use seedmem_toyldm::denoiser::{time_embedding, DenoiserParams, PARAM_NAMES};
use seedmem_toyldm::{ConceptLabel, Denoiser, DenoiserConfig, LdmError, NoisePredictor};

const K: usize = 12;
const T_MAX: usize = 50;

fn small(seed: u64) -> Denoiser {
    let cfg = DenoiserConfig { hidden: 16, time_dim: 8, embedding_std: 0.5, out_scale: 1.0 };
    let mut d = Denoiser::new(&cfg, K, 3, T_MAX, &mut RngStream::new(seed, 0)).unwrap();
    // give the zero-initialized gate weights something to differentiate through
    let mut rng = RngStream::new(seed, 1);
    let p = d.params_mut();
    for v in p.wg.iter_mut().chain(p.bg.iter_mut()) {
        *v = 0.3 * rng.normal();
    }
    for v in p.b3.iter_mut() {
        *v = 0.1 * rng.normal();
    }
    d
}

/// Straightforward f64 evaluation of the batch loss, used as the finite-difference oracle.
fn reference_loss(p: &DenoiserParams, h: usize, td: usize, z: &[f32], t: &[usize], c: &[usize], target: &[f32]) -> f64 {
    let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let (w1, wt1, b1, e1, w2, wt2, b2, e2) = (f(&p.w1), f(&p.wt1), f(&p.b1), f(&p.e1), f(&p.w2), f(&p.wt2), f(&p.b2), f(&p.e2));
    let (w3, b3, wg, bg) = (f(&p.w3), f(&p.b3), f(&p.wg), f(&p.bg));
    let silu = |a: f64| a / (1.0 + (-a).exp());
    let n = t.len();
    let mut loss = 0.0;
    for i in 0..n {
        let zi: Vec<f64> = f(&z[i * K..(i + 1) * K]);
        let te = f(&time_embedding(t[i], T_MAX, td));
        let lin = |w: &[f64], wt: &[f64], b: &[f64], e: &[f64], x: &[f64]| -> Vec<f64> {
            (0..h)
                .map(|j| {
                    let mut a = b[j] + e[c[i] * h + j];
                    a += (0..x.len()).map(|q| w[j * x.len() + q] * x[q]).sum::<f64>();
                    a += (0..td).map(|q| wt[j * td + q] * te[q]).sum::<f64>();
                    silu(a)
                })
                .collect()
        };
        let h1 = lin(&w1, &wt1, &b1, &e1, &zi);
        let h2 = lin(&w2, &wt2, &b2, &e2, &h1);
        for o in 0..K {
            let gate = bg[o] + (0..td).map(|q| wg[o * td + q] * te[q]).sum::<f64>();
            let out = b3[o] + (0..h).map(|q| w3[o * h + q] * h2[q]).sum::<f64>() + gate * zi[o];
            let d = out - target[i * K + o] as f64;
            loss += d * d;
        }
    }
    loss / n as f64
}

#[test]
fn analytic_gradients_match_central_differences() {
    let den = small(4);
    let mut rng = RngStream::new(5, 0);
    let n = 6;
    let z = sample_standard_normal(&mut rng, &[n * K]).unwrap().into_data();
    let target = sample_standard_normal(&mut rng, &[n * K]).unwrap().into_data();
    let t: Vec<usize> = (0..n).map(|_| rng.int_inclusive(1, T_MAX)).collect();
    let c: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let labels: Vec<ConceptLabel> = c.iter().map(|&ci| ConceptLabel(ci as u32)).collect();
    let (loss, grads) = den.mse_loss_and_grad(&z, &t, &labels, &target).unwrap();
    let base = den.params().clone();
    let oracle = |p: &DenoiserParams| reference_loss(p, 16, 8, &z, &t, &c, &target);
    assert!((oracle(&base) - loss).abs() < 1e-4 * loss.abs());

    // eight probes: one per weight family, on entries with a non-negligible gradient
    let probe_tensors = [0usize, 1, 3, 4, 7, 8, 10, 11];
    let h = 1e-3f64;
    for &pi in &probe_tensors {
        let g = grads.slices()[pi];
        let idx = (0..g.len())
            .filter(|&i| !(PARAM_NAMES[pi].starts_with('e') && i < 16))
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .unwrap();
        let shift = |delta: f64| {
            let mut p = base.clone();
            let v = &mut p.slices_mut()[pi][idx];
            *v = (*v as f64 + delta) as f32;
            let actual = p.slices()[pi][idx] as f64 - base.slices()[pi][idx] as f64;
            (oracle(&p), actual)
        };
        let (lp, dp) = shift(h);
        let (lm, dm) = shift(-h);
        let fd = (lp - lm) / (dp - dm);
        let an = g[idx] as f64;
        let rel = (an - fd).abs() / fd.abs().max(1e-6);
        assert!(rel < 0.01, "{}[{idx}]: analytic {an} vs numeric {fd} (rel {rel})", PARAM_NAMES[pi]);
    }
}

#[test]
fn null_condition_row_is_zero_and_never_receives_gradient() {
    let den = small(1);
    assert!(den.embedding(ConceptLabel::NULL).unwrap().iter().all(|&v| v == 0.0));
    let rows: Vec<&[f32]> = (0..4).map(|c| den.embedding(ConceptLabel(c)).unwrap()).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(rows[i], rows[j]);
        }
    }
    let mut rng = RngStream::new(2, 0);
    let z = sample_standard_normal(&mut rng, &[4 * K]).unwrap().into_data();
    let target = vec![0f32; 4 * K];
    let labels = [ConceptLabel(0), ConceptLabel(1), ConceptLabel(0), ConceptLabel(3)];
    let (_, g) = den.mse_loss_and_grad(&z, &[3, 10, 20, 40], &labels, &target).unwrap();
    assert!(g.e1[..16].iter().chain(&g.e2[..16]).all(|&v| v == 0.0));
    assert!(g.e1[16..32].iter().any(|&v| v != 0.0));
    assert!(g.e1[32..48].iter().all(|&v| v == 0.0), "unused concept 2 got gradient");
}

#[test]
fn output_shape_matches_latent_and_is_deterministic() {
    let den = small(3);
    let mut rng = RngStream::new(7, 0);
    let z = sample_standard_normal(&mut rng, &[3, 2, 2]).unwrap();
    for t in [0, 1, 25, T_MAX] {
        let a = den.predict(&z, t, ConceptLabel(2)).unwrap();
        let b = den.predict(&z, t, ConceptLabel(2)).unwrap();
        assert_eq!(a.shape(), z.shape());
        assert_eq!(a, b);
    }
}

#[test]
fn unknown_concepts_and_bad_inputs_are_rejected() {
    let den = small(3);
    let z = Tensor::zeros(&[K]);
    assert!(matches!(den.predict(&z, 5, ConceptLabel(4)), Err(LdmError::InvalidArgument(_))));
    assert!(matches!(den.predict(&z, T_MAX + 1, ConceptLabel(1)), Err(LdmError::InvalidArgument(_))));
    assert!(matches!(den.predict(&Tensor::zeros(&[K + 1]), 5, ConceptLabel(1)), Err(LdmError::InvalidArgument(_))));
}

#[test]
fn batched_prediction_equals_single_predictions() {
    let den = small(8);
    let mut rng = RngStream::new(8, 0);
    let z = sample_standard_normal(&mut rng, &[3 * K]).unwrap().into_data();
    let t = [2, 17, 49];
    let c = [ConceptLabel(1), ConceptLabel(0), ConceptLabel(3)];
    let batch = den.predict_batch(&z, &t, &c).unwrap();
    for i in 0..3 {
        let single = den.predict_batch(&z[i * K..(i + 1) * K], &t[i..=i], &c[i..=i]).unwrap();
        for (a, b) in single.iter().zip(&batch[i * K..(i + 1) * K]) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn untrained_loss_is_close_to_latent_dim() {
    let k = 256;
    let den = Denoiser::new(&DenoiserConfig::default(), k, 3, 100, &mut RngStream::new(0, 0)).unwrap();
    let mut rng = RngStream::new(1, 0);
    let n = 128;
    let z = sample_standard_normal(&mut rng, &[n * k]).unwrap().into_data();
    let eps = sample_standard_normal(&mut rng, &[n * k]).unwrap().into_data();
    let t: Vec<usize> = (0..n).map(|_| rng.int_inclusive(1, 100)).collect();
    let c: Vec<ConceptLabel> = (0..n).map(|i| ConceptLabel((i % 4) as u32)).collect();
    let (loss, _) = den.mse_loss_and_grad(&z, &t, &c, &eps).unwrap();
    assert!((loss / k as f64 - 1.0).abs() < 0.2, "untrained loss {loss}");
}

#[test]
fn time_embedding_is_sin_cos_pairs() {
    let e = time_embedding(30, 100, 8);
    for i in 0..4 {
        assert!((e[i] * e[i] + e[i + 4] * e[i + 4] - 1.0).abs() < 1e-6);
    }
    assert!((e[0] - (300f64).sin() as f32).abs() < 1e-6);
}
