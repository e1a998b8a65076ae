use seedmem_core::{cosine_distance, euclidean_distance, psnr, sample_standard_normal, CoreError, RngStream, Tensor};

fn t(v: &[f32]) -> Tensor {
    Tensor::from_vec(v.to_vec())
}

#[test]
fn cosine_distance_reference_values() {
    let a = t(&[1.0, 2.0, 3.0]);
    assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
    assert!((cosine_distance(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
    assert!((cosine_distance(&a, &a.scale(-1.0)).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn cosine_distance_of_zero_vector_is_domain_error() {
    let r = cosine_distance(&t(&[0.0, 0.0]), &t(&[1.0, 0.0]));
    assert!(matches!(r, Err(CoreError::Domain(_))));
}

#[test]
fn euclidean_distance_reference_values() {
    let a = t(&[0.0, 0.0]);
    assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    assert!((euclidean_distance(&a, &t(&[3.0, 4.0])).unwrap() - 5.0).abs() < 1e-12);
    assert!(matches!(euclidean_distance(&a, &t(&[1.0])), Err(CoreError::InvalidArgument(_))));
}

#[test]
fn independent_normal_vectors_are_sqrt_2k_apart() {
    let mut rng = RngStream::new(21, 0);
    let trials = 1000;
    let mut total = 0.0;
    for _ in 0..trials {
        let a = sample_standard_normal(&mut rng, &[256]).unwrap();
        let b = sample_standard_normal(&mut rng, &[256]).unwrap();
        total += euclidean_distance(&a, &b).unwrap();
    }
    let mean = total / trials as f64;
    let expect = 512f64.sqrt();
    assert!((mean - expect).abs() < 0.1 * expect, "mean distance {mean}");
}

#[test]
fn psnr_reference_values() {
    let img = Tensor::full(&[1, 32, 32], 0.4);
    assert_eq!(psnr(&img, &img, 1.0).unwrap(), f64::INFINITY);
    let off = img.map(|v| v + 0.1);
    assert!((psnr(&img, &off, 1.0).unwrap() - 20.0).abs() < 1e-4);
    let off = img.map(|v| v + 0.05);
    assert!((psnr(&img, &off, 1.0).unwrap() - 26.0206).abs() < 1e-3);
}

#[test]
fn psnr_rejects_bad_arguments() {
    let a = Tensor::zeros(&[4]);
    assert!(psnr(&a, &Tensor::zeros(&[5]), 1.0).is_err());
    assert!(psnr(&a, &a, 0.0).is_err());
}
