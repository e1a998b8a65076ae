use proptest::prelude::*;
use seedmem_core::{cosine_distance, euclidean_distance, psnr, Tensor};

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-10.0f32..10.0, n)
}

proptest! {
    #[test]
    fn cosine_distance_is_symmetric_and_scale_invariant(
        a in vec_strategy(16), b in vec_strategy(16), alpha in 0.01f32..100.0, beta in 0.01f32..100.0
    ) {
        let ta = Tensor::from_vec(a);
        let tb = Tensor::from_vec(b);
        prop_assume!(ta.norm() > 1e-3 && tb.norm() > 1e-3);
        let d = cosine_distance(&ta, &tb).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert!((d - cosine_distance(&tb, &ta).unwrap()).abs() < 1e-12);
        let ds = cosine_distance(&ta.scale(alpha), &tb.scale(beta)).unwrap();
        prop_assert!((d - ds).abs() < 1e-6, "{} vs {}", d, ds);
    }

    #[test]
    fn euclidean_distance_obeys_triangle_inequality(
        a in vec_strategy(8), b in vec_strategy(8), c in vec_strategy(8)
    ) {
        let (a, b, c) = (Tensor::from_vec(a), Tensor::from_vec(b), Tensor::from_vec(c));
        let ab = euclidean_distance(&a, &b).unwrap();
        let bc = euclidean_distance(&b, &c).unwrap();
        let ac = euclidean_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn psnr_never_increases_with_larger_perturbation(
        base in prop::collection::vec(0.0f32..1.0, 64),
        dir in prop::collection::vec(-1.0f32..1.0, 64),
        s1 in 0.001f32..0.5, extra in 0.0f32..0.5
    ) {
        let r = Tensor::from_vec(base);
        prop_assume!(dir.iter().any(|v| v.abs() > 1e-3));
        let d = Tensor::from_vec(dir);
        let small = r.add(&d.scale(s1)).unwrap();
        let large = r.add(&d.scale(s1 + extra)).unwrap();
        prop_assert!(psnr(&r, &large, 1.0).unwrap() <= psnr(&r, &small, 1.0).unwrap() + 1e-9);
    }
}
