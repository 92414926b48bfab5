use aidim::linalg::rng::{gaussian_vec, RngStream};
use aidim::Projector64;
use proptest::prelude::*;

proptest! {
    #[test]
    fn adjoint_identity(big_d in 1usize..400, d in 1usize..40, seed in any::<u64>()) {
        let p = Projector64::new(big_d, d, RngStream::new(seed)).unwrap();
        let w: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 1), d);
        let g: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 2), big_d);
        let lhs: f64 = p.apply_f64(&w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.adjoint_f64(&g).iter().zip(&w).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn rebuilt_from_seed(big_d in 1usize..300, d in 1usize..30, seed in any::<u64>()) {
        let a = Projector64::new(big_d, d, RngStream::new(seed)).unwrap();
        let b = Projector64::new(big_d, d, RngStream::new(seed)).unwrap();
        prop_assert_eq!(a.factors(), b.factors());
    }
}

#[test]
fn columns_have_unit_scale_on_average() {
    let (big_d, d) = (4096, 16);
    let p = Projector64::new(big_d, d, RngStream::new(9)).unwrap();
    let mut total = 0.0;
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        total += p.apply_f64(&e).iter().map(|x| x * x).sum::<f64>();
    }
    let mean = total / d as f64;
    assert!((mean - 1.0).abs() < 0.5, "mean squared column norm {mean}");
}

#[test]
fn zero_dimensions_are_rejected() {
    assert!(Projector64::new(0, 3, RngStream::new(1)).is_err());
    assert!(Projector64::new(3, 0, RngStream::new(1)).is_err());
}
