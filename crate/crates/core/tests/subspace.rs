use gtta_core::linalg::thin_svd;
use gtta_core::{Retain, RngStream, Subspace, Subspace32, Tensor, Tensor32};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random(seed: u64, n: usize, d: usize) -> Tensor {
    let g = RngStream::from_seed(seed).gaussian(n * d, 1.0).unwrap();
    let data = g.iter().enumerate().map(|(k, v)| v * (1.0 + (k % d) as f64 * 0.4)).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn singular_values_match_nalgebra() {
    for (t, (n, d)) in [(12, 5), (5, 12), (20, 20), (7, 1)].into_iter().enumerate() {
        let x = random(t as u64, n, d);
        let ours = thin_svd(x.data(), n, d);
        let mut want: Vec<f64> = DMatrix::from_row_slice(n, d, x.data()).singular_values().iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        let mut got = ours.singular_values.clone();
        got.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(got.len(), want.len().min(got.len()));
        assert!(max_abs_diff(&got, &want[..got.len()]) < 1e-10, "{n}x{d}: {got:?} vs {want:?}");
    }
}

#[test]
fn reconstruction_error_shrinks_with_more_components() {
    let x = random(9, 40, 10);
    let mut last = f64::INFINITY;
    for k in 1..=10 {
        let s = Subspace::fit(&x, Retain::Count(k), None).unwrap();
        let err: f64 = x
            .rows()
            .map(|r| {
                let back = s.reconstruct(&s.project(r).unwrap()).unwrap();
                back.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        assert!(err <= last + 1e-9, "k={k}: {err} > {last}");
        last = err;
    }
    assert!(last < 1e-12);
}

#[test]
fn single_precision_fit_tracks_double() {
    let x = random(4, 30, 6);
    let x32: Tensor32 = x.cast();
    let s64 = Subspace::fit(&x, Retain::All, None).unwrap();
    let s32: Subspace32 = Subspace::fit(&x32, Retain::All, None).unwrap();
    for (a, b) in s64.eigenvalues().iter().zip(s32.eigenvalues()) {
        assert!((a - b as f64).abs() / a < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_rank_round_trip(seed in 0u64..10_000, d in 1usize..8, extra in 1usize..10) {
        let x = random(seed, d + extra, d);
        let s = Subspace::fit(&x, Retain::All, None).unwrap();
        prop_assert_eq!(s.n_components(), d);
        prop_assert!(s.orthonormality_error() < 1e-10);
        for r in x.rows() {
            let back = s.reconstruct(&s.project(r).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&back, r) < 1e-9);
        }
    }

    #[test]
    fn ratios_are_sorted_and_bounded(seed in 0u64..10_000, n in 2usize..20, d in 1usize..12) {
        let s = Subspace::fit(&random(seed, n, d), Retain::All, None).unwrap();
        let r = s.explained_variance_ratio();
        prop_assert!(r.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(r.iter().sum::<f64>() <= 1.0 + 1e-9);
    }
}
