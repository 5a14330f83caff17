mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajcf_core::matrix::{
    build_matrix, poi_type_histogram, reconstruct, truncated_svd_dense, MatrixMode, SvdMethod,
};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

fn frobenius_error(a: &DMatrix<f64>, k: usize, method: SvdMethod, seed: u64) -> f64 {
    (a - reconstruct(&truncated_svd_dense(a, k, method, seed).unwrap()).values()).norm()
}

proptest! {
    #[test]
    fn histogram_totals_equal_count_row_sums(ds in common::dataset()) {
        let counts = build_matrix(&ds, MatrixMode::Count);
        let binary = build_matrix(&ds, MatrixMode::Binary);
        for (r, user) in counts.users().ids().iter().enumerate() {
            let hist = poi_type_histogram(&ds, user).unwrap();
            let records = ds.trajectory(user).unwrap().len();
            prop_assert_eq!(hist.values().sum::<usize>(), records);
            prop_assert_eq!(counts.row_sum(r), records as f64);
            prop_assert!(binary.row_sum(r) <= counts.row_sum(r));
            prop_assert_eq!(binary.row(r).len(), counts.row(r).len());
        }
    }
}

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (n, m) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let a = random_matrix(&mut rng, n, m);
        let k = n.min(m);
        let f = truncated_svd_dense(&a, k, SvdMethod::Deterministic, 0).unwrap();
        let mut eig: Vec<f64> = SymmetricEigen::new(a.transpose() * &a).eigenvalues.iter().copied().collect();
        eig.sort_by(|x, y| y.total_cmp(x));
        for (s, e) in f.singular_values.iter().zip(&eig) {
            assert!((s * s - e.max(0.0)).abs() < 1e-8 * eig[0].max(1.0), "{s} vs {e}");
        }
        assert!((f.left.transpose() * &f.left - DMatrix::identity(k, k)).amax() < 1e-9);
        assert!((f.right.transpose() * &f.right - DMatrix::identity(k, k)).amax() < 1e-9);
    }
}

#[test]
fn truncation_beats_random_rank_k_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (n, m) = (rng.random_range(2..=50), rng.random_range(2..=50));
        let a = random_matrix(&mut rng, n, m);
        let k = rng.random_range(1..n.min(m));
        let f = truncated_svd_dense(&a, k, SvdMethod::Deterministic, 0).unwrap();
        let best = (&a - reconstruct(&f).values()).norm();
        let all = truncated_svd_dense(&a, n.min(m), SvdMethod::Deterministic, 0).unwrap();
        let tail = all.singular_values.rows(k, n.min(m) - k).norm();
        assert!((best - tail).abs() < 1e-8);

        let mut scaled_left = f.left.clone();
        for j in 0..k {
            scaled_left.column_mut(j).scale_mut(f.singular_values[j]);
        }
        for trial in 0..1000 {
            // Half fully random, half small perturbations of the optimum.
            let candidate = if trial % 2 == 0 {
                random_matrix(&mut rng, n, k) * random_matrix(&mut rng, k, m)
            } else {
                let eps = 10f64.powi(-rng.random_range(1..6));
                (&scaled_left + eps * random_matrix(&mut rng, n, k))
                    * (&f.right + eps * random_matrix(&mut rng, m, k)).transpose()
            };
            assert!((&a - candidate).norm() >= best - 1e-12);
        }
    }
}

#[test]
fn randomized_error_is_close_to_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let a = random_matrix(&mut rng, 50, 80);
        let k = rng.random_range(1..=20);
        let exact = frobenius_error(&a, k, SvdMethod::Deterministic, 0);
        let approx = frobenius_error(&a, k, SvdMethod::Randomized, trial);
        assert!(approx <= 1.5 * exact, "trial {trial}: {approx} > 1.5 × {exact}");
        assert!(approx >= exact - 1e-9);
    }
}
