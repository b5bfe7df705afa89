use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdprop_core::covstat::DEFAULT_EIGEN_FLOOR;
use sdprop_core::{diag_update, full_update, inv_sqrt, DiagCovState, FullCovState, Matrix};

fn eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.dim();
    let mut ev: Vec<f64> = DMatrix::from_row_slice(n, n, m.as_slice())
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `U diag(λ^{-1/2}) Uᵀ` computed with nalgebra.
fn oracle_inv_sqrt(m: &Matrix) -> Matrix {
    let n = m.dim();
    let eig = DMatrix::from_row_slice(n, n, m.as_slice()).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let r = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Matrix::from_row_major(n, r.transpose().as_slice().to_vec()).unwrap()
}

fn stream_strategy() -> impl Strategy<Value = (usize, f64, Vec<Vec<f64>>)> {
    (1usize..=6, prop::sample::select(vec![0.0, 0.5, 0.9, 0.99]), 1usize..=80).prop_flat_map(
        |(d, gamma, len)| {
            (
                Just(d),
                Just(gamma),
                prop::collection::vec(prop::collection::vec(-1e3f64..1e3, d), len),
            )
        },
    )
}

fn random_spd(rng: &mut ChaCha8Rng, dim: usize, ridge: f64) -> Matrix {
    let mut m = Matrix::identity(dim).scaled(ridge);
    for _ in 0..dim {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        m.add_outer(1.0, &v);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_positive_semidefinite((d, gamma, stream) in stream_strategy()) {
        let mut s = FullCovState::new(d, gamma).unwrap();
        for g in &stream {
            s = full_update(&s, g).unwrap();
            let ev = eigenvalues(s.cov());
            prop_assert!(ev[0] >= -1e-10 * (1.0 + ev[d - 1].abs()), "eigenvalues {:?}", ev);
            prop_assert!(s.cov().max_asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn full_diagonal_matches_diagonal_state((d, gamma, stream) in stream_strategy()) {
        let mut full = FullCovState::new(d, gamma).unwrap();
        let mut diag = DiagCovState::new(d, gamma).unwrap();
        for g in &stream {
            full = full_update(&full, g).unwrap();
            diag = diag_update(&diag, g).unwrap();
            for (a, b) in full.cov().diagonal().iter().zip(diag.c2()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
            }
            prop_assert!(diag.c2().iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn constant_stream_has_zero_covariance(g in prop::collection::vec(-1e6f64..1e6, 1..6), len in 1usize..50, gamma in 0.0f64..0.999) {
        let mut full = FullCovState::new(g.len(), gamma).unwrap();
        let mut diag = DiagCovState::new(g.len(), gamma).unwrap();
        for _ in 0..len {
            full.observe(&g).unwrap();
            diag.observe(&g).unwrap();
        }
        // μ = γμ + (1−γ)g only reproduces g up to rounding.
        let tol = 1e-24 * g.iter().map(|v| v * v).fold(0.0, f64::max);
        prop_assert!(full.cov().as_slice().iter().all(|&c| c.abs() <= tol));
        prop_assert!(diag.c2().iter().all(|&c| c.abs() <= tol));
    }

    #[test]
    fn one_dimensional_full_equals_diagonal(stream in prop::collection::vec(-100f64..100.0, 1..100), gamma in 0.0f64..0.999) {
        let mut full = FullCovState::new(1, gamma).unwrap();
        let mut diag = DiagCovState::new(1, gamma).unwrap();
        for g in &stream {
            full.observe(&[*g]).unwrap();
            diag.observe(&[*g]).unwrap();
            prop_assert_eq!(full.mu(), diag.mu());
            prop_assert_eq!(full.cov()[(0, 0)], diag.c2()[0]);
        }
    }

    #[test]
    fn inv_sqrt_whitens_random_spd(seed in any::<u64>(), dim in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_spd(&mut rng, dim, 0.1);
        let d = inv_sqrt(&c, DEFAULT_EIGEN_FLOOR).unwrap();
        let dcd = d.matmul(&c).unwrap().matmul(&d.transpose()).unwrap();
        prop_assert!(dcd.max_abs_diff(&Matrix::identity(dim)) <= 1e-8);
        let oracle = oracle_inv_sqrt(&c);
        prop_assert!(d.max_abs_diff(&oracle) <= 1e-8 * oracle.max_abs().max(1.0));
    }
}

#[test]
fn two_dimensional_hand_example() {
    let mut s = FullCovState::new(2, 0.9).unwrap();
    s.observe(&[1.0, 0.0]).unwrap();
    s.observe(&[3.0, 2.0]).unwrap();
    assert_relative_eq!(s.mu()[0], 1.2, max_relative = 1e-14);
    assert_relative_eq!(s.mu()[1], 0.2, max_relative = 1e-14);
    for &v in s.cov().as_slice() {
        assert_relative_eq!(v, 0.36, max_relative = 1e-14);
    }
}

fn empirical_cov(samples: &[Vec<f64>]) -> Matrix {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let mut c = Matrix::zeros(d);
    for s in samples {
        let dev: Vec<f64> = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
        c.add_outer(1.0 / (n - 1.0), &dev);
    }
    c
}

#[test]
fn whitening_and_rho_scaling_on_gaussian_samples() {
    let n = 100_000;
    for (seed, dim) in [(11u64, 2usize), (12, 4), (13, 6)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, dim, 0.2);
        let mean: Vec<f64> = (0..dim).map(|i| i as f64 - 2.0).collect();
        let l = DMatrix::from_row_slice(dim, dim, sigma.as_slice()).cholesky().unwrap().l();
        let d = inv_sqrt(&sigma, DEFAULT_EIGEN_FLOOR).unwrap();
        let whitened: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let g: Vec<f64> = (0..dim)
                    .map(|i| mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
                    .collect();
                d.mul_vec(&g).unwrap()
            })
            .collect();
        for rho in [0.1, 1.0, 10.0] {
            let steps: Vec<Vec<f64>> = whitened.iter().map(|w| w.iter().map(|v| rho * v).collect()).collect();
            let cov = empirical_cov(&steps);
            let err = cov.max_abs_diff(&Matrix::identity(dim).scaled(rho * rho));
            assert!(err <= 0.05 * rho * rho, "dim {dim} rho {rho}: {err}");
        }
    }
}
