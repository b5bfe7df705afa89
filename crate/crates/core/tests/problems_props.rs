use sdprop_core::problems::{make_rosenbrock, NoisyQuadratic, Rosenbrock};
use sdprop_core::{Matrix, StochasticProblem};

const DRAWS: usize = 100_000;

fn sample_moments(p: &mut dyn StochasticProblem, theta: &[f64]) -> (Vec<f64>, Matrix) {
    let d = theta.len();
    let draws: Vec<Vec<f64>> = (0..DRAWS).map(|s| p.sample_gradient(theta, 0, s).unwrap().grad).collect();
    let n = DRAWS as f64;
    let mean: Vec<f64> = (0..d).map(|i| draws.iter().map(|g| g[i]).sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(d);
    for g in &draws {
        let dev: Vec<f64> = g.iter().zip(&mean).map(|(a, b)| a - b).collect();
        cov.add_outer(1.0 / (n - 1.0), &dev);
    }
    (mean, cov)
}

#[test]
fn quadratic_noise_is_unbiased_with_the_requested_variance() {
    let noise = [0.5, 4.0];
    let mut q = NoisyQuadratic::diagonal(&[1.0, 100.0], &noise, vec![1.0, 1.0], 3).unwrap();
    let theta = [0.3, -0.2];
    let truth = q.true_gradient(&theta).unwrap();
    let (mean, cov) = sample_moments(&mut q, &theta);
    for i in 0..2 {
        let se = (noise[i] / DRAWS as f64).sqrt();
        assert!((mean[i] - truth[i]).abs() <= 3.0 * se, "coordinate {i}");
        assert!((cov[(i, i)] / noise[i] - 1.0).abs() <= 0.05, "variance {i}: {}", cov[(i, i)]);
    }
}

#[test]
fn quadratic_with_full_noise_covariance() {
    let a = Matrix::from_rows(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, 0.2], &[0.0, 0.2, 3.0]]).unwrap();
    let sigma = Matrix::from_rows(&[&[1.0, 0.6, -0.3], &[0.6, 2.0, 0.4], &[-0.3, 0.4, 0.5]]).unwrap();
    let mut q = NoisyQuadratic::new(a, sigma.clone(), vec![1.0, 1.0, 1.0], 8).unwrap();
    let theta = [1.0, -1.0, 0.5];
    let truth = q.true_gradient(&theta).unwrap();
    let (mean, cov) = sample_moments(&mut q, &theta);
    for i in 0..3 {
        assert!((mean[i] - truth[i]).abs() <= 3.0 * (sigma[(i, i)] / DRAWS as f64).sqrt());
    }
    assert!(cov.max_abs_diff(&sigma) <= 0.05 * sigma.max_abs(), "{cov:?}");
}

#[test]
fn noiseless_quadratic_returns_the_exact_gradient() {
    let mut q = NoisyQuadratic::diagonal(&[1.0, 10.0], &[0.0, 0.0], vec![1.0, 1.0], 0).unwrap();
    let g = q.sample_gradient(&[0.5, 2.0], 0, 0).unwrap();
    assert_eq!(g.grad, vec![0.5, 20.0]);
    assert_eq!(g.loss, 0.5 * (0.25 + 40.0));
}

#[test]
fn indefinite_noise_covariance_is_rejected() {
    let a = Matrix::identity(2);
    let bad = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
    assert!(NoisyQuadratic::new(a, bad, vec![0.0, 0.0], 0).is_err());
}

#[test]
fn rosenbrock_noise_has_the_configured_covariance() {
    let mut r = make_rosenbrock(0.1, 4).unwrap();
    let theta = [-1.2, 1.0];
    let truth = Rosenbrock::true_gradient(&theta);
    let (mean, cov) = sample_moments(&mut r, &theta);
    let expected = Matrix::identity(2).scaled(0.01);
    assert!(cov.max_abs_diff(&expected) <= 0.05 * 0.01, "{cov:?}");
    for i in 0..2 {
        assert!((mean[i] - truth[i]).abs() <= 3.0 * (0.01 / DRAWS as f64).sqrt());
    }
    assert_eq!(Rosenbrock::loss(&[1.0, 1.0]), 0.0);
    assert_eq!(Rosenbrock::true_gradient(&[1.0, 1.0]), vec![0.0, 0.0]);
}

#[test]
fn same_seed_gives_same_samples() {
    let draw = |seed| {
        let mut q = NoisyQuadratic::diagonal(&[1.0, 100.0], &[1.0, 1.0], vec![1.0, 1.0], seed).unwrap();
        (0..10).map(|s| q.sample_gradient(&[1.0, 1.0], 0, s).unwrap().grad).collect::<Vec<_>>()
    };
    assert_eq!(draw(7), draw(7));
    assert_ne!(draw(7), draw(8));
}
