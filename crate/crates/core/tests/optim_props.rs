use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdprop_core::optim::{rmsprop_step, sdprop_diag_step, sdprop_full_step, Hyper, RmsPropState};
use sdprop_core::{DiagCovState, FullCovState, Matrix, Optimizer, OptimizerConfig, OptimizerState};

fn diagonal_configs() -> Vec<OptimizerConfig> {
    vec![
        OptimizerConfig::sgd(0.1),
        OptimizerConfig::rmsprop(0.01, 0.9),
        OptimizerConfig::adam(0.01),
        OptimizerConfig::sdprop(0.01, 0.9),
        OptimizerConfig::sdprop(0.01, 0.99).with_warmup(3),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_oppose_the_gradient_sign(
        stream in prop::collection::vec(prop::collection::vec(-10f64..10.0, 3), 1..30),
    ) {
        for cfg in diagonal_configs() {
            let mut opt = Optimizer::new(&cfg, 3).unwrap();
            let mut theta = vec![0.5, -0.5, 2.0];
            for g in &stream {
                let before = theta.clone();
                opt.step(&mut theta, g).unwrap();
                let warming = matches!(opt.state(), OptimizerState::SdPropDiag(s) if s.t() <= cfg.warmup_steps);
                for i in 0..3 {
                    let delta = theta[i] - before[i];
                    // Adam follows its first moment, which may disagree with the
                    // newest gradient; the property is stated for the first step.
                    if cfg.kind == sdprop_core::OptimizerKind::Adam && opt.state().t() > 1 {
                        continue;
                    }
                    if g[i] != 0.0 && !warming {
                        prop_assert!(delta * g[i] < 0.0 || delta == 0.0 && g[i].abs() < 1e-300,
                            "{:?}: g {} delta {}", cfg.kind, g[i], delta);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories(
        stream in prop::collection::vec(prop::collection::vec(-10f64..10.0, 2), 1..40),
    ) {
        let mut configs = diagonal_configs();
        configs.push(OptimizerConfig::sdprop_full(0.01, 0.9).with_warmup(1));
        for cfg in configs {
            let run = || {
                let mut opt = Optimizer::new(&cfg, 2).unwrap();
                let mut theta = vec![1.0, -1.0];
                let mut path = Vec::new();
                for g in &stream {
                    opt.step(&mut theta, g).unwrap();
                    path.extend(theta.iter().map(|v| v.to_bits()));
                }
                path
            };
            prop_assert_eq!(run(), run());
        }
    }
}

fn sdprop_params(rho: f64, gamma: f64, epsilon: f64) -> sdprop_core::optim::SdPropParams {
    match OptimizerConfig::sdprop(rho, gamma).with_epsilon(epsilon).resolve().unwrap() {
        Hyper::SdPropDiag(p) => p,
        _ => unreachable!(),
    }
}

fn rms_params(alpha: f64, beta: f64, epsilon: f64) -> sdprop_core::optim::RmsPropParams {
    match OptimizerConfig::rmsprop(alpha, beta).with_epsilon(epsilon).resolve().unwrap() {
        Hyper::RmsProp(p) => p,
        _ => unreachable!(),
    }
}

/// Alternating `±c`: RMSProp's `v → c²`, SDProp's `μ` oscillates around 0
/// with amplitude `(1−γ)c/(1+γ)` and `c² → 4γc²/(1+γ)²`. A constant stream
/// then drives RMSProp's divisor to `|c|` and SDProp's to `ε`.
#[test]
fn rmsprop_and_sdprop_divisor_limits() {
    let (c, gamma, beta, eps) = (2.0, 0.9, 0.9, 1e-8);
    let sp = sdprop_params(0.01, gamma, eps);
    let rp = rms_params(0.01, beta, eps);
    let mut cov = DiagCovState::new(1, gamma).unwrap();
    let mut rms = RmsPropState::new(1);
    let mut theta = [0.0];
    for t in 0..2000 {
        let g = if t % 2 == 0 { c } else { -c };
        sdprop_diag_step(&mut theta, &[g], &mut cov, &sp).unwrap();
        rmsprop_step(&mut theta, &[g], &mut rms, &rp).unwrap();
    }
    assert!((rms.v[0] - c * c).abs() < 1e-9);
    let expected_c2 = 4.0 * gamma * c * c / (1.0 + gamma).powi(2);
    assert!((cov.c2()[0] - expected_c2).abs() < 1e-9 * expected_c2);
    assert!(cov.c2()[0] > 0.0);
    assert!(cov.mu()[0].abs() <= (1.0 - gamma) * c / (1.0 + gamma) + 1e-9);

    for _ in 0..2000 {
        sdprop_diag_step(&mut theta, &[c], &mut cov, &sp).unwrap();
        rmsprop_step(&mut theta, &[c], &mut rms, &rp).unwrap();
    }
    let rms_divisor = rms.v[0].sqrt() + eps;
    let sd_divisor = cov.c2()[0].sqrt() + eps;
    assert!((rms_divisor - (c + eps)).abs() < 1e-9);
    assert!(sd_divisor - eps < 1e-12, "c2 = {}", cov.c2()[0]);
}

/// With the true covariance estimated online from a stationary Gaussian
/// stream, the applied steps `ρ·C^{-1/2}·ĝ` have covariance close to `ρ²I`.
#[test]
fn full_sdprop_steps_are_whitened() {
    let dim = 3;
    let (rho, gamma) = (0.5, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut sigma = Matrix::identity(dim).scaled(0.3);
    for _ in 0..dim {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        sigma.add_outer(1.0, &v);
    }
    let l = DMatrix::from_row_slice(dim, dim, sigma.as_slice()).cholesky().unwrap().l();
    let mean = [1.0, -2.0, 0.5];
    let params = match OptimizerConfig::sdprop_full(rho, gamma).resolve().unwrap() {
        Hyper::SdPropFull(p) => p,
        _ => unreachable!(),
    };
    let mut cov = FullCovState::new(dim, gamma).unwrap();
    let mut theta = vec![0.0; dim];
    let (burn_in, kept) = (10_000, 100_000);
    let mut steps = Vec::with_capacity(kept);
    for t in 0..burn_in + kept {
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g: Vec<f64> = (0..dim)
            .map(|i| mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
            .collect();
        let before = theta.clone();
        sdprop_full_step(&mut theta, &g, &mut cov, &params).unwrap();
        if t >= burn_in {
            steps.push(before.iter().zip(&theta).map(|(a, b)| a - b).collect::<Vec<f64>>());
        }
    }
    // Second moment of the steps about the whitened mean.
    let n = steps.len() as f64;
    let m: Vec<f64> = (0..dim).map(|i| steps.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let mut c = Matrix::zeros(dim);
    for s in &steps {
        let dev: Vec<f64> = s.iter().zip(&m).map(|(a, b)| a - b).collect();
        c.add_outer(1.0 / n, &dev);
    }
    let err = c.max_abs_diff(&Matrix::identity(dim).scaled(rho * rho));
    assert!(err <= 0.1 * rho * rho, "max-norm error {err}");
}

/// On a noiseless quadratic every optimizer with a small rate descends
/// monotonically once the first few steps are past. SDProp needs its ε (or,
/// for the full variant, the eigenvalue floor) to act as a floor on the
/// divisor, since a deterministic gradient stream has almost no variance.
#[test]
fn monotone_descent_on_noiseless_quadratic() {
    let a = [1.0, 10.0];
    let loss = |th: &[f64]| 0.5 * (a[0] * th[0] * th[0] + a[1] * th[1] * th[1]);
    let configs = vec![
        OptimizerConfig::sgd(0.01),
        OptimizerConfig::rmsprop(0.001, 0.9),
        OptimizerConfig::adam(0.001),
        OptimizerConfig::sdprop(0.01, 0.9).with_epsilon(1.0),
        OptimizerConfig {
            eigen_floor: Some(1.0),
            ..OptimizerConfig::sdprop_full(0.01, 0.9)
        },
    ];
    for cfg in configs {
        let mut opt = Optimizer::new(&cfg, 2).unwrap();
        let mut theta = vec![1.0, 1.0];
        let mut losses = vec![loss(&theta)];
        for _ in 0..300 {
            let g = [a[0] * theta[0], a[1] * theta[1]];
            opt.step(&mut theta, &g).unwrap();
            losses.push(loss(&theta));
        }
        for t in 5..losses.len() - 1 {
            assert!(losses[t + 1] <= losses[t], "{:?} rose at step {t}: {} -> {}", cfg.kind, losses[t], losses[t + 1]);
        }
        assert!(losses[300] < losses[5], "{:?}", cfg.kind);
    }
}
