use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sdprop_core::verify::reference_mlp_loss;
use sdprop_core::{build_mlp, Activation, Graph, InitSpec, Tensor};

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = (0..n * d).map(|_| normal.sample(rng)).collect();
    let y = (0..n).map(|i| (i * 7 + 3) % k).collect();
    (x, y)
}

fn tensors(x: &[f64], y: &[usize], d: usize) -> (Tensor, Tensor) {
    (
        Tensor::matrix(y.len(), d, x.to_vec()).unwrap(),
        Tensor::vector(y.iter().map(|&v| v as f64).collect()),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Central differences on smooth (identity-activation) nets, where no
    /// ReLU kink can spoil the comparison.
    #[test]
    fn gradient_matches_finite_differences(
        seed in any::<u64>(),
        hidden in 0usize..3,
        width in 1usize..6,
        d in 1usize..5,
        k in 2usize..5,
        n in 1usize..6,
    ) {
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(k);
        let mut mlp = build_mlp(&sizes, Activation::Identity, InitSpec { mean: 0.0, stddev: 0.5, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (x, y) = random_batch(&mut rng, n, d, k);
        let theta = mlp.graph.params_flat();
        let (xt, yt) = tensors(&x, &y, d);
        let (_, grad) = mlp.loss_and_grad(&theta, xt, yt).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let (xt, yt) = tensors(&x, &y, d);
            let lp = mlp.evaluate(&plus, xt, yt).unwrap().loss;
            let (xt, yt) = tensors(&x, &y, d);
            let lm = mlp.evaluate(&minus, xt, yt).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            prop_assert!(err <= 1e-5, "param {}: fd {} vs {}", i, fd, grad[i]);
        }
    }

    /// The loss of a batch is the mean of per-example losses, so the batch
    /// gradient is the weighted mean of the gradients on any partition.
    #[test]
    fn gradient_is_consistent_across_partitions(seed in any::<u64>(), n in 2usize..12, cut in 1usize..11) {
        let cut = cut.min(n - 1);
        let (d, k) = (4, 3);
        let mut mlp = build_mlp(&[d, 5, 5, k], Activation::Relu, InitSpec { mean: 0.0, stddev: 0.5, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let (x, y) = random_batch(&mut rng, n, d, k);
        let theta = mlp.graph.params_flat();
        let (xt, yt) = tensors(&x, &y, d);
        let (_, full) = mlp.loss_and_grad(&theta, xt, yt).unwrap();
        let (xa, ya) = tensors(&x[..cut * d], &y[..cut], d);
        let (_, ga) = mlp.loss_and_grad(&theta, xa, ya).unwrap();
        let (xb, yb) = tensors(&x[cut * d..], &y[cut..], d);
        let (_, gb) = mlp.loss_and_grad(&theta, xb, yb).unwrap();
        let (wa, wb) = (cut as f64 / n as f64, (n - cut) as f64 / n as f64);
        for i in 0..full.len() {
            prop_assert!((full[i] - (wa * ga[i] + wb * gb[i])).abs() <= 1e-10);
        }
    }

    /// Duplicating every row leaves the mean loss and its gradient unchanged.
    #[test]
    fn duplicated_batch_gives_same_loss_and_gradient(seed in any::<u64>(), n in 1usize..8) {
        let (d, k) = (3, 4);
        let mut mlp = build_mlp(&[d, 6, k], Activation::Relu, InitSpec { mean: 0.0, stddev: 0.5, seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let (x, y) = random_batch(&mut rng, n, d, k);
        let theta = mlp.graph.params_flat();
        let (xt, yt) = tensors(&x, &y, d);
        let (e1, g1) = mlp.loss_and_grad(&theta, xt, yt).unwrap();
        let (x2, y2) = ([x.clone(), x].concat(), [y.clone(), y].concat());
        let (xt, yt) = tensors(&x2, &y2, d);
        let (e2, g2) = mlp.loss_and_grad(&theta, xt, yt).unwrap();
        prop_assert!((e1.loss - e2.loss).abs() <= 1e-12);
        prop_assert_eq!(e2.correct, 2 * e1.correct);
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn two_layer_forward_matches_reference() {
    let sizes = [5, 7, 3];
    let mut mlp = build_mlp(&sizes, Activation::Relu, InitSpec { mean: 0.0, stddev: 0.3, seed: 9 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (x, y) = random_batch(&mut rng, 11, 5, 3);
    let theta = mlp.graph.params_flat();
    let (xt, yt) = tensors(&x, &y, 5);
    let got = mlp.evaluate(&theta, xt, yt).unwrap().loss;
    let (want, _, _) = reference_mlp_loss(&sizes, &theta, &x, &y);
    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
}

/// `L = ½‖Wx‖²` is quadratic in `W`; its gradient is linear, so the
/// gradient at `aW₁ + bW₂` is `a∇(W₁) + b∇(W₂)`.
#[test]
fn gradient_of_quadratic_form_is_linear() {
    let (rows, cols) = (3, 4);
    let x = Tensor::matrix(2, rows, vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.1]).unwrap();
    let grad_at = |w: Vec<f64>| {
        let mut g = Graph::new();
        let input = g.input("x");
        let p = g.param("w", Tensor::matrix(rows, cols, w).unwrap());
        let y = g.matmul(input, p);
        let loss = g.half_sq_norm(y);
        g.set_loss(loss);
        g.forward(vec![(input, x.clone())]).unwrap();
        g.backward().unwrap()
    };
    let w1: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
    let w2: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 1.13).cos()).collect();
    let (a, b) = (0.7, -1.9);
    let combo: Vec<f64> = w1.iter().zip(&w2).map(|(p, q)| a * p + b * q).collect();
    let (g1, g2, gc) = (grad_at(w1), grad_at(w2), grad_at(combo));
    for i in 0..gc.len() {
        assert!((gc[i] - (a * g1[i] + b * g2[i])).abs() <= 1e-12);
    }
}

#[test]
fn backward_before_forward_is_an_error() {
    let mut mlp = build_mlp(&[2, 2], Activation::Relu, InitSpec { mean: 0.0, stddev: 0.1, seed: 0 }).unwrap();
    assert!(mlp.graph.backward().is_err());
}
