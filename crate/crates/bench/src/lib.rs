//! Deterministic inputs shared by the benchmarks.

use sdprop_core::Matrix;

/// A reproducible, non-constant gradient stream without pulling in an RNG.
pub fn gradient_stream(dim: usize, len: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|t| {
            (0..dim)
                .map(|i| ((t * 31 + i * 17) as f64 * 0.37).sin() + 0.1 * i as f64)
                .collect()
        })
        .collect()
}

/// `B Bᵀ + I` for a dense `B` built from [`gradient_stream`].
pub fn spd_matrix(dim: usize) -> Matrix {
    let rows = gradient_stream(dim, dim);
    let mut m = Matrix::identity(dim);
    for row in &rows {
        m.add_outer(1.0, row);
    }
    m
}
