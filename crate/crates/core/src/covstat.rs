//! Online estimates of the mean and (diagonal or full) covariance of a
//! stream of stochastic gradients.
//!
//! Both estimators use the exponentially weighted recurrences
//!
//! ```text
//! C_t = γ C_{t-1} + γ(1-γ) (g_t - μ_{t-1})(g_t - μ_{t-1})ᵀ
//! μ_t = γ μ_{t-1} + (1-γ) g_t
//! ```
//!
//! with `μ_1 = g_1`, `C_1 = 0`. The deviation uses the *previous* mean. A
//! state with `t == 0` has not seen any gradient; the first update seeds it.
//! Since each increment is a non-negative multiple of an outer product, `C_t`
//! stays positive semi-definite.

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{check_symmetric, spectral_map, Matrix};

/// Eigenvalue floor used by [`inv_sqrt`] unless the caller picks another.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-12;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

/// Per-coordinate moving mean `mu` and centred variance `c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCovState {
    mu: Vec<f64>,
    c2: Vec<f64>,
    t: u64,
    gamma: f64,
}

impl DiagCovState {
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            mu: vec![0.0; dim],
            c2: vec![0.0; dim],
            t: 0,
            gamma,
        })
    }

    /// Builds a state from explicit parts, e.g. to resume or to probe
    /// [`bias_correct`] with a hand-made state.
    pub fn from_parts(mu: Vec<f64>, c2: Vec<f64>, t: u64, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        ensure_len(mu.len(), c2.len())?;
        ensure_finite("mu", &mu)?;
        ensure_finite("c2", &c2)?;
        if let Some(index) = c2.iter().position(|&v| v < 0.0) {
            return Err(Error::config(format!("c2[{index}] is negative")));
        }
        Ok(Self { mu, c2, t, gamma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn c2(&self) -> &[f64] {
        &self.c2
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_initialized(&self) -> bool {
        self.t > 0
    }

    /// In-place form of [`diag_update`]. On error the state is untouched.
    pub fn observe(&mut self, g: &[f64]) -> Result<()> {
        ensure_len(self.dim(), g.len())?;
        ensure_finite("gradient", g)?;
        if self.t == 0 {
            self.mu.copy_from_slice(g);
            self.c2.iter_mut().for_each(|c| *c = 0.0);
        } else {
            let gamma = self.gamma;
            let w = gamma * (1.0 - gamma);
            for ((mu, c2), &gi) in self.mu.iter_mut().zip(self.c2.iter_mut()).zip(g) {
                let dev = gi - *mu;
                *c2 = gamma * *c2 + w * dev * dev;
                *mu = gamma * *mu + (1.0 - gamma) * gi;
            }
        }
        self.t += 1;
        Ok(())
    }
}

/// Returns the state after observing gradient `g`.
pub fn diag_update(state: &DiagCovState, g: &[f64]) -> Result<DiagCovState> {
    let mut next = state.clone();
    next.observe(g)?;
    Ok(next)
}

/// Divides both moving statistics by `1 - γᵗ`.
///
/// This is the zero-initialisation correction familiar from Adam, applied
/// unchanged to the centred variance. It is opt-in; the default optimizer
/// path uses the raw statistics.
pub fn bias_correct(state: &DiagCovState) -> Result<(Vec<f64>, Vec<f64>)> {
    if state.t == 0 {
        return Err(Error::Uninitialized);
    }
    let denom = 1.0 - state.gamma.powf(state.t as f64);
    let mu = state.mu.iter().map(|m| m / denom).collect();
    let c2 = state.c2.iter().map(|c| c / denom).collect();
    Ok((mu, c2))
}

/// Moving mean and full covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FullCovState {
    mu: Vec<f64>,
    cov: Matrix,
    t: u64,
    gamma: f64,
    dev: Vec<f64>,
}

impl FullCovState {
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            mu: vec![0.0; dim],
            cov: Matrix::zeros(dim),
            t: 0,
            gamma,
            dev: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// In-place form of [`full_update`]. On error the state is untouched.
    pub fn observe(&mut self, g: &[f64]) -> Result<()> {
        ensure_len(self.dim(), g.len())?;
        ensure_finite("gradient", g)?;
        if self.t == 0 {
            self.mu.copy_from_slice(g);
            self.cov = Matrix::zeros(self.dim());
        } else {
            let gamma = self.gamma;
            for ((d, &gi), &mi) in self.dev.iter_mut().zip(g).zip(&self.mu) {
                *d = gi - mi;
            }
            self.cov.scale_in_place(gamma);
            self.cov.add_outer(gamma * (1.0 - gamma), &self.dev);
            self.cov.symmetrize();
            for (mu, &gi) in self.mu.iter_mut().zip(g) {
                *mu = gamma * *mu + (1.0 - gamma) * gi;
            }
        }
        self.t += 1;
        Ok(())
    }
}

/// Returns the state after observing gradient `g`.
pub fn full_update(state: &FullCovState, g: &[f64]) -> Result<FullCovState> {
    let mut next = state.clone();
    next.observe(g)?;
    Ok(next)
}

/// Symmetric inverse square root `U diag(1/√max(λ, floor)) Uᵀ` of `c`.
///
/// Eigenvalues under `floor` are clamped before inversion, so rank-deficient
/// covariances (always the case right after the first observation) map to a
/// finite preconditioner.
pub fn inv_sqrt(c: &Matrix, floor: f64) -> Result<Matrix> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::config(format!("eigenvalue floor must be positive, got {floor}")));
    }
    check_symmetric(c)?;
    spectral_map(c, |l| 1.0 / l.max(floor).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_observation_seeds_mean_and_zero_variance() {
        let s = diag_update(&DiagCovState::new(1, 0.9).unwrap(), &[5.0]).unwrap();
        assert_eq!(s.mu(), &[5.0]);
        assert_eq!(s.c2(), &[0.0]);
        assert_eq!(s.t(), 1);
    }

    #[test]
    fn constant_stream_keeps_zero_variance() {
        let mut s = DiagCovState::new(1, 0.9).unwrap();
        for _ in 0..100 {
            s.observe(&[2.0]).unwrap();
            assert_eq!(s.c2(), &[0.0]);
        }
        let mut f = FullCovState::new(2, 0.9).unwrap();
        for _ in 0..100 {
            f.observe(&[2.0, -1.0]).unwrap();
        }
        assert_eq!(f.cov(), &Matrix::zeros(2));
    }

    #[test]
    fn scalar_two_step_values() {
        // μ₂ = 0.9·1 + 0.1·3, c²₂ = 0.9·0.1·(3 − 1)²
        let mut s = DiagCovState::new(1, 0.9).unwrap();
        s.observe(&[1.0]).unwrap();
        s.observe(&[3.0]).unwrap();
        assert_relative_eq!(s.mu()[0], 1.2, max_relative = 1e-15);
        assert_relative_eq!(s.c2()[0], 0.36, max_relative = 1e-14);
    }

    #[test]
    fn full_two_step_values() {
        let mut s = FullCovState::new(2, 0.9).unwrap();
        s.observe(&[1.0, 0.0]).unwrap();
        s.observe(&[3.0, 2.0]).unwrap();
        assert_relative_eq!(s.mu()[0], 1.2, max_relative = 1e-15);
        assert_relative_eq!(s.mu()[1], 0.2, max_relative = 1e-14);
        for v in s.cov().as_slice() {
            assert_relative_eq!(*v, 0.36, max_relative = 1e-14);
        }
    }

    #[test]
    fn one_dimensional_full_matches_diag() {
        let stream = [0.3, -1.2, 4.0, 4.0, 2.5, -0.1];
        let mut d = DiagCovState::new(1, 0.7).unwrap();
        let mut f = FullCovState::new(1, 0.7).unwrap();
        for g in stream {
            d.observe(&[g]).unwrap();
            f.observe(&[g]).unwrap();
            assert_eq!(d.mu(), f.mu());
            assert_eq!(d.c2()[0], f.cov()[(0, 0)]);
        }
    }

    #[test]
    fn update_errors_leave_state_untouched() {
        let mut s = DiagCovState::new(2, 0.9).unwrap();
        s.observe(&[1.0, 2.0]).unwrap();
        let before = s.clone();
        assert!(matches!(s.observe(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            s.observe(&[1.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert_eq!(s, before);

        let mut f = FullCovState::new(2, 0.9).unwrap();
        assert!(f.observe(&[f64::NAN, 0.0]).is_err());
        assert_eq!(f.t(), 0);
    }

    #[test]
    fn gamma_range_is_checked() {
        assert!(DiagCovState::new(1, 1.0).is_err());
        assert!(DiagCovState::new(1, -0.1).is_err());
        assert!(FullCovState::new(1, 1.0).is_err());
        assert!(DiagCovState::new(1, 0.0).is_ok());
    }

    #[test]
    fn bias_correction_cases() {
        // Zero-initialised mean after one step equals (1 − γ) g.
        let s = DiagCovState::from_parts(vec![0.1 * 4.0], vec![0.0], 1, 0.9).unwrap();
        let (mu, _) = bias_correct(&s).unwrap();
        assert_relative_eq!(mu[0], 4.0, max_relative = 1e-14);

        let s = DiagCovState::from_parts(vec![1.5], vec![0.25], 7, 0.0).unwrap();
        assert_eq!(bias_correct(&s).unwrap(), (vec![1.5], vec![0.25]));

        let s = DiagCovState::from_parts(vec![1.2], vec![0.36], 2, 0.9).unwrap();
        let (_, c2) = bias_correct(&s).unwrap();
        assert_relative_eq!(c2[0], 0.36 / 0.19, max_relative = 1e-14);
        assert_relative_eq!(c2[0], 1.894_736_842_105_263, max_relative = 1e-12);

        let fresh = DiagCovState::new(3, 0.9).unwrap();
        assert!(matches!(bias_correct(&fresh), Err(Error::Uninitialized)));
    }

    #[test]
    fn inv_sqrt_closed_forms() {
        let i3 = Matrix::identity(3);
        assert!(inv_sqrt(&i3, 1e-12).unwrap().max_abs_diff(&i3) < 1e-15);

        let d = inv_sqrt(&Matrix::from_diag(&[4.0, 9.0]), 1e-12).unwrap();
        assert!(d.max_abs_diff(&Matrix::from_diag(&[0.5, 1.0 / 3.0])) < 1e-15);
    }

    #[test]
    fn inv_sqrt_clamps_singular_input() {
        let d = inv_sqrt(&Matrix::zeros(2), 1e-12).unwrap();
        assert!(d.max_abs_diff(&Matrix::from_diag(&[1e6, 1e6])) < 1e-6);
    }

    #[test]
    fn inv_sqrt_rejects_bad_input() {
        let a = Matrix::from_rows(&[&[1.0, 0.5], &[0.4, 1.0]]).unwrap();
        assert!(matches!(inv_sqrt(&a, 1e-12), Err(Error::NotSymmetric { .. })));
        let b = Matrix::from_diag(&[1.0, f64::NAN]);
        assert!(matches!(inv_sqrt(&b, 1e-12), Err(Error::NonFinite { .. })));
        assert!(inv_sqrt(&Matrix::identity(2), 0.0).is_err());
    }
}
