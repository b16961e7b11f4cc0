//! Score oracles for Gaussian path marginals.
//!
//! With `a = sigma_r^2 * dt` and pseudo-inverse `P = D^+`, the scaled score of the
//! hidden-state marginal is `-Lambda (r - P mu)` with
//! `Lambda = a (a I + P Sigma P^T)^{-1}`. The score is obtained from a Cholesky solve.

use alloc::format;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, shape, Result};
use crate::linalg::pseudo_inverse;
use crate::process::OuParams;

/// Time-dependent mean and covariance of a target path distribution.
pub trait GaussianMoments {
    fn dim(&self) -> usize;
    fn mean(&self, t: f64) -> DVector<f64>;
    fn cov(&self, t: f64) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments for StationaryGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn mean(&self, _t: f64) -> DVector<f64> {
        self.mean.clone()
    }
    fn cov(&self, _t: f64) -> DMatrix<f64> {
        self.cov.clone()
    }
}

/// Marginals of an isotropic OU process, using [`ou_moments`].
#[derive(Debug, Clone, PartialEq)]
pub struct OuMarginal(pub OuParams);

impl GaussianMoments for OuMarginal {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn mean(&self, t: f64) -> DVector<f64> {
        ou_moments(t, &self.0).map(|m| m.0).unwrap_or_else(|_| DVector::from_element(self.dim(), f64::NAN))
    }
    fn cov(&self, t: f64) -> DMatrix<f64> {
        let v = ou_moments(t, &self.0).map(|m| m.1).unwrap_or(f64::NAN);
        DMatrix::from_diagonal_element(self.dim(), self.dim(), v)
    }
}

/// Isotropic Brownian motion from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerMarginal {
    pub sigma_s: f64,
    pub dim: usize,
}

impl GaussianMoments for WienerMarginal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn mean(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn cov(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.sigma_s * self.sigma_s * t)
    }
}

/// Read-out pseudo-inverse and the noise scale `a = sigma_r^2 * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContext {
    pub d_pinv: DMatrix<f64>,
    pub sigma_r2_dt: f64,
}

impl ScoreContext {
    pub fn new(d_out: &DMatrix<f64>, sigma_r2_dt: f64) -> Result<Self> {
        check_scale(sigma_r2_dt)?;
        Ok(ScoreContext { d_pinv: pseudo_inverse(d_out), sigma_r2_dt })
    }

    /// Hidden state equals the observed state.
    pub fn identity(dim: usize, sigma_r2_dt: f64) -> Result<Self> {
        check_scale(sigma_r2_dt)?;
        Ok(ScoreContext { d_pinv: DMatrix::identity(dim, dim), sigma_r2_dt })
    }

    pub fn hidden_dim(&self) -> usize {
        self.d_pinv.nrows()
    }
}

fn check_scale(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(param(format!("sigma_r^2 dt must be > 0, got {a}")));
    }
    Ok(())
}

fn system_matrix(ctx: &ScoreContext, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ctx.hidden_dim();
    let p = &ctx.d_pinv;
    let mut k = p * cov * p.transpose();
    for i in 0..n {
        k[(i, i)] += ctx.sigma_r2_dt;
    }
    (&k + k.transpose()) * 0.5
}

fn check_moments(moments: &dyn GaussianMoments, ctx: &ScoreContext) -> Result<()> {
    if moments.dim() != ctx.d_pinv.ncols() {
        return Err(shape(format!(
            "moments have dim {} but the read-out pseudo-inverse expects {}",
            moments.dim(),
            ctx.d_pinv.ncols()
        )));
    }
    Ok(())
}

/// `Lambda(t) = a (a I + P Sigma(t) P^T)^{-1}`.
pub fn leakage_matrix(t: f64, moments: &dyn GaussianMoments, ctx: &ScoreContext) -> Result<DMatrix<f64>> {
    check_moments(moments, ctx)?;
    let n = ctx.hidden_dim();
    let k = system_matrix(ctx, &moments.cov(t));
    let chol = k.cholesky().ok_or_else(|| param("a I + P Sigma P^T is not positive definite"))?;
    let lam = chol.solve(&(DMatrix::identity(n, n) * ctx.sigma_r2_dt));
    Ok((&lam + lam.transpose()) * 0.5)
}

/// `a * grad log p_t(r)` for the hidden-state marginal `N(P mu, a I + P Sigma P^T)`.
pub fn gaussian_score(r: &DVector<f64>, t: f64, moments: &dyn GaussianMoments, ctx: &ScoreContext) -> Result<DVector<f64>> {
    check_moments(moments, ctx)?;
    if r.len() != ctx.hidden_dim() {
        return Err(shape(format!("r has length {} but hidden dim is {}", r.len(), ctx.hidden_dim())));
    }
    let k = system_matrix(ctx, &moments.cov(t));
    let chol = k.cholesky().ok_or_else(|| param("a I + P Sigma P^T is not positive definite"))?;
    let resid = r - &ctx.d_pinv * moments.mean(t);
    Ok(chol.solve(&resid) * (-ctx.sigma_r2_dt))
}

/// Mean and per-coordinate variance of the OU marginal in the closed form used for replay:
/// `mu (1 - e^{-theta t})` and `sigma_s^2 (1 - e^{-2 theta t}) / (2 theta) + sigma_0^2 e^{-theta t}`.
/// `theta = 0` gives `sigma_s^2 t + sigma_0^2`.
pub fn ou_moments(t: f64, p: &OuParams) -> Result<(DVector<f64>, f64)> {
    p.validate()?;
    if !(t >= 0.0) {
        return Err(param(format!("t must be >= 0, got {t}")));
    }
    let mean = &p.mu * (-libm::expm1(-p.theta * t));
    let spread = if p.theta == 0.0 { t } else { -libm::expm1(-2.0 * p.theta * t) / (2.0 * p.theta) };
    let var = p.sigma_s * p.sigma_s * spread + p.sigma_0 * p.sigma_0 * libm::exp(-p.theta * t);
    Ok((mean, var))
}

/// Scalar OU score with identity read-out: `a (m(t) - r) / (a + var(t))`.
pub fn ou_score(r: f64, t: f64, p: &OuParams, sigma_r2_dt: f64) -> Result<f64> {
    check_scale(sigma_r2_dt)?;
    if p.dim() != 1 {
        return Err(shape("ou_score is scalar; use gaussian_score for vector processes"));
    }
    let (m, var) = ou_moments(t, p)?;
    Ok(sigma_r2_dt * (m[0] - r) / (sigma_r2_dt + var))
}

/// Scalar Wiener score: `-a r / (sigma_s^2 t + a)`.
pub fn wiener_score(r: f64, t: f64, sigma_s: f64, sigma_r2_dt: f64) -> Result<f64> {
    check_scale(sigma_r2_dt)?;
    if !(t >= 0.0) {
        return Err(param(format!("t must be >= 0, got {t}")));
    }
    Ok(-sigma_r2_dt * r / (sigma_s * sigma_s * t + sigma_r2_dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ou_moments_at_zero_and_infinity() {
        let p = OuParams::scalar(2.0, 5.0, 0.1, 0.2, 0.02, 100);
        let (m, v) = ou_moments(0.0, &p).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((v - 0.04).abs() < 1e-15);
        let (m, v) = ou_moments(1e3, &p).unwrap();
        assert!((m[0] - 5.0).abs() < 1e-12);
        assert!((v - 0.0025).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_is_brownian() {
        let p = OuParams::scalar(0.0, 5.0, 0.3, 0.1, 0.02, 100);
        let (m, v) = ou_moments(2.0, &p).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((v - (0.09 * 2.0 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn wiener_score_at_origin_time() {
        assert!((wiener_score(3.0, 0.0, 1.0, 0.5).unwrap() + 3.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_leakage_matches_closed_form() {
        let g = StationaryGaussian { mean: DVector::from_vec(vec![1.0]), cov: DMatrix::from_element(1, 1, 3.0) };
        let ctx = ScoreContext::identity(1, 1.0).unwrap();
        let lam = leakage_matrix(0.0, &g, &ctx).unwrap();
        assert!((lam[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(ScoreContext::identity(2, 0.0).is_err());
        assert!(ou_score(0.0, 1.0, &OuParams::reference_1d(), -1.0).is_err());
    }
}
