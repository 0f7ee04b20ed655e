//! Fourier drift basis, model parameters, and the closed-form quantities
//! derived from them.
//!
//! The basis is ordered as
//! `(1, sqrt2 cos 2pi t, ..., sqrt2 cos 2pi (p1-1) t, sqrt2 sin 2pi t, ..., sqrt2 sin 2pi p2 t)`
//! with period 1. For a frequency `f = k - 1` the stationary drift mean uses
//!
//! ```text
//! a_k = a / (a^2 + 4 pi^2 f^2),   b_k = 2 pi f / (a^2 + 4 pi^2 f^2)
//! ```

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fourier basis with `p1` cosine terms (frequencies `0..p1`, the first being
/// the constant) and `p2` sine terms (frequencies `1..=p2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub p1: usize,
    pub p2: usize,
}

/// One basis function: a frequency and whether it is the sine or cosine
/// member of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFn {
    Cos(usize),
    Sin(usize),
}

impl BasisFn {
    pub fn frequency(self) -> usize {
        match self {
            BasisFn::Cos(f) | BasisFn::Sin(f) => f,
        }
    }
}

impl BasisSpec {
    pub fn new(p1: usize, p2: usize) -> Result<Self> {
        let spec = Self { p1, p2 };
        spec.validate()?;
        Ok(spec)
    }

    /// The two-function basis `(1, sqrt2 cos 2pi t)` used throughout the experiments.
    pub fn constant_plus_cosine() -> Self {
        Self { p1: 2, p2: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1 == 0 {
            return Err(Error::InvalidParameter(
                "basis must contain the constant function (p1 >= 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p1 + self.p2
    }

    pub fn functions(&self) -> impl Iterator<Item = BasisFn> {
        (0..self.p1)
            .map(BasisFn::Cos)
            .chain((1..=self.p2).map(BasisFn::Sin))
    }

    /// Position of a basis function in the coefficient vector, if present.
    pub fn index_of(&self, f: BasisFn) -> Option<usize> {
        match f {
            BasisFn::Cos(k) if k < self.p1 => Some(k),
            BasisFn::Sin(k) if k >= 1 && k <= self.p2 => Some(self.p1 + k - 1),
            _ => None,
        }
    }

    pub fn max_frequency(&self) -> usize {
        (self.p1 - 1).max(self.p2)
    }

    /// Evaluate `phi(t)` into `out` (length `p`).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        for (slot, f) in out.iter_mut().zip(self.functions()) {
            *slot = eval_fn(f, t);
        }
    }
}

/// Value of a single basis function at `t`.
pub fn eval_fn(f: BasisFn, t: f64) -> f64 {
    match f {
        BasisFn::Cos(0) => 1.0,
        BasisFn::Cos(k) => SQRT_2 * (2.0 * PI * k as f64 * t).cos(),
        BasisFn::Sin(k) => SQRT_2 * (2.0 * PI * k as f64 * t).sin(),
    }
}

/// `phi(t)` as a vector.
pub fn eval_basis(spec: &BasisSpec, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim()];
    spec.eval_into(t, &mut out);
    out
}

/// `(a_k, b_k)` for frequency index `k >= 1` (frequency `k - 1`).
pub fn ab_coeffs(a: f64, k: usize) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mean reversion a must be positive, got {a}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("frequency index k starts at 1".into()));
    }
    Ok(ab_for_frequency(a, k - 1))
}

pub(crate) fn ab_for_frequency(a: f64, f: usize) -> (f64, f64) {
    let w = 2.0 * PI * f as f64;
    let d = a * a + w * w;
    (a / d, w / d)
}

/// Drift coefficients, mean-reversion rate and diffusion scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GouModel {
    pub mu: Vec<f64>,
    pub a: f64,
    pub sigma: f64,
    pub basis: BasisSpec,
}

impl GouModel {
    pub fn new(mu: Vec<f64>, a: f64, sigma: f64, basis: BasisSpec) -> Result<Self> {
        let m = Self { mu, a, sigma, basis };
        m.validate()?;
        Ok(m)
    }

    /// Model on the `(1, sqrt2 cos 2pi t)` basis from `theta = (mu1, mu2, a)`.
    pub fn cosine_pair(theta: [f64; 3], sigma: f64) -> Result<Self> {
        Self::new(
            vec![theta[0], theta[1]],
            theta[2],
            sigma,
            BasisSpec::constant_plus_cosine(),
        )
    }

    /// Model from `theta = (mu, a)` on `basis`.
    pub fn from_theta(theta: &[f64], sigma: f64, basis: BasisSpec) -> Result<Self> {
        if theta.len() != basis.dim() + 1 {
            return Err(Error::InvalidParameter(format!(
                "theta has length {} but the basis needs {}",
                theta.len(),
                basis.dim() + 1
            )));
        }
        Self::new(theta[..basis.dim()].to_vec(), theta[basis.dim()], sigma, basis)
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mean reversion a must be positive and finite, got {}",
                self.a
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "diffusion sigma must be nonnegative and finite, got {}",
                self.sigma
            )));
        }
        if self.mu.len() != self.basis.dim() {
            return Err(Error::InvalidParameter(format!(
                "mu has length {} but the basis has dimension {}",
                self.mu.len(),
                self.basis.dim()
            )));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("mu must be finite".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.basis.dim()
    }

    /// `theta = (mu, a)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut th = self.mu.clone();
        th.push(self.a);
        th
    }

    /// Drift coefficient of `f`, zero if the basis does not contain it.
    pub(crate) fn coef(&self, f: BasisFn) -> f64 {
        self.basis.index_of(f).map_or(0.0, |i| self.mu[i])
    }

    /// `mu' phi(t)`.
    pub fn periodic_drift(&self, t: f64) -> f64 {
        self.basis
            .functions()
            .zip(&self.mu)
            .map(|(f, m)| m * eval_fn(f, t))
            .sum()
    }

    /// Inner products `int_0^1 htilde(t) phi_j(t) dt` for every basis function.
    pub(crate) fn htilde_projections(&self) -> Vec<f64> {
        self.basis
            .functions()
            .map(|f| {
                let freq = f.frequency();
                let (ak, bk) = ab_for_frequency(self.a, freq);
                let c = self.coef(BasisFn::Cos(freq));
                let s = if freq == 0 { 0.0 } else { self.coef(BasisFn::Sin(freq)) };
                match f {
                    BasisFn::Cos(_) => c * ak - s * bk,
                    BasisFn::Sin(_) => s * ak + c * bk,
                }
            })
            .collect()
    }

    /// `int_0^1 htilde(t)^2 dt`.
    pub(crate) fn htilde_sq_norm(&self) -> f64 {
        (0..=self.basis.max_frequency())
            .map(|freq| {
                let c = self.coef(BasisFn::Cos(freq));
                let s = if freq == 0 { 0.0 } else { self.coef(BasisFn::Sin(freq)) };
                let (ak, bk) = ab_for_frequency(self.a, freq);
                (c * c + s * s) * (ak * ak + bk * bk)
            })
            .sum()
    }
}

/// Stationary periodic mean `htilde(t)`, the 1-periodic solution of
/// `h' = mu' phi(t) - a h`.
pub fn htilde(model: &GouModel, t: f64) -> f64 {
    model
        .basis
        .functions()
        .zip(&model.mu)
        .map(|(f, &m)| {
            let freq = f.frequency();
            let (ak, bk) = ab_for_frequency(model.a, freq);
            match f {
                BasisFn::Cos(0) => m * ak,
                BasisFn::Cos(k) => m * (ak * eval_fn(f, t) + bk * eval_fn(BasisFn::Sin(k), t)),
                BasisFn::Sin(k) => m * (ak * eval_fn(f, t) - bk * eval_fn(BasisFn::Cos(k), t)),
            }
        })
        .sum()
}

/// Limit of `Q_[0,T] / T`: `[[I_p, Lambda], [Lambda', omega]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMatrix(DMatrix<f64>);

impl SigmaMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn lambda(&self) -> DVector<f64> {
        let p = self.dim() - 1;
        self.0.view((0, p), (p, 1)).column(0).into_owned()
    }

    pub fn omega(&self) -> f64 {
        let p = self.dim() - 1;
        self.0[(p, p)]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

pub fn sigma_matrix(model: &GouModel) -> Result<SigmaMatrix> {
    model.validate()?;
    let p = model.p();
    let mut m = DMatrix::<f64>::identity(p + 1, p + 1);
    for (j, proj) in model.htilde_projections().into_iter().enumerate() {
        m[(j, p)] = -proj;
        m[(p, j)] = -proj;
    }
    m[(p, p)] = model.htilde_sq_norm() + model.sigma * model.sigma / (2.0 * model.a);
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if !(min_eig > 1e-10) {
        return Err(Error::NotPsd(format!(
            "Sigma has smallest eigenvalue {min_eig:.3e}; sigma must be positive"
        )));
    }
    Ok(SigmaMatrix(m))
}

fn check_pair(theta0: &GouModel, theta_star: &GouModel) -> Result<()> {
    theta0.validate()?;
    theta_star.validate()?;
    if theta0.basis != theta_star.basis {
        return Err(Error::InvalidParameter(
            "pre- and post-change models must share the same basis".into(),
        ));
    }
    Ok(())
}

/// `kappa_Q = a (mu1* / a* - mu1 / a)`; the residual detector is consistent
/// only when this is nonzero.
pub fn kappa_q(theta0: &GouModel, theta_star: &GouModel) -> Result<f64> {
    check_pair(theta0, theta_star)?;
    Ok(theta0.a * (theta_star.mu[0] / theta_star.a - theta0.mu[0] / theta0.a))
}

/// `kappa_Gamma = || Sigma(theta0) (theta* - theta0) ||_2`.
pub fn kappa_gamma(theta0: &GouModel, theta_star: &GouModel) -> Result<f64> {
    check_pair(theta0, theta_star)?;
    let sigma = sigma_matrix(theta0)?;
    let diff = DVector::from_iterator(
        theta0.p() + 1,
        theta_star.theta().iter().zip(theta0.theta()).map(|(s, z)| s - z),
    );
    Ok((sigma.matrix() * diff).norm())
}
