//! Discretized regression `Y = Z theta + eps + r`, least-squares drift
//! estimation, realized quadratic variation, and the continuous-record MLE.
//!
//! For observation `i`:
//!
//! ```text
//! Y_i = (X_{t_i} - X_{t_{i-1}}) / sqrt(D)
//! Z_i = sqrt(D) (phi_1(t_{i-1}), ..., phi_p(t_{i-1}), -X_{t_{i-1}})
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, condition_symmetric, NormalEquations, MAX_CONDITION};
use crate::model::BasisSpec;
use crate::simulate::Trajectory;

/// Design row for the increment ending at index `i`; returns `Y_i` and
/// writes `Z_i` into `row` (length `p + 1`).
pub fn design_row(basis: &BasisSpec, delta: f64, i: usize, x_prev: f64, x: f64, row: &mut [f64]) -> f64 {
    let sd = delta.sqrt();
    let p = basis.dim();
    basis.eval_into((i - 1) as f64 * delta, &mut row[..p]);
    for v in &mut row[..p] {
        *v *= sd;
    }
    row[p] = -sd * x_prev;
    (x - x_prev) / sd
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedSample {
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub delta: f64,
    /// Length of the time window covered by the rows.
    pub t: f64,
    pub n: usize,
    pub from_index: usize,
}

pub fn build_design(
    traj: &Trajectory,
    basis: &BasisSpec,
    from_index: usize,
    to_index: usize,
) -> Result<DiscretizedSample> {
    traj.validate()?;
    basis.validate()?;
    if from_index < 1 || from_index > to_index || to_index > traj.steps() {
        return Err(Error::InvalidParameter(format!(
            "design range {from_index}..={to_index} must satisfy 1 <= from <= to <= {}",
            traj.steps()
        )));
    }
    let n = to_index - from_index + 1;
    let d = basis.dim() + 1;
    let mut z = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; d];
    for (r, i) in (from_index..=to_index).enumerate() {
        y[r] = design_row(basis, traj.delta, i, traj.x[i - 1], traj.x[i], &mut row);
        for (j, v) in row.iter().enumerate() {
            z[(r, j)] = *v;
        }
    }
    Ok(DiscretizedSample {
        y,
        z,
        delta: traj.delta,
        t: n as f64 * traj.delta,
        n,
        from_index,
    })
}

/// Historical window `1..=N`.
pub fn historical_design(traj: &Trajectory, basis: &BasisSpec) -> Result<DiscretizedSample> {
    build_design(traj, basis, 1, traj.n_historical)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: DVector<f64>,
    /// `Sigma_N = Z'Z / T`.
    pub sigma_n: DMatrix<f64>,
    /// Realized quadratic variation over the fitted rows.
    pub sigma2_hat: f64,
    pub n_used: usize,
    /// Condition number of `Z'Z`.
    pub condition: f64,
}

#[derive(Debug, Serialize)]
struct EstimationJson<'a> {
    theta_hat: &'a [f64],
    sigma2_hat: f64,
    n: usize,
    condition: f64,
}

impl EstimationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EstimationJson {
            theta_hat: self.theta_hat.as_slice(),
            sigma2_hat: self.sigma2_hat,
            n: self.n_used,
            condition: self.condition,
        })?)
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }
}

/// Gram accumulation of `sum_i Z_i Z_i'` in row order.
pub(crate) fn gram_of(sample: &DiscretizedSample) -> NormalEquations {
    let d = sample.z.ncols();
    let mut ne = NormalEquations::new(d);
    let mut row = vec![0.0; d];
    for r in 0..sample.n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = sample.z[(r, j)];
        }
        ne.push(&row, sample.y[r]);
    }
    ne
}

pub fn fit_theta(sample: &DiscretizedSample) -> Result<EstimationResult> {
    let (theta_hat, condition) = linalg::lstsq_qr(&sample.z, &sample.y, "estimate::fit_theta")?;
    let sigma_n = gram_of(sample).gram() / sample.t;
    let sigma2_hat = sample.y.norm_squared() / sample.n as f64;
    Ok(EstimationResult {
        theta_hat,
        sigma_n,
        sigma2_hat,
        n_used: sample.n,
        condition,
    })
}

/// `(1/n) sum (X_{t_i} - X_{t_{i-1}})^2 / (t_i - t_{i-1})` over `i = from..=to`.
pub fn realized_qv_sigma2(traj: &Trajectory, from_index: usize, to_index: usize) -> Result<f64> {
    if from_index < 1 || from_index > to_index || to_index > traj.steps() {
        return Err(Error::InvalidParameter(format!(
            "range {from_index}..={to_index} outside 1..={}",
            traj.steps()
        )));
    }
    let n = to_index - from_index + 1;
    let s: f64 = (from_index..=to_index)
        .map(|i| {
            let d = traj.x[i] - traj.x[i - 1];
            d * d / traj.delta
        })
        .sum();
    Ok(s / n as f64)
}

/// `Y - Z theta`.
pub fn residuals(sample: &DiscretizedSample, theta_hat: &DVector<f64>) -> DVector<f64> {
    &sample.y - &sample.z * theta_hat
}

/// Continuous-record maximum likelihood estimate `Q^{-1} R~` over `[0, T]`,
/// `T = N delta`. Time integrals use the trapezoid rule, stochastic
/// integrals left-point (Ito) sums.
pub fn mle_continuous(traj: &Trajectory, basis: &BasisSpec) -> Result<DVector<f64>> {
    traj.validate()?;
    basis.validate()?;
    let n = traj.n_historical;
    if n < 1 || n > traj.steps() {
        return Err(Error::InvalidParameter(format!(
            "historical window {n} must lie within the trajectory ({} steps)",
            traj.steps()
        )));
    }
    let p = basis.dim();
    let d = p + 1;
    let h = traj.delta;
    // g(t) = (phi(t), -X_t); Q = int g g' dt, R~ = int g dX.
    let mut g_prev = vec![0.0; d];
    let mut g = vec![0.0; d];
    let fill = |i: usize, out: &mut [f64]| {
        basis.eval_into(traj.time(i), &mut out[..p]);
        out[p] = -traj.x[i];
    };
    fill(0, &mut g_prev);
    let mut q = DMatrix::<f64>::zeros(d, d);
    let mut r = DVector::<f64>::zeros(d);
    for i in 1..=n {
        fill(i, &mut g);
        let dx = traj.x[i] - traj.x[i - 1];
        for a in 0..d {
            r[a] += g_prev[a] * dx;
            for b in 0..d {
                q[(a, b)] += 0.5 * h * (g_prev[a] * g_prev[b] + g[a] * g[b]);
            }
        }
        std::mem::swap(&mut g_prev, &mut g);
    }
    let condition = condition_symmetric(&q);
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned {
            op: "estimate::mle_continuous",
            condition,
        });
    }
    q.cholesky()
        .map(|ch| ch.solve(&r))
        .ok_or(Error::IllConditioned {
            op: "estimate::mle_continuous",
            condition,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GouModel;
    use crate::simulate::{simulate_trajectory, ChangePointScenario};

    fn scalar_basis() -> BasisSpec {
        BasisSpec::new(1, 0).unwrap()
    }

    #[test]
    fn constant_trajectory_design() {
        let tr = Trajectory::new(vec![2.5; 6], 0.25, 5).unwrap();
        let s = build_design(&tr, &scalar_basis(), 1, 5).unwrap();
        assert!(s.y.iter().all(|&v| v == 0.0));
        for r in 0..5 {
            assert_eq!(s.z[(r, 0)], 0.5);
            assert_eq!(s.z[(r, 1)], -0.5 * 2.5);
        }
        assert_eq!(realized_qv_sigma2(&tr, 1, 5).unwrap(), 0.0);
    }

    #[test]
    fn unit_step_design() {
        let tr = Trajectory::new(vec![0.0, 1.0], 1.0, 1).unwrap();
        let s = build_design(&tr, &scalar_basis(), 1, 1).unwrap();
        assert_eq!(s.y.as_slice(), &[1.0]);
        assert_eq!(s.z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn design_rejects_empty_range() {
        let tr = Trajectory::new(vec![0.0, 1.0, 2.0], 1.0, 2).unwrap();
        assert!(build_design(&tr, &scalar_basis(), 2, 1).is_err());
        assert!(build_design(&tr, &scalar_basis(), 0, 1).is_err());
        assert!(build_design(&tr, &scalar_basis(), 1, 3).is_err());
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let tr = Trajectory::new((0..40).map(|i| ((i * 37) % 13) as f64 * 0.3).collect(), 0.05, 39)
            .unwrap();
        let basis = BasisSpec::new(2, 1).unwrap();
        let mut s = historical_design(&tr, &basis).unwrap();
        let theta = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.7]);
        s.y = &s.z * &theta;
        let fit = fit_theta(&s).unwrap();
        assert!((fit.theta_hat - theta).amax() < 1e-10);
    }

    #[test]
    fn alternating_path_qv() {
        let sigma = 1.7;
        let delta: f64 = 0.01;
        let x: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { 0.0 } else { sigma * delta.sqrt() }).collect();
        let tr = Trajectory::new(x, delta, 20).unwrap();
        let qv = realized_qv_sigma2(&tr, 1, 20).unwrap();
        assert!((qv - sigma * sigma).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let s = DiscretizedSample {
            y: DVector::from_vec(vec![2.0]),
            z: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            delta: 1.0,
            t: 1.0,
            n: 1,
            from_index: 1,
        };
        assert_eq!(residuals(&s, &DVector::from_vec(vec![1.0, 5.0]))[0], 1.0);
        let s2 = DiscretizedSample {
            y: &s.z * DVector::from_vec(vec![2.0, 3.0]),
            ..s
        };
        assert_eq!(residuals(&s2, &DVector::from_vec(vec![2.0, 3.0]))[0], 0.0);
    }

    fn simulated(n: usize, seed: u64) -> Trajectory {
        let m = GouModel::cosine_pair([1.0, 2.0, 1.0], 3.0).unwrap();
        simulate_trajectory(&ChangePointScenario::no_change(m, 1.0), n, 20.0, seed).unwrap()
    }

    #[test]
    fn fit_invariants_on_simulated_path() {
        let tr = simulated(1000, 42);
        let basis = BasisSpec::constant_plus_cosine();
        let s = historical_design(&tr, &basis).unwrap();
        let fit = fit_theta(&s).unwrap();
        let zty = s.z.transpose() * &s.y;
        let resid = (s.z.transpose() * &s.z * &fit.theta_hat - &zty).norm() / zty.norm();
        assert!(resid < 1e-8);
        assert!((&fit.sigma_n - fit.sigma_n.transpose()).amax() == 0.0);
        assert!(fit.sigma_n.clone().symmetric_eigenvalues().min() >= 0.0);
        // Intercept column forces residuals to sum to zero.
        let e = residuals(&s, &fit.theta_hat);
        assert!(e.sum().abs() < 1e-9 * s.y.amax() * s.n as f64);
        assert!((fit.sigma2_hat - realized_qv_sigma2(&tr, 1, 1000).unwrap()).abs() < 1e-12 * fit.sigma2_hat);
        assert!(fit.to_json().unwrap().contains("\"condition\""));
    }

    #[test]
    fn sigma_n_first_column_is_row_sum() {
        let tr = simulated(500, 3);
        let s = historical_design(&tr, &BasisSpec::constant_plus_cosine()).unwrap();
        let fit = fit_theta(&s).unwrap();
        let sd = s.delta.sqrt();
        for j in 0..3 {
            let mut acc = 0.0;
            for r in 0..s.n {
                acc += s.z[(r, j)] * sd;
            }
            let direct = acc / s.t;
            let rel = (fit.sigma_n[(j, 0)] - direct).abs() / direct.abs().max(1e-300);
            assert!(rel <= 4.0 * f64::EPSILON, "column entry {j}: rel {rel}");
        }
    }

    #[test]
    fn scaling_equivariance() {
        let tr = simulated(800, 9);
        let basis = BasisSpec::constant_plus_cosine();
        let base = fit_theta(&historical_design(&tr, &basis).unwrap()).unwrap();
        let lambda = 3.5;
        let scaled = Trajectory::new(tr.x.iter().map(|v| v * lambda).collect(), tr.delta, tr.n_historical)
            .unwrap();
        let fit = fit_theta(&historical_design(&scaled, &basis).unwrap()).unwrap();
        for j in 0..2 {
            assert!((fit.theta_hat[j] - lambda * base.theta_hat[j]).abs() < 1e-9);
        }
        assert!((fit.theta_hat[2] - base.theta_hat[2]).abs() < 1e-10);
    }

    #[test]
    fn mle_rejects_zero_path() {
        let tr = Trajectory::new(vec![0.0; 101], 0.1, 100).unwrap();
        assert!(matches!(
            mle_continuous(&tr, &scalar_basis()),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn mle_close_to_regression_on_noiseless_path() {
        let m = GouModel::cosine_pair([1.0, 2.0, 1.0], 0.0).unwrap();
        let mut sc = ChangePointScenario::no_change(m, 1.0);
        sc.x0 = 3.0;
        let basis = BasisSpec::constant_plus_cosine();
        let mut prev_gap = f64::INFINITY;
        for n in [500usize, 2000] {
            let tr = simulate_trajectory(&sc, n, 20.0, 0).unwrap();
            let mle = mle_continuous(&tr, &basis).unwrap();
            let ls = fit_theta(&historical_design(&tr, &basis).unwrap()).unwrap();
            let gap = (&mle - &ls.theta_hat).amax();
            assert!(gap < 2.0 * tr.delta.sqrt(), "n={n} gap={gap}");
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }
}
