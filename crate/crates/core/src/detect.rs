//! Sequential change-point monitors.
//!
//! Both monitors fit `theta_N` on the historical window `1..=N` and then
//! consume one observation at a time (`K = 1, 2, ...`):
//!
//! - `Q`: cumulative sum of residuals `Q(N,K) = sum_{N<i<=N+K} (Y_i - Z_i' theta_N)`,
//!   alarm when `|Q(N,K)| >= c sigma sqrt(N) (1 + K/N) l_gamma(K/N)`.
//! - `Gamma`: `Gamma(N,K) = sqrt(T) Sigma_N^{1/2} (theta_{N+K} - theta_N)` with
//!   `theta_{N+K}` refitted on `1..=N+K`, alarm when
//!   `||Gamma(N,K)||_2 >= c sigma l_gamma(K/N)`.
//!
//! with `l_gamma(s) = (s / (1 + s))^gamma`. Under no change, `Gamma / sigma`
//! behaves like a standard `(p+1)`-dimensional Brownian motion at time
//! `s / (1 + s)`, which is why the boundary carries the diffusion scale.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{design_row, fit_theta, gram_of, historical_design};
use crate::linalg::NormalEquations;
pub use crate::linalg::matrix_sqrt_psd;
use crate::model::BasisSpec;
use crate::simulate::Trajectory;

/// `(s / (1 + s))^gamma`.
pub fn ell_gamma(s: f64, gamma: f64) -> f64 {
    (s / (1.0 + s)).powf(gamma)
}

/// `sqrt(N) (1 + K/N) l_gamma(K/N)`.
pub fn g1(n: usize, k: usize, gamma: f64) -> f64 {
    let s = k as f64 / n as f64;
    (n as f64).sqrt() * (1.0 + s) * ell_gamma(s, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Q,
    Gamma,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Q => "Q",
            DetectorKind::Gamma => "Gamma",
        }
    }

    /// Brownian dimension of the limiting functional.
    pub fn limit_dimension(self, basis: &BasisSpec) -> usize {
        match self {
            DetectorKind::Q => 1,
            DetectorKind::Gamma => basis.dim() + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    Known(f64),
    /// Realized quadratic variation over the historical window.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub gamma: f64,
    pub c: f64,
    pub alpha: f64,
    /// Monitoring horizon; `None` means `2N`.
    pub max_k: Option<usize>,
    pub sigma: SigmaSource,
}

impl DetectorConfig {
    pub fn new(gamma: f64, c: f64, alpha: f64) -> Self {
        Self {
            gamma,
            c,
            alpha,
            max_k: None,
            sigma: SigmaSource::Estimate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 0.5), got {}",
                self.gamma
            )));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "critical value must be positive, got {}",
                self.c
            )));
        }
        if let SigmaSource::Known(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter(format!("known sigma must be positive, got {s}")));
            }
        }
        if self.max_k == Some(0) {
            return Err(Error::InvalidParameter("max_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn horizon(&self, n: usize) -> usize {
        self.max_k.unwrap_or(2 * n)
    }
}

/// Outcome of one monitored observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub k: usize,
    pub statistic: f64,
    pub boundary: f64,
    /// True only on the observation that first crosses the boundary.
    pub alarm: bool,
}

#[derive(Debug, Clone)]
enum State {
    Q {
        theta: DVector<f64>,
        cusum: f64,
    },
    Gamma {
        theta_ref: DVector<f64>,
        sqrt_sigma_n: DMatrix<f64>,
        sqrt_t: f64,
        acc: NormalEquations,
    },
}

/// Streaming monitor. Single owner; push observations in time order.
#[derive(Debug, Clone)]
pub struct Monitor {
    kind: DetectorKind,
    basis: BasisSpec,
    delta: f64,
    n: usize,
    config: DetectorConfig,
    sigma_hat: f64,
    theta_hist: DVector<f64>,
    state: State,
    k: usize,
    last_x: f64,
    stopped_at: Option<usize>,
    row: Vec<f64>,
}

impl Monitor {
    /// Fit on `history = (X_0, ..., X_N)` sampled every `delta`.
    pub fn from_history(
        history: &[f64],
        delta: f64,
        basis: &BasisSpec,
        kind: DetectorKind,
        config: DetectorConfig,
    ) -> Result<Self> {
        config.validate()?;
        if history.len() < 2 {
            return Err(Error::InvalidParameter("history needs at least two observations".into()));
        }
        let n = history.len() - 1;
        let traj = Trajectory::new(history.to_vec(), delta, n)?;
        let sample = historical_design(&traj, basis)?;
        let fit = fit_theta(&sample)?;
        let sigma_hat = match config.sigma {
            SigmaSource::Known(s) => s,
            SigmaSource::Estimate => fit.sigma_hat(),
        };
        if !(sigma_hat > 0.0) {
            return Err(Error::InvalidParameter(
                "estimated sigma is zero; the historical window is constant".into(),
            ));
        }
        let state = match kind {
            DetectorKind::Q => State::Q {
                theta: fit.theta_hat.clone(),
                cusum: 0.0,
            },
            DetectorKind::Gamma => {
                let acc = gram_of(&sample);
                let theta_ref = acc.solve("detect::monitor_gamma")?;
                let sqrt_sigma_n = matrix_sqrt_psd(&(acc.gram() / sample.t))?;
                State::Gamma {
                    theta_ref,
                    sqrt_sigma_n,
                    sqrt_t: sample.t.sqrt(),
                    acc,
                }
            }
        };
        Ok(Self {
            kind,
            basis: *basis,
            delta,
            n,
            config,
            sigma_hat,
            theta_hist: fit.theta_hat,
            state,
            k: 0,
            last_x: history[n],
            stopped_at: None,
            row: vec![0.0; basis.dim() + 1],
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn n_historical(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon(self.n)
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    /// Least-squares fit on the historical window.
    pub fn historical_theta(&self) -> &DVector<f64> {
        &self.theta_hist
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    /// Signed `Q(N,K)`; `None` for the Gamma monitor.
    pub fn cusum(&self) -> Option<f64> {
        match &self.state {
            State::Q { cusum, .. } => Some(*cusum),
            State::Gamma { .. } => None,
        }
    }

    /// Current refitted `theta_{N+K}`; `None` for the Q monitor.
    pub fn current_theta(&self) -> Option<Result<DVector<f64>>> {
        match &self.state {
            State::Gamma { acc, .. } => Some(acc.solve("detect::monitor_gamma")),
            State::Q { .. } => None,
        }
    }

    pub fn boundary(&self, k: usize) -> f64 {
        let c = self.config.c * self.sigma_hat;
        match self.kind {
            DetectorKind::Q => c * g1(self.n, k, self.config.gamma),
            DetectorKind::Gamma => c * ell_gamma(k as f64 / self.n as f64, self.config.gamma),
        }
    }

    pub fn push(&mut self, x: f64) -> Result<Step> {
        self.k += 1;
        let i = self.n + self.k;
        let y = design_row(&self.basis, self.delta, i, self.last_x, x, &mut self.row);
        self.last_x = x;
        let statistic = match &mut self.state {
            State::Q { theta, cusum } => {
                let fitted: f64 = self.row.iter().zip(theta.iter()).map(|(z, t)| z * t).sum();
                *cusum += y - fitted;
                cusum.abs()
            }
            State::Gamma {
                theta_ref,
                sqrt_sigma_n,
                sqrt_t,
                acc,
            } => {
                acc.push(&self.row, y);
                let theta = acc.solve("detect::monitor_gamma")?;
                (&*sqrt_sigma_n * (theta - &*theta_ref)).norm() * *sqrt_t
            }
        };
        let boundary = self.boundary(self.k);
        let alarm = self.stopped_at.is_none() && self.k <= self.horizon() && statistic >= boundary;
        if alarm {
            self.stopped_at = Some(self.k);
        }
        Ok(Step {
            k: self.k,
            statistic,
            boundary,
            alarm,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRun {
    pub kind: DetectorKind,
    pub statistic: Vec<f64>,
    pub boundary: Vec<f64>,
    pub stopped_at: Option<usize>,
    pub config: DetectorConfig,
}

impl DetectorRun {
    /// `K,statistic,boundary,stopped`; `stopped` is 1 from the stopping index on.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["K", "statistic", "boundary", "stopped"])?;
        for (idx, (s, b)) in self.statistic.iter().zip(&self.boundary).enumerate() {
            let k = idx + 1;
            let stopped = self.stopped_at.is_some_and(|t| k >= t);
            out.write_record([
                k.to_string(),
                s.to_string(),
                b.to_string(),
                u8::from(stopped).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Run a monitor over `traj` for `K = 1..=min(horizon, available)`.
pub fn run_monitor(
    traj: &Trajectory,
    basis: &BasisSpec,
    kind: DetectorKind,
    config: &DetectorConfig,
) -> Result<DetectorRun> {
    traj.validate()?;
    let n = traj.n_historical;
    if n < 1 || traj.steps() < n + 1 {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {} steps; need more than the historical window N={n}",
            traj.steps()
        )));
    }
    let mut mon = Monitor::from_history(&traj.x[..=n], traj.delta, basis, kind, config.clone())?;
    let last = (n + mon.horizon()).min(traj.steps());
    let mut statistic = Vec::with_capacity(last - n);
    let mut boundary = Vec::with_capacity(last - n);
    for &x in &traj.x[n + 1..=last] {
        let s = mon.push(x)?;
        statistic.push(s.statistic);
        boundary.push(s.boundary);
    }
    Ok(DetectorRun {
        kind,
        statistic,
        boundary,
        stopped_at: mon.stopped_at(),
        config: config.clone(),
    })
}

pub fn monitor_q(traj: &Trajectory, basis: &BasisSpec, config: &DetectorConfig) -> Result<DetectorRun> {
    run_monitor(traj, basis, DetectorKind::Q, config)
}

pub fn monitor_gamma(traj: &Trajectory, basis: &BasisSpec, config: &DetectorConfig) -> Result<DetectorRun> {
    run_monitor(traj, basis, DetectorKind::Gamma, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{build_design, residuals};
    use crate::model::GouModel;
    use crate::simulate::{simulate_trajectory, ChangePointScenario};
    use proptest::prelude::*;

    fn trajectory(theta_star: [f64; 3], t_star: f64, n: usize, seed: u64) -> Trajectory {
        let sc = ChangePointScenario {
            theta0: GouModel::cosine_pair([1.0, 2.0, 1.0], 3.0).unwrap(),
            theta_star: GouModel::cosine_pair(theta_star, 3.0).unwrap(),
            t_star,
            horizon_multiple: 3.0,
            x0: 0.0,
        };
        simulate_trajectory(&sc, n, 20.0, seed).unwrap()
    }

    #[test]
    fn ell_examples() {
        assert_eq!(ell_gamma(3.7, 0.0), 1.0);
        assert_eq!(ell_gamma(0.0, 0.0), 1.0);
        assert_eq!(ell_gamma(0.0, 0.3), 0.0);
        assert!((ell_gamma(1.0, 0.1) - 0.933_032_991_536_807_4).abs() < 1e-14);
    }

    #[test]
    fn g1_examples() {
        for n in [4usize, 100, 1000] {
            assert!((g1(n, n, 0.0) - 2.0 * (n as f64).sqrt()).abs() < 1e-12);
        }
        assert!((g1(100, 100, 0.1) - 20.0 * 2f64.powf(-0.1)).abs() < 1e-12);
        assert!((g1(100, 100, 0.1) - 18.661).abs() < 1e-3);
        // gamma = 0: g1 = (N + K) / sqrt(N)
        for k in 1..50 {
            assert!((g1(25, k, 0.0) - (25 + k) as f64 / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(0.5, 2.0, 0.05).validate().is_err());
        assert!(DetectorConfig::new(-0.1, 2.0, 0.05).validate().is_err());
        assert!(DetectorConfig::new(0.1, 0.0, 0.05).validate().is_err());
        assert!(DetectorConfig::new(0.1, 2.0, 0.05).validate().is_ok());
        assert_eq!(DetectorConfig::new(0.1, 2.0, 0.05).horizon(300), 600);
    }

    #[test]
    fn q_path_telescopes_to_residuals() {
        let tr = trajectory([1.0, 2.0, 1.0], 0.0, 400, 1);
        let basis = BasisSpec::constant_plus_cosine();
        let cfg = DetectorConfig::new(0.1, 2.2933, 0.05);
        let mut mon = Monitor::from_history(&tr.x[..=400], tr.delta, &basis, DetectorKind::Q, cfg).unwrap();
        let post = build_design(&tr, &basis, 401, 800).unwrap();
        let e = residuals(&post, mon.historical_theta());
        let mut prev = 0.0;
        for k in 1..=400 {
            mon.push(tr.x[400 + k]).unwrap();
            let q = mon.cusum().unwrap();
            assert!(((q - prev) - e[k - 1]).abs() < 1e-10);
            prev = q;
        }
    }

    #[test]
    fn gamma_accumulators_reproduce_historical_fit() {
        let tr = trajectory([1.0, 2.0, 1.0], 0.0, 500, 2);
        let basis = BasisSpec::constant_plus_cosine();
        let cfg = DetectorConfig::new(0.1, 3.0502, 0.05);
        let mon = Monitor::from_history(&tr.x[..=500], tr.delta, &basis, DetectorKind::Gamma, cfg).unwrap();
        let at_zero = mon.current_theta().unwrap().unwrap();
        assert!((at_zero - mon.historical_theta()).amax() < 1e-10);
    }

    #[test]
    fn gamma_incremental_matches_batch_refit() {
        let tr = trajectory([2.0, 4.0, 2.0], 0.2, 300, 3);
        let basis = BasisSpec::constant_plus_cosine();
        let cfg = DetectorConfig::new(0.1, 3.0502, 0.05);
        let mut mon = Monitor::from_history(&tr.x[..=300], tr.delta, &basis, DetectorKind::Gamma, cfg).unwrap();
        for k in 1..=600 {
            mon.push(tr.x[300 + k]).unwrap();
            if k % 97 == 0 || k == 600 {
                let inc = mon.current_theta().unwrap().unwrap();
                let batch = fit_theta(&build_design(&tr, &basis, 1, 300 + k).unwrap()).unwrap();
                assert!((inc - batch.theta_hat).norm() < 1e-8, "k={k}");
            }
        }
    }

    #[test]
    fn stopping_time_has_no_lookahead() {
        let tr = trajectory([5.0, 3.0, 1.0], 0.0, 300, 4);
        let basis = BasisSpec::constant_plus_cosine();
        for kind in [DetectorKind::Q, DetectorKind::Gamma] {
            let cfg = DetectorConfig::new(0.1, if kind == DetectorKind::Q { 2.2933 } else { 3.0502 }, 0.05);
            let full = run_monitor(&tr, &basis, kind, &cfg).unwrap();
            let tau = full.stopped_at.expect("large change is detected");
            for extra in [0usize, 1, 17] {
                let mut prefix = tr.clone();
                prefix.x.truncate(300 + tau + extra + 1);
                let run = run_monitor(&prefix, &basis, kind, &cfg).unwrap();
                assert_eq!(run.stopped_at, Some(tau));
            }
            // First crossing.
            for k in 1..tau {
                assert!(full.statistic[k - 1] < full.boundary[k - 1]);
            }
            assert!(full.statistic[tau - 1] >= full.boundary[tau - 1]);
        }
    }

    #[test]
    fn stopped_at_is_frozen_and_path_continues() {
        let tr = trajectory([5.0, 3.0, 1.0], 0.0, 200, 6);
        let basis = BasisSpec::constant_plus_cosine();
        let cfg = DetectorConfig::new(0.1, 2.2933, 0.05);
        let mut mon = Monitor::from_history(&tr.x[..=200], tr.delta, &basis, DetectorKind::Q, cfg).unwrap();
        let mut alarms = 0;
        for &x in &tr.x[201..] {
            alarms += usize::from(mon.push(x).unwrap().alarm);
        }
        assert_eq!(alarms, 1);
        assert_eq!(mon.k(), 400);
    }

    #[test]
    fn run_csv_layout() {
        let tr = trajectory([1.0, 2.0, 1.0], 0.0, 100, 7);
        let run = monitor_q(&tr, &BasisSpec::constant_plus_cosine(), &DetectorConfig::new(0.1, 2.2933, 0.05))
            .unwrap();
        assert_eq!(run.statistic.len(), 200);
        assert_eq!(run.boundary.len(), 200);
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("K,statistic,boundary,stopped\n1,"));
        assert_eq!(text.lines().count(), 201);
    }

    #[test]
    fn monitor_needs_post_history_data() {
        let tr = trajectory([1.0, 2.0, 1.0], 0.0, 100, 8);
        let mut short = tr.clone();
        short.x.truncate(101);
        let cfg = DetectorConfig::new(0.1, 2.2933, 0.05);
        assert!(monitor_q(&short, &BasisSpec::constant_plus_cosine(), &cfg).is_err());
    }

    #[test]
    fn sqrt_of_paper_sigma() {
        let s = crate::model::sigma_matrix(&GouModel::cosine_pair([1.0, 2.0, 1.0], 3.0).unwrap()).unwrap();
        let r = matrix_sqrt_psd(s.matrix()).unwrap();
        assert!((&r * &r - s.matrix()).amax() < 1e-10);
    }

    proptest! {
        #[test]
        fn ell_monotone(s1 in 0.0f64..50.0, ds in 0.0f64..50.0, gamma in 0.0f64..0.5) {
            let a = ell_gamma(s1, gamma);
            let b = ell_gamma(s1 + ds, gamma);
            prop_assert!(b >= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn g1_strictly_increasing(n in 1usize..5000, k in 1usize..10000, gamma in 0.0f64..0.4999) {
            prop_assert!(g1(n, k + 1, gamma) > g1(n, k, gamma));
        }
    }
}
