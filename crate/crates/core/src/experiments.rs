//! Monte Carlo experiment grid: detection times and power curves.
//!
//! Each `(theta_star, t_star, N, rep)` cell simulates one exact trajectory,
//! fits on the historical window and runs both monitors on the same path.
//! Detection times are reported as `tau_rel = K / N` where `K` is the number
//! of monitored observations at the alarm; undetected runs get `cap_multiple`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critvals::CriticalValueTable;
use crate::detect::{run_monitor, DetectorConfig, DetectorKind, SigmaSource};
use crate::error::{Error, Result};
use crate::model::{BasisSpec, GouModel};
use crate::rng::{stream_key, substream};
use crate::simulate::{simulate_with_rng, ChangePointScenario};

fn default_horizon_multiple() -> f64 {
    3.0
}

fn default_cap_multiple() -> f64 {
    2.0
}

fn default_basis() -> BasisSpec {
    BasisSpec::constant_plus_cosine()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `(mu, a)` before the change.
    pub theta0: Vec<f64>,
    pub theta_star: Vec<Vec<f64>>,
    pub t_star: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "T")]
    pub t: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_horizon_multiple")]
    pub horizon_multiple: f64,
    /// Monitoring horizon as a multiple of `N`.
    #[serde(default = "default_cap_multiple")]
    pub cap_multiple: f64,
    #[serde(default = "default_basis")]
    pub basis: BasisSpec,
    #[serde(default)]
    pub boundary_sigma: BoundarySigma,
}

/// Diffusion scale used in the detector boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySigma {
    /// Realized quadratic variation of the historical window.
    #[default]
    Estimate,
    /// The simulation's true sigma.
    True,
    /// A fixed value; `Fixed(1.0)` drops the scale altogether.
    Fixed(f64),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.theta_star.is_empty() || self.t_star.is_empty() || self.n.is_empty() {
            return bad("theta_star, t_star and N lists must be nonempty".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.cap_multiple > 0.0) {
            return bad(format!("cap_multiple must be positive, got {}", self.cap_multiple));
        }
        if self.horizon_multiple < 1.0 + self.cap_multiple {
            return bad(format!(
                "horizon_multiple {} leaves fewer than cap_multiple x N = {} monitored steps",
                self.horizon_multiple, self.cap_multiple
            ));
        }
        if let Some(n) = self.n.iter().find(|&&n| n < 10) {
            return bad(format!("N must be at least 10, got {n}"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        for sc in self.scenarios()? {
            sc.validate()?;
        }
        Ok(())
    }

    pub fn theta0_model(&self) -> Result<GouModel> {
        GouModel::from_theta(&self.theta0, self.sigma, self.basis)
    }

    /// Scenarios in `theta_star`-major, `t_star`-minor order.
    pub fn scenarios(&self) -> Result<Vec<ChangePointScenario>> {
        let theta0 = self.theta0_model()?;
        let mut out = Vec::new();
        for ts in &self.theta_star {
            let star = GouModel::from_theta(ts, self.sigma, self.basis)?;
            for &t_star in &self.t_star {
                out.push(ChangePointScenario {
                    theta0: theta0.clone(),
                    theta_star: star.clone(),
                    t_star,
                    horizon_multiple: self.horizon_multiple,
                    x0: 0.0,
                });
            }
        }
        Ok(out)
    }

    pub fn max_k(&self, n: usize) -> usize {
        (self.cap_multiple * n as f64).round() as usize
    }

    /// Detector configurations with critical values from `table`.
    pub fn detector_configs(&self, table: &CriticalValueTable, n: usize) -> Result<[(DetectorKind, DetectorConfig); 2]> {
        let sigma = match self.boundary_sigma {
            BoundarySigma::Estimate => SigmaSource::Estimate,
            BoundarySigma::True => SigmaSource::Known(self.sigma),
            BoundarySigma::Fixed(s) => SigmaSource::Known(s),
        };
        let make = |kind: DetectorKind| -> Result<(DetectorKind, DetectorConfig)> {
            let c = table.lookup(kind.limit_dimension(&self.basis), self.gamma, self.alpha)?;
            Ok((
                kind,
                DetectorConfig {
                    gamma: self.gamma,
                    c,
                    alpha: self.alpha,
                    max_k: Some(self.max_k(n)),
                    sigma,
                },
            ))
        };
        Ok([make(DetectorKind::Q)?, make(DetectorKind::Gamma)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: usize,
    /// Post-change `theta`, entries separated by `;`.
    pub theta_star: String,
    pub t_star: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub rep: usize,
    pub detector: String,
    pub tau_rel: f64,
}

fn format_theta(theta: &[f64]) -> String {
    theta.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Run every cell of the grid. Rows are ordered by scenario, `N`, replication
/// and detector (`Q` first), independent of the thread count.
pub fn run_grid(config: &ExperimentConfig, table: &CriticalValueTable) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let scenarios = config.scenarios()?;
    let mut cells = Vec::new();
    for (s, sc) in scenarios.iter().enumerate() {
        for &n in &config.n {
            let detectors = config.detector_configs(table, n)?;
            for rep in 0..config.replications {
                cells.push((s, sc, n, rep, detectors.clone()));
            }
        }
    }
    log::info!("running {} experiment cells", cells.len());
    let per_cell: Vec<Vec<ResultRow>> = cells
        .par_iter()
        .map(|(s, sc, n, rep, detectors)| -> Result<Vec<ResultRow>> {
            let mut rng = substream(config.seed, stream_key(&[*s as u64, *n as u64, *rep as u64]));
            let traj = simulate_with_rng(sc, *n, config.t, &mut rng)?;
            let cap = config.max_k(*n) as f64 / *n as f64;
            detectors
                .iter()
                .map(|(kind, cfg)| {
                    let run = run_monitor(&traj, &config.basis, *kind, cfg)?;
                    Ok(ResultRow {
                        scenario: *s,
                        theta_star: format_theta(&sc.theta_star.theta()),
                        t_star: sc.t_star,
                        n: *n,
                        rep: *rep,
                        detector: kind.as_str().to_string(),
                        tau_rel: run.stopped_at.map_or(cap, |k| k as f64 / *n as f64),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Number of power-curve points, `j = 0..POWER_POINTS`.
pub const POWER_POINTS: usize = 20;

/// `Pow(j/10) = (1/R) #{tau_rel <= j/10}`, `j = 0..=19`, over rows sharing `N`.
pub fn power_curve(rows: &[ResultRow]) -> Result<Vec<(usize, f64)>> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidParameter("no result rows".into()));
    };
    if rows.iter().any(|r| r.n != first.n) {
        return Err(Error::InvalidParameter("power curve rows must share N".into()));
    }
    let total = rows.len() as f64;
    Ok((0..POWER_POINTS)
        .map(|j| {
            let s = j as f64 / 10.0;
            // Small tolerance so K/N = j/10 exactly is not lost to rounding.
            let hits = rows.iter().filter(|r| r.tau_rel <= s + 1e-12).count();
            (j, hits as f64 / total)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub detector: String,
    pub j: usize,
    pub power: f64,
}

/// Power curves for every `(scenario, N, detector)` group.
pub fn power_table(rows: &[ResultRow]) -> Result<Vec<PowerRow>> {
    let mut groups: BTreeMap<(usize, usize, String), Vec<ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario, r.n, r.detector.clone()))
            .or_default()
            .push(r.clone());
    }
    let mut out = Vec::new();
    for ((scenario, n, detector), g) in groups {
        for (j, power) in power_curve(&g)? {
            out.push(PowerRow {
                scenario,
                n,
                detector: detector.clone(),
                j,
                power,
            });
        }
    }
    Ok(out)
}

pub fn write_power<W: Write>(rows: &[PowerRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Fraction of rows whose detector alarmed strictly before the cap.
pub fn detection_frequency(rows: &[ResultRow], cap: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.tau_rel < cap).count() as f64 / rows.len() as f64
}
