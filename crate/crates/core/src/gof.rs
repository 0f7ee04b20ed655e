//! Goodness-of-fit tests on standardized regression residuals.
//!
//! Residuals are mapped through `u = Phi(e / sigma_hat)` and compared with the
//! uniform law by the Kolmogorov-Smirnov statistic
//! `T_N = sqrt(N) max_i max(|u_(i) - i/N|, |u_(i) - (i-1)/N|)` and the
//! Cramer-von Mises statistic `V_N = 1/(12N) + sum_i (u_(i) - (i - 1/2)/N)^2`.
//! Because the location and scale are estimated, the null laws are those of
//! the Lilliefors-type statistics, tabulated here by simulation.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_theta, historical_design, realized_qv_sigma2, residuals};
use crate::model::BasisSpec;
use crate::normal::std_normal_cdf;
use crate::rng;
use crate::simulate::Trajectory;

/// Quantile levels used by the tabulation routines unless overridden.
pub const DEFAULT_LEVELS: [f64; 4] = [0.90, 0.95, 0.975, 0.99];

const BUNDLED_TABLE: &str = include_str!("../data/gof_quantiles.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub ks: f64,
    pub cvm: f64,
    pub n: usize,
    pub pvalue_ks: f64,
    pub pvalue_cvm: f64,
}

/// Sorted `Phi(residual / sigma_hat)`.
pub fn pit_values(residuals: &[f64], sigma_hat: f64) -> Result<Vec<f64>> {
    if !(sigma_hat > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_hat must be positive, got {sigma_hat}"
        )));
    }
    let mut u: Vec<f64> = residuals.iter().map(|e| std_normal_cdf(e / sigma_hat)).collect();
    u.sort_by(f64::total_cmp);
    Ok(u)
}

fn check_sorted(u: &[f64], op: &'static str) -> Result<()> {
    if u.is_empty() {
        return Err(Error::InvalidParameter(format!("{op}: empty sample")));
    }
    if u.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Unsorted(op));
    }
    Ok(())
}

pub fn ks_statistic(u_sorted: &[f64]) -> Result<f64> {
    check_sorted(u_sorted, "gof::ks_statistic")?;
    Ok(ks_unchecked(u_sorted))
}

fn ks_unchecked(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let d = u.iter().enumerate().fold(0.0f64, |acc, (i, &v)| {
        let hi = (i + 1) as f64 / n;
        let lo = i as f64 / n;
        acc.max((v - hi).abs()).max((v - lo).abs())
    });
    n.sqrt() * d
}

pub fn cvm_statistic(u_sorted: &[f64]) -> Result<f64> {
    check_sorted(u_sorted, "gof::cvm_statistic")?;
    Ok(cvm_unchecked(u_sorted))
}

fn cvm_unchecked(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let s: f64 = u
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = v - (i as f64 + 0.5) / n;
            d * d
        })
        .sum();
    1.0 / (12.0 * n) + s
}

/// One row of a quantile table: `level` is the probability (e.g. 0.95).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofQuantileRow {
    pub n: usize,
    pub alpha: f64,
    pub ks: f64,
    pub cvm: f64,
}

/// How the simulated scale `s_N` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleEstimator {
    /// `s_N^2 = sum eps_i^2 / (N - 1)`.
    #[default]
    Uncentered,
    /// `s_N^2 = sum (eps_i - m_N)^2 / (N - 1)`.
    Centered,
}

/// Type-1 empirical quantile: order statistic at `ceil(level * B)`.
pub(crate) fn type1_quantile(sorted: &[f64], level: f64) -> f64 {
    let b = sorted.len();
    let idx = ((level * b as f64).ceil() as usize).clamp(1, b);
    sorted[idx - 1]
}

/// Null statistics `(ks, cvm)` for `reps` samples of size `n`.
pub fn simulate_gof_null(n: usize, reps: usize, seed: u64, scale: ScaleEstimator) -> Vec<(f64, f64)> {
    (0..reps)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(eps, u), rep| {
                let mut r = rng::substream(seed, rng::stream_key(&[n as u64, rep as u64]));
                for e in eps.iter_mut() {
                    *e = r.sample(StandardNormal);
                }
                let m = eps.iter().sum::<f64>() / n as f64;
                let ss: f64 = match scale {
                    ScaleEstimator::Uncentered => eps.iter().map(|e| e * e).sum(),
                    ScaleEstimator::Centered => eps.iter().map(|e| (e - m) * (e - m)).sum(),
                };
                let s = (ss / (n as f64 - 1.0)).sqrt();
                for (ui, e) in u.iter_mut().zip(eps.iter()) {
                    *ui = std_normal_cdf((e - m) / s);
                }
                u.sort_by(f64::total_cmp);
                (ks_unchecked(u), cvm_unchecked(u))
            },
        )
        .collect()
}

pub fn tabulate_gof_quantiles(
    n: usize,
    reps: usize,
    seed: u64,
    levels: &[f64],
    scale: ScaleEstimator,
) -> Result<Vec<GofQuantileRow>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("sample size must be at least 2, got {n}")));
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("need at least one replication".into()));
    }
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidParameter("quantile levels must lie in (0, 1)".into()));
    }
    let sims = simulate_gof_null(n, reps, seed, scale);
    let mut ks: Vec<f64> = sims.iter().map(|s| s.0).collect();
    let mut cvm: Vec<f64> = sims.iter().map(|s| s.1).collect();
    ks.sort_by(f64::total_cmp);
    cvm.sort_by(f64::total_cmp);
    Ok(levels
        .iter()
        .map(|&alpha| GofQuantileRow {
            n,
            alpha,
            ks: type1_quantile(&ks, alpha),
            cvm: type1_quantile(&cvm, alpha),
        })
        .collect())
}

pub fn write_quantile_csv<W: Write>(rows: &[GofQuantileRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Quantile table used to turn statistics into p-values.
#[derive(Debug, Clone)]
pub struct GofTable {
    rows: Vec<GofQuantileRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GofStatistic {
    Ks,
    Cvm,
}

impl GofTable {
    pub fn bundled() -> Self {
        Self::read_csv(BUNDLED_TABLE.as_bytes()).expect("bundled goodness-of-fit table is well formed")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        Self::from_rows(rows)
    }

    pub fn from_rows(mut rows: Vec<GofQuantileRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Format("empty goodness-of-fit table".into()));
        }
        rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.alpha.total_cmp(&b.alpha)));
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[GofQuantileRow] {
        &self.rows
    }

    /// Tabulated sample sizes.
    pub fn sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        v.dedup();
        v
    }

    fn nearest_n(&self, n: usize) -> usize {
        self.sizes()
            .into_iter()
            .min_by_key(|&m| m.abs_diff(n))
            .expect("table is nonempty")
    }

    /// Upper-tail p-value, linear in the level between tabulated quantiles.
    /// Uses the tabulated size nearest to `n`; clamped to the table's range
    /// at the upper end and anchored at the statistic's minimum at the lower.
    pub fn pvalue(&self, stat: GofStatistic, value: f64, n: usize) -> f64 {
        let m = self.nearest_n(n);
        let lower = match stat {
            GofStatistic::Ks => 0.0,
            GofStatistic::Cvm => 1.0 / (12.0 * m as f64),
        };
        let mut pts: Vec<(f64, f64)> = vec![(lower, 0.0)];
        pts.extend(self.rows.iter().filter(|r| r.n == m).map(|r| {
            let q = match stat {
                GofStatistic::Ks => r.ks,
                GofStatistic::Cvm => r.cvm,
            };
            (q, r.alpha)
        }));
        let (q_last, level_last) = *pts.last().unwrap();
        let cdf = if value >= q_last {
            level_last
        } else if value <= lower {
            0.0
        } else {
            let k = pts.partition_point(|&(q, _)| q <= value);
            let (x0, y0) = pts[k - 1];
            let (x1, y1) = pts[k];
            if x1 > x0 {
                y0 + (y1 - y0) * (value - x0) / (x1 - x0)
            } else {
                y1
            }
        };
        (1.0 - cdf).clamp(0.0, 1.0)
    }
}

/// Statistics and p-values for already standardized PIT values.
pub fn gof_report(u_sorted: &[f64], table: &GofTable) -> Result<GofReport> {
    let ks = ks_statistic(u_sorted)?;
    let cvm = cvm_statistic(u_sorted)?;
    let n = u_sorted.len();
    Ok(GofReport {
        ks,
        cvm,
        n,
        pvalue_ks: table.pvalue(GofStatistic::Ks, ks, n),
        pvalue_cvm: table.pvalue(GofStatistic::Cvm, cvm, n),
    })
}

/// Fit on the historical window, standardize residuals by the realized
/// quadratic variation, and test.
pub fn gof_test_with_table(traj: &Trajectory, basis: &BasisSpec, table: &GofTable) -> Result<GofReport> {
    let sample = historical_design(traj, basis)?;
    let fit = fit_theta(&sample)?;
    let e = residuals(&sample, &fit.theta_hat);
    let sigma2 = realized_qv_sigma2(traj, 1, traj.n_historical)?;
    let u = pit_values(e.as_slice(), sigma2.sqrt())?;
    gof_report(&u, table)
}

pub fn gof_test(traj: &Trajectory, basis: &BasisSpec) -> Result<GofReport> {
    gof_test_with_table(traj, basis, &GofTable::bundled())
}
