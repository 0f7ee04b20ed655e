//! Critical values of `sup_{0<t<=1} ||B_k(t)|| / t^gamma` for a standard
//! `k`-dimensional Brownian motion.
//!
//! Paths are simulated on the grid `t_j = j/m` from `N(0, 1/m)` increments and
//! the supremum is taken over `j = 1..=m`. All `gamma` values of a tabulation
//! share the same paths.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gof::type1_quantile;
use crate::normal::std_normal_cdf;
use crate::rng::{stream_key, substream, SubRng};

/// Default table with `k = 1..=5`, `gamma in {0, .1, .2, .3, .4, .49}` and
/// `alpha in {.10, .05, .025, .01}`.
pub const BUNDLED_TABLE: &str = include_str!("../data/critvals_default.csv");

/// Environment variable naming a CSV table that replaces the bundled one.
pub const TABLE_ENV: &str = "GOU_CRITVAL_TABLE";

pub const DEFAULT_GAMMAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.49];
pub const DEFAULT_ALPHAS: [f64; 4] = [0.10, 0.05, 0.025, 0.01];

const KEY_TOL: f64 = 1e-9;

/// `t_j^{-2 gamma}` for `j = 1..=m`, one row per gamma.
fn squared_weights(gammas: &[f64], m: usize) -> Vec<Vec<f64>> {
    gammas
        .iter()
        .map(|&g| (1..=m).map(|j| (j as f64 / m as f64).powf(-2.0 * g)).collect())
        .collect()
}

fn check_inputs(k: usize, gammas: &[f64], m: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("dimension k must be at least 1".into()));
    }
    if m < 100 {
        return Err(Error::InvalidParameter(format!("grid needs at least 100 points, got {m}")));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..0.5).contains(*g)) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 0.5), got {g}")));
    }
    Ok(())
}

/// Supremum over a path built from the given increments
/// (`increments[j*k + d]` is coordinate `d` of step `j+1`, already scaled).
fn sup_from_increments<I>(k: usize, increments: I, weights: &[Vec<f64>], pos: &mut [f64], out: &mut [f64])
where
    I: Iterator<Item = f64>,
{
    pos.iter_mut().for_each(|p| *p = 0.0);
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut inc = increments;
    let m = weights.first().map_or(0, Vec::len);
    for j in 0..m {
        let mut r2 = 0.0;
        for p in pos.iter_mut().take(k) {
            *p += inc.next().unwrap_or(0.0);
            r2 += *p * *p;
        }
        for (o, w) in out.iter_mut().zip(weights) {
            let v = r2 * w[j];
            if v > *o {
                *o = v;
            }
        }
    }
    out.iter_mut().for_each(|o| *o = o.sqrt());
}

/// One draw of the supremum statistic.
pub fn sup_stat_sample(k: usize, gamma: f64, m: usize, rng: &mut SubRng) -> Result<f64> {
    check_inputs(k, &[gamma], m)?;
    let weights = squared_weights(&[gamma], m);
    let mut pos = vec![0.0; k];
    let mut out = [0.0];
    let scale = (1.0 / m as f64).sqrt();
    let incs = std::iter::repeat_with(|| scale * rng.sample::<f64, _>(StandardNormal));
    sup_from_increments(k, incs, &weights, &mut pos, &mut out);
    Ok(out[0])
}

/// Supremum statistic of the path with the given increments, `m = len / k`.
pub fn sup_stat_of_increments(k: usize, gamma: f64, increments: &[f64]) -> Result<f64> {
    let m = increments.len() / k.max(1);
    check_inputs(k, &[gamma], m)?;
    let weights = squared_weights(&[gamma], m);
    let mut pos = vec![0.0; k];
    let mut out = [0.0];
    sup_from_increments(k, increments.iter().copied(), &weights, &mut pos, &mut out);
    Ok(out[0])
}

/// `reps` draws per gamma, common paths across gammas. Result is indexed
/// `[gamma][rep]`. Replication `r` uses substream `(k, r)` of `seed`.
pub fn simulate_sup_stats(k: usize, gammas: &[f64], reps: usize, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_inputs(k, gammas, m)?;
    let weights = squared_weights(gammas, m);
    let scale = (1.0 / m as f64).sqrt();
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map_init(
            || (vec![0.0; k], vec![0.0; gammas.len()]),
            |(pos, out), r| {
                let mut rng = substream(seed, stream_key(&[k as u64, r as u64]));
                let incs = std::iter::repeat_with(|| scale * rng.sample::<f64, _>(StandardNormal));
                sup_from_increments(k, incs, &weights, pos, out);
                out.clone()
            },
        )
        .collect();
    Ok((0..gammas.len())
        .map(|g| per_rep.iter().map(|v| v[g]).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueRow {
    pub k: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub c: f64,
    #[serde(rename = "B")]
    pub reps: Option<usize>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
}

/// Monte Carlo `(1 - alpha)` quantiles via the order statistic at `ceil((1-alpha) B)`.
pub fn tabulate(
    ks: &[usize],
    gammas: &[f64],
    alphas: &[f64],
    reps: usize,
    m: usize,
    seed: u64,
) -> Result<CriticalValueTable> {
    if reps < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 replications, got {reps}")));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {a}")));
    }
    let mut rows = Vec::new();
    for &k in ks {
        let samples = simulate_sup_stats(k, gammas, reps, m, seed)?;
        for (g, mut s) in gammas.iter().zip(samples) {
            s.sort_by(f64::total_cmp);
            for &alpha in alphas {
                rows.push(CriticalValueRow {
                    k,
                    gamma: *g,
                    alpha,
                    c: type1_quantile(&s, 1.0 - alpha),
                    reps: Some(reps),
                    grid: Some(m),
                    seed: Some(seed),
                });
            }
        }
    }
    Ok(CriticalValueTable { rows })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticalValueTable {
    rows: Vec<CriticalValueRow>,
}

impl CriticalValueTable {
    pub fn from_rows(rows: Vec<CriticalValueRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[CriticalValueRow] {
        &self.rows
    }

    pub fn bundled() -> Self {
        Self::read_csv(BUNDLED_TABLE.as_bytes()).expect("bundled critical-value table is well formed")
    }

    /// The table named by `GOU_CRITVAL_TABLE`, or the bundled one.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(TABLE_ENV) {
            Some(path) => Self::read_path(Path::new(&path)),
            None => Ok(Self::bundled()),
        }
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<CriticalValueRow>, _>>()?;
        for row in &rows {
            if row.k == 0 || !(row.c > 0.0) || !(row.alpha > 0.0 && row.alpha < 1.0) {
                return Err(Error::Format(format!("bad critical-value row {row:?}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Exact `(k, gamma, alpha)` entry, or linear interpolation in gamma
    /// between the two nearest tabulated nodes. `k` and `alpha` must match.
    pub fn lookup(&self, k: usize, gamma: f64, alpha: f64) -> Result<f64> {
        let missing = |domain: String| Error::MissingCriticalValue { k, gamma, alpha, domain };
        let same_k: Vec<&CriticalValueRow> = self.rows.iter().filter(|r| r.k == k).collect();
        if same_k.is_empty() {
            let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
            ks.sort_unstable();
            ks.dedup();
            return Err(missing(format!("tabulated dimensions are {ks:?}")));
        }
        let mut nodes: Vec<(f64, f64)> = same_k
            .iter()
            .filter(|r| (r.alpha - alpha).abs() < KEY_TOL)
            .map(|r| (r.gamma, r.c))
            .collect();
        if nodes.is_empty() {
            let mut alphas: Vec<f64> = same_k.iter().map(|r| r.alpha).collect();
            alphas.sort_by(f64::total_cmp);
            alphas.dedup();
            return Err(missing(format!("tabulated alphas for k={k} are {alphas:?}")));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(&(_, c)) = nodes.iter().find(|(g, _)| (g - gamma).abs() < KEY_TOL) {
            return Ok(c);
        }
        let lo = nodes[0].0;
        let hi = nodes[nodes.len() - 1].0;
        if !(gamma > lo && gamma < hi) {
            return Err(missing(format!(
                "gamma must lie in [{lo}, {hi}] for k={k}, alpha={alpha}"
            )));
        }
        let i = nodes.iter().position(|(g, _)| *g > gamma).expect("gamma is inside the node range");
        let (g0, c0) = nodes[i - 1];
        let (g1, c1) = nodes[i];
        Ok(c0 + (c1 - c0) * (gamma - g0) / (g1 - g0))
    }
}

/// `P(sup_{0<t<=1} |W(t)| < c)` by the reflection series, truncated at
/// `|j| <= max(10, 8/c)`.
pub fn reflection_cdf(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let terms = (8.0 / c).ceil().clamp(10.0, 1e6) as i32;
    (-terms..=terms)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let j = f64::from(j);
            sign * (std_normal_cdf((2.0 * j + 1.0) * c) - std_normal_cdf((2.0 * j - 1.0) * c))
        })
        .sum()
}

/// `c` with `P(sup |W| >= c) = alpha`, by bisection.
pub fn reflection_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (1e-3, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reflection_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn reflection_oracle_values() {
        assert!((reflection_quantile(0.05).unwrap() - 2.2414).abs() < 1e-4);
        // P(sup|W| >= c) = 2 P(|W(1)| >= c) - ... ; the leading term dominates in the tail.
        let c = 3.0;
        let tail = 1.0 - reflection_cdf(c);
        let lead = 4.0 * (1.0 - std_normal_cdf(c));
        assert!(tail <= lead * (1.0 + 1e-12) && tail > 0.99 * lead);
        assert_eq!(reflection_cdf(0.0), 0.0);
        assert!((reflection_cdf(10.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reflection_cdf_increasing() {
        let mut prev = 0.0;
        for i in 1..400 {
            let v = reflection_cdf(i as f64 * 0.01);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn zero_path_gives_zero() {
        assert_eq!(sup_stat_of_increments(1, 0.0, &[0.0; 1000]).unwrap(), 0.0);
        assert_eq!(sup_stat_of_increments(3, 0.3, &[0.0; 3000]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_path() {
        // Two coordinates, increments (0.3, 0.4) at every step of a 100-point grid.
        let inc: Vec<f64> = (0..100).flat_map(|_| [0.3, 0.4]).collect();
        // ||B(t_j)|| = 0.5 j, weight t_j^{-gamma} = (j/100)^{-gamma}; increasing in j for gamma < 1.
        let s = sup_stat_of_increments(2, 0.2, &inc).unwrap();
        assert!((s - 50.0).abs() < 1e-9);
        let s0 = sup_stat_of_increments(2, 0.0, &inc).unwrap();
        assert!((s0 - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = from_seed(1);
        assert!(sup_stat_sample(0, 0.1, 1000, &mut rng).is_err());
        assert!(sup_stat_sample(1, 0.5, 1000, &mut rng).is_err());
        assert!(sup_stat_sample(1, 0.1, 99, &mut rng).is_err());
        assert!(tabulate(&[1], &[0.1], &[0.05], 999, 100, 1).is_err());
    }

    #[test]
    fn near_half_gamma_is_finite() {
        let mut rng = from_seed(3);
        for k in 1..=5 {
            let v = sup_stat_sample(k, 0.49, 2000, &mut rng).unwrap();
            assert!(v.is_finite() && v > 0.0);
        }
    }

    #[test]
    fn multi_gamma_matches_single() {
        let all = simulate_sup_stats(2, &[0.0, 0.3], 5, 500, 11).unwrap();
        for r in 0..5 {
            let mut rng = substream(11, stream_key(&[2, r as u64]));
            let single = sup_stat_sample(2, 0.3, 500, &mut rng).unwrap();
            assert_eq!(single, all[1][r]);
            assert!(all[1][r] >= all[0][r]);
        }
    }

    #[test]
    fn tabulation_is_deterministic() {
        let a = tabulate(&[1, 2], &[0.0, 0.2], &DEFAULT_ALPHAS, 1000, 200, 5).unwrap();
        let b = tabulate(&[1, 2], &[0.0, 0.2], &DEFAULT_ALPHAS, 1000, 200, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows().len(), 16);
        // Decreasing in alpha.
        for k in [1, 2] {
            for g in [0.0, 0.2] {
                let cs: Vec<f64> = DEFAULT_ALPHAS.iter().map(|&al| a.lookup(k, g, al).unwrap()).collect();
                assert!(cs.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }

    #[test]
    fn bundled_lookup() {
        let t = CriticalValueTable::bundled();
        assert_eq!(t.rows().len(), 120);
        assert_eq!(t.lookup(1, 0.1, 0.05).unwrap(), 2.2933);
        assert_eq!(t.lookup(3, 0.1, 0.05).unwrap(), 3.0502);
        assert!((t.lookup(1, 0.05, 0.05).unwrap() - 0.5 * (2.2280 + 2.2933)).abs() < 1e-12);
        assert!(matches!(t.lookup(6, 0.1, 0.05), Err(Error::MissingCriticalValue { .. })));
        assert!(matches!(t.lookup(1, 0.1, 0.07), Err(Error::MissingCriticalValue { .. })));
        let err = t.lookup(1, 0.495, 0.05).unwrap_err();
        assert!(err.to_string().contains("[0, 0.49]"), "{err}");
    }

    #[test]
    fn bundled_monotonicity() {
        let t = CriticalValueTable::bundled();
        for k in 1..=5 {
            for &g in &DEFAULT_GAMMAS {
                let cs: Vec<f64> = DEFAULT_ALPHAS.iter().map(|&a| t.lookup(k, g, a).unwrap()).collect();
                assert!(cs.windows(2).all(|w| w[1] > w[0]));
            }
            for &a in &DEFAULT_ALPHAS {
                let cs: Vec<f64> = DEFAULT_GAMMAS[1..].iter().map(|&g| t.lookup(k, g, a).unwrap()).collect();
                assert!(cs.windows(2).all(|w| w[1] >= w[0]));
                if k < 5 {
                    for &g in &DEFAULT_GAMMAS {
                        assert!(t.lookup(k + 1, g, a).unwrap() > t.lookup(k, g, a).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = tabulate(&[1], &[0.1], &[0.05], 1000, 100, 9).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,gamma,alpha,c,B,grid,seed\n"));
        assert_eq!(CriticalValueTable::read_csv(buf.as_slice()).unwrap(), t);
    }
}
