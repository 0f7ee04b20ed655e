//! Exact simulation of GOU trajectories, change-point injection, and an
//! Euler-Maruyama scheme kept as a cross-check.
//!
//! Over one step of length `D` starting at `t`,
//!
//! ```text
//! X(t + D) = e^{-aD} X(t) + e^{-a(t+D)} int_t^{t+D} e^{as} mu' phi(s) ds + sigma eps,
//! eps ~ N(0, (1 - e^{-2aD}) / (2a))
//! ```
//!
//! and the drift integral is available in closed form for the Fourier basis.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ab_for_frequency, eval_fn, BasisFn, GouModel};
use crate::rng::{self, SubRng};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: Option<u64>,
    pub description: String,
}

/// Observations `x[i] = X(i * delta)`, `i = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub delta: f64,
    /// Size `N` of the historical (change-free) window.
    pub n_historical: usize,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(x: Vec<f64>, delta: f64, n_historical: usize) -> Result<Self> {
        let tr = Self {
            x,
            delta,
            n_historical,
            meta: TrajectoryMeta::default(),
        };
        tr.validate()?;
        Ok(tr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() < 2 {
            return Err(Error::InvalidParameter(
                "trajectory needs at least two observations".into(),
            ));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Number of increments `M`.
    pub fn steps(&self) -> usize {
        self.x.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }

    /// Length `T = N * delta` of the historical window.
    pub fn horizon(&self) -> f64 {
        self.n_historical as f64 * self.delta
    }

    /// CSV with header `i,t,x`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["i", "t", "x"])?;
        for (i, x) in self.x.iter().enumerate() {
            out.write_record([i.to_string(), self.time(i).to_string(), x.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read an `i,t,x` CSV. The step is taken from the first time increment.
    pub fn read_csv<R: Read>(r: R, n_historical: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["i", "t", "x"] {
            return Err(Error::Format(format!(
                "trajectory CSV header must be i,t,x, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad value in row {}", row + 1)))
            };
            ts.push(parse(1)?);
            xs.push(parse(2)?);
        }
        if xs.len() < 2 {
            return Err(Error::Format("trajectory CSV needs at least two rows".into()));
        }
        let delta = ts[1] - ts[0];
        Trajectory::new(xs, delta, n_historical)
    }
}

/// Scenario with a drift change after index `N + floor(t_star * N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointScenario {
    pub theta0: GouModel,
    pub theta_star: GouModel,
    pub t_star: f64,
    pub horizon_multiple: f64,
    #[serde(default)]
    pub x0: f64,
}

impl ChangePointScenario {
    pub fn no_change(model: GouModel, horizon_multiple: f64) -> Self {
        Self {
            theta_star: model.clone(),
            theta0: model,
            t_star: 0.0,
            horizon_multiple,
            x0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta0.validate()?;
        self.theta_star.validate()?;
        if self.theta0.basis != self.theta_star.basis {
            return Err(Error::InvalidParameter(
                "pre- and post-change models must share the basis".into(),
            ));
        }
        if self.theta0.sigma != self.theta_star.sigma {
            return Err(Error::InvalidParameter(
                "only drift parameters may change: sigma must be equal".into(),
            ));
        }
        if !(self.t_star >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_star must be nonnegative, got {}",
                self.t_star
            )));
        }
        if !(self.horizon_multiple >= 1.0) || !self.horizon_multiple.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon_multiple must be at least 1, got {}",
                self.horizon_multiple
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        Ok(())
    }

    /// Last index simulated with the pre-change dynamics.
    pub fn change_index(&self, n: usize) -> usize {
        n + (self.t_star * n as f64).floor() as usize
    }

    pub fn total_steps(&self, n: usize) -> usize {
        (self.horizon_multiple * n as f64).ceil() as usize
    }
}

/// Scenario file: the scenario plus grid size, horizon and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: ChangePointScenario,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Exact one-step transition for a fixed model and step size.
#[derive(Debug, Clone)]
pub struct ExactStepper {
    model: GouModel,
    decay: f64,
    noise_sd: f64,
    /// `(A_f, B_f)` per frequency `f = 0..=max_frequency`.
    ab: Vec<(f64, f64)>,
}

impl ExactStepper {
    pub fn new(model: &GouModel, delta: f64) -> Result<Self> {
        model.validate()?;
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {delta}")));
        }
        let a = model.a;
        let decay = (-a * delta).exp();
        let var = -(-2.0 * a * delta).exp_m1() / (2.0 * a);
        let ab = (0..=model.basis.max_frequency())
            .map(|f| {
                let (ak, bk) = ab_for_frequency(a, f);
                let w = 2.0 * std::f64::consts::PI * f as f64 * delta;
                let (s, c) = w.sin_cos();
                (ak * c - ak * decay + bk * s, bk * decay - bk * c + ak * s)
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            decay,
            noise_sd: model.sigma * var.sqrt(),
            ab,
        })
    }

    /// Standard deviation of the Gaussian innovation.
    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `e^{-a t_i} int_{t_{i-1}}^{t_i} e^{as} mu' phi(s) ds` with `t_{i-1} = t_prev`.
    pub fn drift_integral(&self, t_prev: f64) -> f64 {
        self.model
            .basis
            .functions()
            .zip(&self.model.mu)
            .map(|(f, &m)| {
                let (ak, bk) = self.ab[f.frequency()];
                match f {
                    BasisFn::Cos(0) => m * ak,
                    BasisFn::Cos(k) => {
                        m * (ak * eval_fn(f, t_prev) - bk * eval_fn(BasisFn::Sin(k), t_prev))
                    }
                    BasisFn::Sin(k) => {
                        m * (bk * eval_fn(BasisFn::Cos(k), t_prev) + ak * eval_fn(f, t_prev))
                    }
                }
            })
            .sum()
    }

    pub fn step(&self, t_prev: f64, x_prev: f64, z: f64) -> f64 {
        self.decay * x_prev + self.drift_integral(t_prev) + self.noise_sd * z
    }
}

/// Single exact transition; `z` is a standard normal draw.
pub fn exact_step(model: &GouModel, t_prev: f64, x_prev: f64, delta: f64, z: f64) -> Result<f64> {
    Ok(ExactStepper::new(model, delta)?.step(t_prev, x_prev, z))
}

fn check_grid(n: usize, t: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N must be at least 2, got {n}")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t}")));
    }
    Ok(t / n as f64)
}

/// Exact trajectory of `ceil(horizon_multiple * N) + 1` points on the grid
/// `t_i = i T / N`, drawing innovations from `rng`.
pub fn simulate_with_rng(
    scenario: &ChangePointScenario,
    n: usize,
    t: f64,
    rng: &mut SubRng,
) -> Result<Trajectory> {
    scenario.validate()?;
    let delta = check_grid(n, t)?;
    let before = ExactStepper::new(&scenario.theta0, delta)?;
    let after = ExactStepper::new(&scenario.theta_star, delta)?;
    let change = scenario.change_index(n);
    let steps = scenario.total_steps(n);
    let mut x = Vec::with_capacity(steps + 1);
    x.push(scenario.x0);
    let mut prev = scenario.x0;
    for i in 1..=steps {
        let z: f64 = rng.sample(StandardNormal);
        let stepper = if i <= change { &before } else { &after };
        prev = stepper.step((i - 1) as f64 * delta, prev, z);
        x.push(prev);
    }
    Ok(Trajectory {
        x,
        delta,
        n_historical: n,
        meta: TrajectoryMeta::default(),
    })
}

pub fn simulate_trajectory(
    scenario: &ChangePointScenario,
    n: usize,
    t: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng::from_seed(seed);
    let mut tr = simulate_with_rng(scenario, n, t, &mut rng)?;
    tr.meta = TrajectoryMeta {
        seed: Some(seed),
        description: format!(
            "exact; t_star={}, horizon_multiple={}",
            scenario.t_star, scenario.horizon_multiple
        ),
    };
    Ok(tr)
}

/// Euler-Maruyama path with `steps` increments of size `delta` from `x0`.
pub fn euler_maruyama_with_rng(
    model: &GouModel,
    x0: f64,
    steps: usize,
    delta: f64,
    rng: &mut SubRng,
) -> Result<Vec<f64>> {
    model.validate()?;
    let sd = model.sigma * delta.sqrt();
    let mut x = Vec::with_capacity(steps + 1);
    x.push(x0);
    let mut prev = x0;
    for i in 1..=steps {
        let z: f64 = rng.sample(StandardNormal);
        let t_prev = (i - 1) as f64 * delta;
        prev += (model.periodic_drift(t_prev) - model.a * prev) * delta + sd * z;
        x.push(prev);
    }
    Ok(x)
}

/// Euler-Maruyama path of `N + 1` points on `[0, T]` from `X_0 = 0`.
pub fn euler_maruyama_trajectory(model: &GouModel, n: usize, t: f64, seed: u64) -> Result<Trajectory> {
    let delta = check_grid(n, t)?;
    let mut rng = rng::from_seed(seed);
    let x = euler_maruyama_with_rng(model, 0.0, n, delta, &mut rng)?;
    Ok(Trajectory {
        x,
        delta,
        n_historical: n,
        meta: TrajectoryMeta {
            seed: Some(seed),
            description: "euler-maruyama".into(),
        },
    })
}
