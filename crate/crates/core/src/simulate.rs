//! Monte Carlo design: `Y_i(s) = X_i cos(2πs) + θ0·(ξ_1i ψ_1(s) + ξ_2i ψ_2(s))`
//! with `X_i ~ N(1, 1)`, `ξ_1i ~ N(0, 3σ²(X_i))`, `ξ_2i ~ N(0, 1.5σ²(X_i))` on
//! the midpoint grid `s_j = (j − 0.5)/r`, plus the error metrics and a
//! parallel harness over replicates.
//!
//! Each replicate draws from its own ChaCha stream `(seed, replicate)`, in the
//! order `X_i, ξ_1i, ξ_2i` per subject, so results do not depend on how
//! replicates are scheduled.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EstimatorConfig;
use crate::error::{Error, Result};
use crate::gmm::estimate_full;
use crate::grid::{trapezoid_integrate, Grid};
use crate::io::{CoefficientEstimate, FunctionalDataset};
use crate::scalar::Scalar;

/// Conditional variance shapes `σ²(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarianceFunction {
    /// `1`
    S0,
    /// `(1 + x²/2)²`
    S1,
    /// `exp(1 + x²/2)`
    S2,
    /// `exp(1 + |x| + x²)`
    S3,
    /// `(1 + |x|/2)²`
    S4,
}

impl VarianceFunction {
    pub const ALL: [VarianceFunction; 5] = [Self::S0, Self::S1, Self::S2, Self::S3, Self::S4];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::S0 => 1.0,
            Self::S1 => (1.0 + x * x / 2.0).powi(2),
            Self::S2 => (1.0 + x * x / 2.0).exp(),
            Self::S3 => (1.0 + x.abs() + x * x).exp(),
            Self::S4 => (1.0 + x.abs() / 2.0).powi(2),
        }
    }

    /// Label as printed in the tables, e.g. `S.2`.
    pub fn label(self) -> &'static str {
        match self {
            Self::S0 => "S.0",
            Self::S1 => "S.1",
            Self::S2 => "S.2",
            Self::S3 => "S.3",
            Self::S4 => "S.4",
        }
    }
}

impl fmt::Display for VarianceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for VarianceFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('.', "").as_str() {
            "S0" => Ok(Self::S0),
            "S1" => Ok(Self::S1),
            "S2" => Ok(Self::S2),
            "S3" => Ok(Self::S3),
            "S4" => Ok(Self::S4),
            _ => Err(Error::Argument(format!("unknown scenario {s:?}; expected S0..S4"))),
        }
    }
}

/// How the noise multiplier `θ0` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum NoiseScale {
    /// Per dataset: `θ0 = sd(X_iβ(s_j)) / (SNR·sd(unscaled noise))`, both
    /// standard deviations pooled over all subjects and grid points.
    #[default]
    Empirical,
    /// The population value from [`calibrate_theta0`].
    Calibrated,
    Fixed(f64),
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub variance_fn: VarianceFunction,
    pub snr_theta: f64,
    pub n: usize,
    pub r: usize,
    pub replicates: usize,
    pub seed: u64,
    pub noise: NoiseScale,
}

impl Scenario {
    pub fn new(variance_fn: VarianceFunction, snr_theta: f64, n: usize) -> Self {
        Scenario { variance_fn, snr_theta, n, r: 200, replicates: 500, seed: 0, noise: NoiseScale::Empirical }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.r < 2 {
            return Err(Error::Argument(format!("need n ≥ 2 and r ≥ 2, got n = {}, r = {}", self.n, self.r)));
        }
        if !(self.snr_theta > 0.0) || !self.snr_theta.is_finite() {
            return Err(Error::Argument(format!("snr_theta must be positive, got {}", self.snr_theta)));
        }
        if let NoiseScale::Fixed(t) = self.noise {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::Argument(format!("fixed noise scale must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Sample sizes shown in the tables.
pub const TABLE_SIZES: [usize; 4] = [50, 100, 200, 500];

/// Cells of table 1 (`SNR = 0.5`) or table 2 (`SNR = 1`).
pub fn table_cells(table: u8, replicates: usize, seed: u64) -> Result<Vec<Scenario>> {
    let snr = match table {
        1 => 0.5,
        2 => 1.0,
        _ => return Err(Error::Argument(format!("table must be 1 or 2, got {table}"))),
    };
    Ok(VarianceFunction::ALL
        .iter()
        .flat_map(|&v| TABLE_SIZES.iter().map(move |&n| Scenario { replicates, seed, ..Scenario::new(v, snr, n) }))
        .collect())
}

/// `ψ_1 ∝ 1.5 − sin(2πs) − cos(2πs)` and `ψ_2 ∝ sin(4πs)`, each normalized to
/// unit trapezoid norm on the grid.
pub fn basis_psi(grid: &Grid<f64>) -> (Vec<f64>, Vec<f64>) {
    let normalize = |v: Vec<f64>| {
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let norm = trapezoid_integrate(&sq, grid).expect("grid length").sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let s = grid.points();
    (
        normalize(s.iter().map(|&s| 1.5 - (2.0 * PI * s).sin() - (2.0 * PI * s).cos()).collect()),
        normalize(s.iter().map(|&s| (4.0 * PI * s).sin()).collect()),
    )
}

/// Draws used for `E[σ²(X)]` in [`calibrate_theta0`].
pub const CALIBRATION_DRAWS: usize = 1_000_000;

/// Population noise multiplier: `θ0 = SNR⁻¹·√(∫Var_X(Xβ(s))ds / (4.5·E[σ²(X)]))`.
///
/// `∫Var_X(X cos 2πs)ds = 1/2`. `E[σ²(X)]` is exact for S0 and a Monte Carlo
/// mean over [`CALIBRATION_DRAWS`] fixed draws otherwise. For S2 and S3 the
/// expectation is infinite under `X ~ N(1, 1)`, so the estimate is a large,
/// draw-dependent number and the resulting `θ0` is tiny; [`NoiseScale::Empirical`]
/// is the default for that reason.
pub fn calibrate_theta0(scenario: &Scenario) -> f64 {
    let e_sigma2 = match scenario.variance_fn {
        VarianceFunction::S0 => 1.0,
        v => {
            let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
            let mut acc = 0.0;
            for _ in 0..CALIBRATION_DRAWS {
                let z: f64 = rng.sample(StandardNormal);
                acc += v.eval(1.0 + z);
            }
            acc / CALIBRATION_DRAWS as f64
        }
    };
    (0.5 / (4.5 * e_sigma2)).sqrt() / scenario.snr_theta
}

/// A generated dataset with its truth.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: FunctionalDataset<f64>,
    /// `β(s_j)`, `r × 1`.
    pub truth: DMatrix<f64>,
    pub theta0: f64,
}

fn pooled_sd(m: &DMatrix<f64>) -> f64 {
    let n = m.len() as f64;
    let mean = m.sum() / n;
    (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn generate(scenario: &Scenario, replicate: usize) -> Result<Simulated> {
    scenario.validate()?;
    let grid = Grid::uniform(scenario.r)?;
    let (psi1, psi2) = basis_psi(&grid);
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    rng.set_stream(replicate as u64);
    let (n, r) = (scenario.n, scenario.r);
    let mut x = DMatrix::zeros(n, 1);
    let mut xi = vec![(0.0, 0.0); n];
    for i in 0..n {
        let xv = 1.0 + rng.sample::<f64, _>(StandardNormal);
        let sd = scenario.variance_fn.eval(xv).sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = xv;
        xi[i] = (z1 * (3.0f64).sqrt() * sd, z2 * (1.5f64).sqrt() * sd);
    }
    let beta: Vec<f64> = grid.points().iter().map(|&s| (2.0 * PI * s).cos()).collect();
    let signal = DMatrix::from_fn(n, r, |i, j| x[(i, 0)] * beta[j]);
    let noise = DMatrix::from_fn(n, r, |i, j| xi[i].0 * psi1[j] + xi[i].1 * psi2[j]);
    let theta0 = match scenario.noise {
        NoiseScale::Fixed(t) => t,
        NoiseScale::Calibrated => calibrate_theta0(scenario),
        NoiseScale::Empirical => {
            let sn = pooled_sd(&noise);
            if sn > 0.0 {
                pooled_sd(&signal) / (scenario.snr_theta * sn)
            } else {
                0.0
            }
        }
    };
    let y = signal + noise * theta0;
    Ok(Simulated { data: FunctionalDataset::new(grid, y, x)?, truth: DMatrix::from_column_slice(r, 1, &beta), theta0 })
}

fn metric<T: Scalar>(est: &CoefficientEstimate<T>, truth: &DMatrix<T>, f: impl Fn(T) -> T) -> Result<Vec<T>> {
    if truth.shape() != est.beta.shape() {
        return Err(Error::Dimension(format!("estimate {:?} vs truth {:?}", est.beta.shape(), truth.shape())));
    }
    let delta = est.grid.spacings();
    Ok((0..est.p())
        .map(|m| (0..delta.len()).fold(T::zero(), |acc, j| acc + f(est.beta[(j, m)] - truth[(j, m)]) * delta[j]))
        .collect())
}

/// `Σ_j (β̂(s_j) − β(s_j))²·Δ(s_j)` per coefficient.
pub fn imse<T: Scalar>(est: &CoefficientEstimate<T>, truth: &DMatrix<T>) -> Result<Vec<T>> {
    metric(est, truth, |e| e * e)
}

/// `Σ_j |β̂(s_j) − β(s_j)|·Δ(s_j)` per coefficient.
pub fn imae<T: Scalar>(est: &CoefficientEstimate<T>, truth: &DMatrix<T>) -> Result<Vec<T>> {
    metric(est, truth, |e| e.abs())
}

/// Mean and Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Summary {
        let n = v.len();
        if n == 0 {
            return Summary { mean: f64::NAN, se: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
        Summary { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub imse: Summary,
    pub imae: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub theta0: f64,
    pub lle_imse: f64,
    pub lle_imae: f64,
    pub llgmm_imse: f64,
    pub llgmm_imae: f64,
    pub h_init: f64,
    pub h_gmm: f64,
    pub kappa0: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub error: String,
}

/// Results of one cell. Wall time is kept out of the serialized form so
/// reports from identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: Scenario,
    pub lle: MethodSummary,
    pub llgmm: MethodSummary,
    pub failures: usize,
    pub failure_details: Vec<ReplicateFailure>,
    pub replicates: Vec<ReplicateRecord>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.01;

impl MonteCarloReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.scenario.replicates.max(1) as f64
    }
    pub fn within_failure_budget(&self) -> bool {
        self.failure_rate() <= MAX_FAILURE_RATE
    }
}

/// Runs one replicate end to end.
pub fn run_replicate(scenario: &Scenario, config: &EstimatorConfig<f64>, index: usize) -> Result<ReplicateRecord> {
    let sim = generate(scenario, index)?;
    let fit = estimate_full(&sim.data, config)?;
    Ok(ReplicateRecord {
        index,
        theta0: sim.theta0,
        lle_imse: imse(&fit.lle, &sim.truth)?[0],
        lle_imae: imae(&fit.lle, &sim.truth)?[0],
        llgmm_imse: imse(&fit.llgmm, &sim.truth)?[0],
        llgmm_imae: imae(&fit.llgmm, &sim.truth)?[0],
        h_init: fit.diagnostics.h_init,
        h_gmm: fit.diagnostics.h_gmm,
        kappa0: fit.diagnostics.kappa0,
    })
}

/// Runs all replicates of a cell in parallel and aggregates them in
/// replicate order. Failed replicates are counted and listed, not dropped
/// silently.
pub fn run_cell(scenario: &Scenario, config: &EstimatorConfig<f64>) -> Result<MonteCarloReport> {
    scenario.validate()?;
    let start = std::time::Instant::now();
    let outcomes: Vec<Result<ReplicateRecord>> = (0..scenario.replicates).into_par_iter().map(|k| run_replicate(scenario, config, k)).collect();
    let mut replicates = Vec::new();
    let mut failure_details = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => replicates.push(rec),
            Err(e) => failure_details.push(ReplicateFailure { index, error: e.to_string() }),
        }
    }
    let col = |f: fn(&ReplicateRecord) -> f64| replicates.iter().map(f).collect::<Vec<f64>>();
    Ok(MonteCarloReport {
        scenario: scenario.clone(),
        lle: MethodSummary { imse: Summary::of(&col(|r| r.lle_imse)), imae: Summary::of(&col(|r| r.lle_imae)) },
        llgmm: MethodSummary { imse: Summary::of(&col(|r| r.llgmm_imse)), imae: Summary::of(&col(|r| r.llgmm_imae)) },
        failures: failure_details.len(),
        failure_details,
        replicates,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Table layout: one row per scenario and method, an IMSE/IMAE column pair per
/// sample size present in `reports`.
pub fn table_csv(reports: &[MonteCarloReport]) -> String {
    let mut sizes: Vec<usize> = reports.iter().map(|r| r.scenario.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut cases: Vec<VarianceFunction> = reports.iter().map(|r| r.scenario.variance_fn).collect();
    cases.sort_unstable();
    cases.dedup();
    let mut out = String::from("case,method");
    for n in &sizes {
        out.push_str(&format!(",n{n}_imse,n{n}_imae"));
    }
    out.push('\n');
    for case in cases {
        for (name, pick) in [("LLE", true), ("LLGMM", false)] {
            out.push_str(&format!("{},{name}", case.label()));
            for &n in &sizes {
                match reports.iter().find(|r| r.scenario.variance_fn == case && r.scenario.n == n) {
                    Some(r) => {
                        let m = if pick { &r.lle } else { &r.llgmm };
                        out.push_str(&format!(",{:.4},{:.4}", m.imse.mean, m.imae.mean));
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
    }
    out
}
