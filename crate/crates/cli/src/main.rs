//! `llgmm` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and input-format problems, 1 when
//! estimation fails or a simulation cell exceeds its failure budget.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use llgmm::netfeat::{apl_curve, default_thresholds, load_measurements, similarity_from_measurements, write_curves, write_pivot, AplCurve};
use llgmm::simulate::{generate, run_cell, table_cells, table_csv, MonteCarloReport, Scenario, VarianceFunction};
use llgmm::{estimate_full, load_dataset, write_dataset, write_estimate, EstimatorConfig, Grid};

#[derive(Parser, Debug)]
#[command(name = "llgmm", version, about = "Local-linear GMM for functional varying-coefficient models")]
struct Cli {
    /// Optional `key=value` file; flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print progress lines on stdout.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one Monte Carlo cell or a whole table.
    Simulate(SimulateArgs),
    /// Fit LLE and LLGMM to CSV data.
    Estimate(EstimateArgs),
    /// APL curves from per-subject ROI measurements.
    Netfeat(NetfeatArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct TuningArgs {
    /// Fraction of variance explained when truncating eigenfunctions (default 0.99).
    #[arg(long)]
    fve: Option<f64>,
    /// Factor applied to the CV bandwidth for the final fit (default 0.75).
    #[arg(long)]
    shrink: Option<f64>,
    /// Cross-validation folds (default 5).
    #[arg(long)]
    folds: Option<usize>,
    /// Seed for data generation in `simulate`, for fold assignment in `estimate` (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
struct SimulateArgs {
    /// Variance function S0..S4.
    #[arg(long)]
    scenario: Option<String>,
    /// Subjects per replicate.
    #[arg(long)]
    n: Option<usize>,
    /// Noise-to-signal level SNR_θ (default 0.5).
    #[arg(long)]
    snr: Option<f64>,
    /// Replicates per cell (default 500).
    #[arg(long)]
    replicates: Option<usize>,
    /// Run every cell of table 1 (SNR 0.5) or 2 (SNR 1).
    #[arg(long)]
    table: Option<u8>,
    /// Also write replicate 0 as covariates/responses/truth CSV files.
    #[arg(long)]
    export_data: bool,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug, Default, Clone)]
struct EstimateArgs {
    /// Covariate CSV: an `id` column, then one column per covariate.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Response CSV: an `id` column, then one column per grid point (header holds s_j).
    #[arg(long)]
    responses: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug, Default, Clone)]
struct NetfeatArgs {
    /// Measurement CSV with header `id,roi_1,…,roi_m`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (default: current directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn failed(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

/// Input problems exit with 2, everything else with 1.
fn from_core(e: llgmm::Error) -> Failure {
    match e {
        llgmm::Error::Parse { .. } | llgmm::Error::Argument(_) | llgmm::Error::Io(_) => usage(e.to_string()),
        other => failed(other.to_string()),
    }
}

type Outcome = Result<(), Failure>;

const CONFIG_KEYS: &[&str] = &[
    "scenario", "n", "snr", "replicates", "seed", "table", "covariates", "responses", "input", "out", "fve", "shrink", "folds", "workers", "verbose",
];

fn read_config(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), k + 1)))?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!("{}:{}: unknown key {key:?}", path.display(), k + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

/// Fills `slot` from the config file when the flag was not given.
fn merge<T: FromStr>(slot: &mut Option<T>, file: &BTreeMap<String, String>, key: &str) -> Outcome {
    if slot.is_none() {
        if let Some(v) = file.get(key) {
            *slot = Some(v.parse().map_err(|_| usage(format!("config: bad value {v:?} for {key}")))?);
        }
    }
    Ok(())
}

fn merge_tuning(t: &mut TuningArgs, file: &BTreeMap<String, String>) -> Outcome {
    merge(&mut t.fve, file, "fve")?;
    merge(&mut t.shrink, file, "shrink")?;
    merge(&mut t.folds, file, "folds")?;
    merge(&mut t.seed, file, "seed")?;
    merge(&mut t.out, file, "out")
}

fn estimator_config(grid: &Grid<f64>, t: &TuningArgs) -> EstimatorConfig<f64> {
    let mut cfg = EstimatorConfig::for_grid(grid);
    if let Some(v) = t.fve {
        cfg.fve = v;
    }
    if let Some(v) = t.shrink {
        cfg.bandwidth_shrink = v;
    }
    if let Some(v) = t.folds {
        cfg.cv_folds = v;
    }
    if let Some(v) = t.seed {
        cfg.seed = v;
    }
    cfg
}

fn out_dir(t: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = t.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| failed(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn cell_stem(sc: &Scenario) -> String {
    format!("{:?}_n{}_snr{}", sc.variance_fn, sc.n, sc.snr_theta)
}

fn simulate(mut a: SimulateArgs, file: &BTreeMap<String, String>, verbose: bool) -> Outcome {
    merge(&mut a.scenario, file, "scenario")?;
    merge(&mut a.n, file, "n")?;
    merge(&mut a.snr, file, "snr")?;
    merge(&mut a.replicates, file, "replicates")?;
    merge(&mut a.table, file, "table")?;
    merge_tuning(&mut a.tuning, file)?;
    let replicates = a.replicates.unwrap_or(500);
    let seed = a.tuning.seed.unwrap_or(0);
    let cells = match (&a.table, &a.scenario) {
        (Some(t), None) => table_cells(*t, replicates, seed).map_err(from_core)?,
        (None, Some(s)) => {
            let v = VarianceFunction::from_str(s).map_err(from_core)?;
            let n = a.n.ok_or_else(|| usage("--n is required with --scenario"))?;
            let snr = a.snr.unwrap_or(0.5);
            vec![Scenario { replicates, seed, ..Scenario::new(v, snr, n) }]
        }
        (Some(_), Some(_)) => return Err(usage("give either --scenario or --table, not both")),
        (None, None) => return Err(usage("one of --scenario or --table is required")),
    };
    for sc in &cells {
        sc.validate().map_err(from_core)?;
    }
    let dir = out_dir(&a.tuning.out)?;
    // The estimator seed only drives the fold shuffle; the data seed lives in the scenario.
    let tuning = TuningArgs { seed: None, ..a.tuning.clone() };
    let mut reports: Vec<MonteCarloReport> = Vec::new();
    let mut breached = Vec::new();
    for sc in &cells {
        let grid = Grid::uniform(sc.r).map_err(from_core)?;
        let cfg = estimator_config(&grid, &tuning);
        cfg.validate(sc.n).map_err(from_core)?;
        let start = Instant::now();
        let rep = run_cell(sc, &cfg).map_err(from_core)?;
        let stem = cell_stem(sc);
        write_json(&dir.join(format!("{stem}.json")), &rep)?;
        write_json(&dir.join(format!("{stem}.timing.json")), &serde_json::json!({ "wall_time_secs": rep.wall_time_secs, "workers": rayon::current_num_threads() }))?;
        if verbose {
            println!(
                "{} n={} snr={}: LLE IMSE {:.4}, LLGMM IMSE {:.4}, failures {}/{} ({:.1}s)",
                sc.variance_fn.label(),
                sc.n,
                sc.snr_theta,
                rep.lle.imse.mean,
                rep.llgmm.imse.mean,
                rep.failures,
                sc.replicates,
                start.elapsed().as_secs_f64()
            );
        }
        if !rep.within_failure_budget() {
            breached.push(format!("{stem}: {} of {} replicates failed", rep.failures, sc.replicates));
        }
        reports.push(rep);
    }
    let table_name = a.table.map_or_else(|| format!("{}_table.csv", cell_stem(&cells[0])), |t| format!("table{t}.csv"));
    fs::write(dir.join(table_name), table_csv(&reports)).map_err(|e| failed(e.to_string()))?;
    if a.export_data {
        let sim = generate(&cells[0], 0).map_err(from_core)?;
        write_dataset(&sim.data, dir.join("covariates.csv"), dir.join("responses.csv")).map_err(from_core)?;
        let mut truth = String::from("s,beta_1\n");
        for (j, s) in sim.data.grid().points().iter().enumerate() {
            truth.push_str(&format!("{s},{:.16e}\n", sim.truth[(j, 0)]));
        }
        fs::write(dir.join("truth.csv"), truth).map_err(|e| failed(e.to_string()))?;
    }
    if breached.is_empty() {
        Ok(())
    } else {
        Err(failed(format!("failure budget exceeded: {}", breached.join("; "))))
    }
}

fn estimate(mut a: EstimateArgs, file: &BTreeMap<String, String>, verbose: bool) -> Outcome {
    merge(&mut a.covariates, file, "covariates")?;
    merge(&mut a.responses, file, "responses")?;
    merge_tuning(&mut a.tuning, file)?;
    let cov = a.covariates.ok_or_else(|| usage("--covariates is required"))?;
    let resp = a.responses.ok_or_else(|| usage("--responses is required"))?;
    let data = load_dataset::<f64>(&cov, &resp).map_err(from_core)?;
    let cfg = estimator_config(data.grid(), &a.tuning);
    cfg.validate(data.n()).map_err(from_core)?;
    let dir = out_dir(&a.tuning.out)?;
    if verbose {
        println!("loaded {} subjects, {} grid points, {} covariates", data.n(), data.r(), data.p());
    }
    let fit = estimate_full(&data, &cfg).map_err(|e| failed(format!("estimation failed: {e}")))?;
    write_estimate(&fit.lle, dir.join("lle_estimates.csv")).map_err(from_core)?;
    write_estimate(&fit.llgmm, dir.join("llgmm_estimates.csv")).map_err(from_core)?;
    write_json(&dir.join("diagnostics.json"), &fit.diagnostics)?;
    if verbose {
        println!("h_init {:.4}, h_gmm {:.4}, kappa0 {}", fit.diagnostics.h_init, fit.diagnostics.h_gmm, fit.diagnostics.kappa0);
    }
    Ok(())
}

fn netfeat(mut a: NetfeatArgs, file: &BTreeMap<String, String>, verbose: bool) -> Outcome {
    merge(&mut a.input, file, "input")?;
    merge(&mut a.out, file, "out")?;
    let input = a.input.ok_or_else(|| usage("--input is required"))?;
    let subjects = load_measurements(&input).map_err(from_core)?;
    let thresholds = default_thresholds();
    let mut curves: Vec<(String, AplCurve)> = Vec::with_capacity(subjects.len());
    for (id, y) in subjects {
        let sim = similarity_from_measurements(&y).map_err(from_core)?;
        curves.push((id, apl_curve(&sim, &thresholds).map_err(from_core)?));
    }
    let dir = out_dir(&a.out)?;
    write_curves(&curves, dir.join("apl_curves.csv")).map_err(from_core)?;
    write_pivot(&curves, dir.join("apl_responses.csv")).map_err(from_core)?;
    if verbose {
        println!("wrote APL curves for {} subjects over {} thresholds", curves.len(), thresholds.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    let mut workers = cli.workers;
    merge(&mut workers, &file, "workers")?;
    let mut verbose = Some(cli.verbose).filter(|v| *v);
    merge(&mut verbose, &file, "verbose")?;
    let verbose = verbose.unwrap_or(false);
    if let Some(w) = workers {
        if w == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| failed(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, &file, verbose),
        Command::Estimate(a) => estimate(a, &file, verbose),
        Command::Netfeat(a) => netfeat(a, &file, verbose),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
