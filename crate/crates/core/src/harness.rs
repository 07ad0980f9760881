//! Seeded Monte Carlo engine: per-step bias and spread of the disturbance
//! error, windowed bias-variance summaries, RMSE and timing.
//!
//! Trials run on a rayon pool; results are collected in trial order and reduced
//! sequentially, so reports do not depend on the number of workers.

use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DobError, Result};
use crate::estimators::{lagged_disturbance_cov, Estimate, EstimatorKind, Observer, ObserverFlags};
use crate::model::{GaussianBelief, LinearSystem};
use crate::output::{fmt_f64, write_csv};
use crate::scenario::{simulate_truth, trial_seed, DisturbanceProfile, Trajectory, TruthModel};

#[derive(Debug, Clone)]
pub struct NamedEstimator {
    pub name: String,
    pub kind: EstimatorKind,
}

impl NamedEstimator {
    pub fn new(name: impl Into<String>, kind: EstimatorKind) -> Self {
        Self { name: name.into(), kind }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub truth: TruthModel,
    /// Model the filters run with.
    pub filter_system: LinearSystem,
    /// Filters' prior over `x_0`.
    pub x0_prior: GaussianBelief,
    pub profile: DisturbanceProfile,
    pub steps: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub dt: f64,
    pub estimators: Vec<NamedEstimator>,
    /// Inclusive, 1-based.
    pub window: (usize, usize),
    /// Worker count; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl MonteCarloConfig {
    /// Filters matched to the truth model and its initial prior.
    pub fn new(truth: TruthModel, profile: DisturbanceProfile, steps: usize, trials: usize, base_seed: u64, dt: f64) -> Self {
        Self {
            filter_system: truth.system.clone(),
            x0_prior: truth.x0.clone(),
            truth,
            profile,
            steps,
            trials,
            base_seed,
            dt,
            estimators: Vec::new(),
            window: (1, steps),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(DobError::InvalidParameter("trials must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(DobError::InvalidParameter("steps must be at least 1".into()));
        }
        let (m1, m2) = self.window;
        if m1 == 0 || m1 > m2 || m2 > self.steps {
            return Err(DobError::InvalidParameter(format!(
                "window [{m1}, {m2}] must satisfy 1 <= m1 <= m2 <= steps = {}",
                self.steps
            )));
        }
        if self.filter_system.p() != 1 {
            return Err(DobError::InvalidParameter(
                "Monte Carlo statistics are defined for a scalar disturbance".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(DobError::InvalidParameter("no estimators configured".into()));
        }
        if self.threads == Some(0) {
            return Err(DobError::InvalidParameter("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub name: String,
    /// `b_k = mean over trials of (d_k - d_hat_k)`.
    pub bias: Vec<f64>,
    /// `sigma_k = sqrt(mean over trials of (d_k - d_hat_k - b_k)^2)`.
    pub std: Vec<f64>,
    pub mean_bias_sq: f64,
    pub mean_var: f64,
    pub perf_loss: f64,
    pub rmse_d: MeanStd,
    pub rmse_x: Vec<MeanStd>,
    pub wall_time: MeanStd,
    pub failures: usize,
    pub nonconverged_steps: usize,
    pub underflow_steps: usize,
    /// Per successful trial, the error series `d_k - d_hat_k`.
    #[serde(skip)]
    pub errors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub steps: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub dt: f64,
    pub window: (usize, usize),
    pub estimators: Vec<EstimatorReport>,
}

impl MonteCarloReport {
    pub fn get(&self, name: &str) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(path, text + "\n")
    }
}

/// Output of one observer over one trajectory.
#[derive(Debug, Clone)]
pub struct ObserverRun {
    pub estimates: Vec<Estimate>,
    pub flags: ObserverFlags,
}

/// Runs one observer over every measurement of `traj`.
pub fn run_observer(kind: &EstimatorKind, sys: &LinearSystem, prior: &GaussianBelief, traj: &Trajectory) -> Result<ObserverRun> {
    let mut obs = Observer::new(kind, sys, prior)?;
    let mut estimates = Vec::with_capacity(traj.len());
    for y in &traj.measurements {
        estimates.push(obs.step(y)?);
    }
    Ok(ObserverRun {
        estimates,
        flags: obs.flags(),
    })
}

struct TrialOutcome {
    d_err: Vec<f64>,
    rmse_d: f64,
    rmse_x: Vec<f64>,
    seconds: f64,
    flags: ObserverFlags,
}

fn run_trial(cfg: &MonteCarloConfig, trial: usize) -> Result<Vec<Result<TrialOutcome>>> {
    let seed = trial_seed(cfg.base_seed, trial as u64);
    let traj = simulate_truth(&cfg.truth, &cfg.profile, cfg.steps, seed, cfg.dt)?;
    let n = cfg.filter_system.n();
    Ok(cfg
        .estimators
        .iter()
        .map(|est| {
            let start = Instant::now();
            let run = run_observer(&est.kind, &cfg.filter_system, &cfg.x0_prior, &traj)?;
            let seconds = start.elapsed().as_secs_f64();
            let d_err: Vec<f64> = traj
                .disturbances
                .iter()
                .zip(&run.estimates)
                .map(|(d, e)| d[0] - e.d_hat[0])
                .collect();
            let steps = d_err.len() as f64;
            let rmse_d = (d_err.iter().map(|e| e * e).sum::<f64>() / steps).sqrt();
            let rmse_x = (0..n)
                .map(|i| {
                    let sq: f64 = traj
                        .states
                        .iter()
                        .zip(&run.estimates)
                        .map(|(x, e)| (x[i] - e.x_hat[i]).powi(2))
                        .sum();
                    (sq / steps).sqrt()
                })
                .collect();
            Ok(TrialOutcome {
                d_err,
                rmse_d,
                rmse_x,
                seconds,
                flags: run.flags,
            })
        })
        .collect())
}

/// Window averages `(mean b_k^2, mean sigma_k^2)` over the inclusive 1-based window.
pub fn window_stats(bias: &[f64], std: &[f64], window: (usize, usize)) -> Result<(f64, f64)> {
    let (m1, m2) = window;
    if m1 == 0 || m1 > m2 || m2 > bias.len() || bias.len() != std.len() {
        return Err(DobError::EmptyWindow);
    }
    let count = (m2 - m1 + 1) as f64;
    let b2 = bias[m1 - 1..m2].iter().map(|b| b * b).sum::<f64>() / count;
    let var = std[m1 - 1..m2].iter().map(|s| s * s).sum::<f64>() / count;
    Ok((b2, var))
}

/// `mean b_k^2 + mean sigma_k^2` over the window.
pub fn performance_loss(report: &EstimatorReport, window: (usize, usize)) -> Result<f64> {
    let (b2, var) = window_stats(&report.bias, &report.std, window)?;
    Ok(b2 + var)
}

/// Per-step bias and spread of a set of error series.
pub fn bias_std(errors: &[Vec<f64>], steps: usize) -> (Vec<f64>, Vec<f64>) {
    let k = errors.len() as f64;
    let mut bias = vec![0.0; steps];
    let mut std = vec![0.0; steps];
    for t in 0..steps {
        let b = errors.iter().map(|e| e[t]).sum::<f64>() / k;
        let v = errors.iter().map(|e| (e[t] - b).powi(2)).sum::<f64>() / k;
        bias[t] = b;
        std[t] = v.sqrt();
    }
    (bias, std)
}

pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let work = || -> Vec<Result<Vec<Result<TrialOutcome>>>> {
        (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, i)).collect()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| DobError::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let outcomes: Vec<Vec<Result<TrialOutcome>>> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(cfg.estimators.len());
    for (j, est) in cfg.estimators.iter().enumerate() {
        let mut errors = Vec::new();
        let mut rmse_d = Vec::new();
        let mut rmse_x: Vec<Vec<f64>> = vec![Vec::new(); cfg.filter_system.n()];
        let mut times = Vec::new();
        let mut failures = 0;
        let mut flags = ObserverFlags::default();
        for trial in &outcomes {
            match &trial[j] {
                Ok(t) => {
                    errors.push(t.d_err.clone());
                    rmse_d.push(t.rmse_d);
                    for (acc, v) in rmse_x.iter_mut().zip(&t.rmse_x) {
                        acc.push(*v);
                    }
                    times.push(t.seconds);
                    flags.nonconverged += t.flags.nonconverged;
                    flags.underflow += t.flags.underflow;
                }
                Err(_) => failures += 1,
            }
        }
        let (bias, std) = if errors.is_empty() {
            (vec![f64::NAN; cfg.steps], vec![f64::NAN; cfg.steps])
        } else {
            bias_std(&errors, cfg.steps)
        };
        let (mean_bias_sq, mean_var) = window_stats(&bias, &std, cfg.window)?;
        reports.push(EstimatorReport {
            name: est.name.clone(),
            bias,
            std,
            mean_bias_sq,
            mean_var,
            perf_loss: mean_bias_sq + mean_var,
            rmse_d: MeanStd::of(&rmse_d),
            rmse_x: rmse_x.iter().map(|v| MeanStd::of(v)).collect(),
            wall_time: MeanStd::of(&times),
            failures,
            nonconverged_steps: flags.nonconverged,
            underflow_steps: flags.underflow,
            errors,
        });
    }
    Ok(MonteCarloReport {
        steps: cfg.steps,
        trials: cfg.trials,
        base_seed: cfg.base_seed,
        dt: cfg.dt,
        window: cfg.window,
        estimators: reports,
    })
}

/// KF-DOB estimators at `D = eta D*`, named `kfdob_eta00`, `kfdob_eta01`, ...
pub fn eta_sweep_estimators(d_star: &DMatrix<f64>, etas: &[f64]) -> Vec<NamedEstimator> {
    etas.iter()
        .enumerate()
        .map(|(i, eta)| NamedEstimator::new(format!("kfdob_eta{i:02}"), EstimatorKind::KfDob { d: d_star * *eta }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub perf_loss: f64,
}

/// Pairs each eta with the report of the matching sweep estimator.
pub fn sweep_rows(report: &MonteCarloReport, etas: &[f64]) -> Vec<SweepRow> {
    etas.iter()
        .zip(&report.estimators)
        .map(|(&eta, r)| SweepRow {
            eta,
            bias_sq: r.mean_bias_sq,
            variance: r.mean_var,
            perf_loss: r.perf_loss,
        })
        .collect()
}

/// Number of adjacent pairs that violate a nondecreasing (or nonincreasing) order.
pub fn order_violations(values: &[f64], nondecreasing: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if nondecreasing { w[1] < w[0] } else { w[1] > w[0] })
        .count()
}

/// Steps (1-based) where the profile level does not jump.
pub fn constant_steps(profile: &DisturbanceProfile, steps: usize) -> Vec<usize> {
    (1..=steps).filter(|&k| !profile.is_jump(k)).collect()
}

/// Fraction of per-trial errors inside `b_k +/- 3 sigma_k` over `steps`.
pub fn band_coverage(report: &EstimatorReport, steps: &[usize]) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for e in &report.errors {
        for &k in steps {
            let (b, s) = (report.bias[k - 1], report.std[k - 1]);
            total += 1;
            if (e[k - 1] - b).abs() <= 3.0 * s {
                inside += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

pub fn write_bias_std_csv(report: &EstimatorReport, dt: f64, path: &Path) -> io::Result<()> {
    let rows = report.bias.iter().zip(&report.std).enumerate().map(|(i, (b, s))| {
        let step = i + 1;
        vec![step.to_string(), fmt_f64(step as f64 * dt), fmt_f64(*b), fmt_f64(*s)]
    });
    write_csv(path, "step,t,bias,std", rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> io::Result<()> {
    let rows = rows
        .iter()
        .map(|r| vec![fmt_f64(r.eta), fmt_f64(r.bias_sq), fmt_f64(r.variance), fmt_f64(r.perf_loss)]);
    write_csv(path, "eta,bias_sq,variance,perf_loss", rows)
}

/// Largest per-step deviations between SISE, NKF-DOB and KF-DOB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentitySummary {
    pub max_d_hat_deviation: f64,
    /// Relative deviation `|a - b| / max(|a|, |b|)` of the disturbance covariances.
    pub max_d_cov_deviation: f64,
    pub compared_steps: usize,
}

/// Steps skipped at the start of an identity comparison.
pub const IDENTITY_BURN_IN: usize = 2;

/// Runs SISE, NKF-DOB and KF-DOB with `D = d_scale * d_star` on one trajectory
/// and reports the largest pairwise deviation after the burn-in. KF-DOB's
/// covariance is taken at the lagged disturbance so all three describe the same quantity.
pub fn identity_check(
    truth: &TruthModel,
    profile: &DisturbanceProfile,
    steps: usize,
    seed: u64,
    d_star: &DMatrix<f64>,
    d_scale: f64,
) -> Result<IdentitySummary> {
    if !(d_scale > 0.0 && d_scale.is_finite()) {
        return Err(DobError::InvalidParameter(format!("D scale must be positive, got {d_scale}")));
    }
    let sys = &truth.system;
    let d = d_star * d_scale;
    let traj = simulate_truth(truth, profile, steps, seed, 1.0)?;
    let prior = &truth.x0;
    let sise = run_observer(&EstimatorKind::Sise, sys, prior, &traj)?.estimates;
    let nkf = run_observer(&EstimatorKind::NkfDob { d: d.clone() }, sys, prior, &traj)?.estimates;
    let kf = run_observer(&EstimatorKind::KfDob { d: d.clone() }, sys, prior, &traj)?.estimates;

    let rel = |a: f64, b: f64| {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    };
    let mut summary = IdentitySummary {
        max_d_hat_deviation: 0.0,
        max_d_cov_deviation: 0.0,
        compared_steps: 0,
    };
    for k in IDENTITY_BURN_IN..steps {
        let kf_cov = lagged_disturbance_cov(&kf[k].d_cov, &d);
        let hats = [&sise[k].d_hat, &nkf[k].d_hat, &kf[k].d_hat];
        let covs = [&sise[k].d_cov, &nkf[k].d_cov, &kf_cov];
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            summary.max_d_hat_deviation = summary.max_d_hat_deviation.max((hats[a] - hats[b]).amax());
            for (x, y) in covs[a].iter().zip(covs[b].iter()) {
                summary.max_d_cov_deviation = summary.max_d_cov_deviation.max(rel(*x, *y));
            }
        }
        summary.compared_steps += 1;
    }
    Ok(summary)
}
