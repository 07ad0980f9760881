//! Self-check suite behind `doblab verify`: algebraic identities, batch
//! oracles, covariance orderings, estimator reductions and Monte Carlo
//! orderings on the default scenario.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::estimators::kf::{kf_step_with, CovarianceForm};
use crate::estimators::{
    immkf_dob_step, kf_dob_prior, kf_dob_step, mkckf_dob_step, sise_step_detailed, EstimatorKind, ImmState, MkcConfig,
    SiseState,
};
use crate::harness::{eta_sweep_estimators, identity_check, order_violations, run_monte_carlo, MonteCarloConfig, NamedEstimator};
use crate::linalg;
use crate::model::{GaussianBelief, LinearSystem, StateSpaceModel};
use crate::oracles::{batch_kf_estimate, bias_propagation, covariance_gap_closed_form, covariance_triple_step};
use crate::scenario::{
    default_tracking_system, simulate_truth, DisturbanceProfile, TruthModel, DEFAULT_D_STAR, DEFAULT_QX, DEFAULT_R,
    DEFAULT_STEPS, DEFAULT_T, DEFAULT_WINDOW,
};

/// Trial count the statistical thresholds are calibrated for.
pub const REFERENCE_TRIALS: usize = 100;

/// Faults that can be injected to confirm the suite detects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the `K R K'` term of the Joseph update in the plain Kalman filter.
    SkipJoseph,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub trials: usize,
    pub fault: Option<Fault>,
    pub threads: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: REFERENCE_TRIALS,
            fault: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Relative slack added to Monte Carlo comparisons when fewer trials than
/// [`REFERENCE_TRIALS`] are used; grows like `1/sqrt(K)`.
pub fn statistical_slack(trials: usize) -> f64 {
    let k = trials.max(1) as f64;
    0.3 * (1.0 / k.sqrt() - 1.0 / (REFERENCE_TRIALS as f64).sqrt()).max(0.0)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random PSD matrix `s A A' + floor I`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    linalg::symmetrize(&(&a * a.transpose() * scale + DMatrix::identity(n, n) * floor))
}

/// Random stable-ish model with `n` states and `m <= n` full-row-rank outputs.
pub fn random_state_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> StateSpaceModel {
    let mut phi = normal_matrix(rng, n, n) * 0.5;
    let norm = phi.norm();
    if norm > 1.0 {
        phi /= norm;
    }
    let h = loop {
        let h = normal_matrix(rng, m, n);
        if linalg::rank(&h) == m {
            break h;
        }
    };
    let q = random_psd(rng, n, 0.1, 0.01);
    let r = random_psd(rng, m, 0.1, 0.1);
    StateSpaceModel::new(phi, h, q, r).expect("random model is valid")
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / linalg::max_abs(a).max(linalg::max_abs(b)).max(1e-300)
}

fn simulate_measurements(rng: &mut ChaCha8Rng, model: &StateSpaceModel, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
    let sq_q = linalg::psd_sqrt(&model.q);
    let sq_r = linalg::psd_sqrt(&model.r);
    let (n, m) = (model.dim(), model.meas_dim());
    let mut x = x0.clone();
    (0..steps)
        .map(|_| {
            x = &model.phi * &x + &sq_q * DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            &model.h * &x + &sq_r * DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
        })
        .collect()
}

fn covariance_form(fault: Option<Fault>) -> CovarianceForm {
    match fault {
        Some(Fault::SkipJoseph) => CovarianceForm::JosephWithoutNoise,
        None => CovarianceForm::Joseph,
    }
}

/// Batch estimate at step 50 against the recursive filter on 20 systems.
pub fn check_batch_equivalence(fault: Option<Fault>) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let form = covariance_form(fault);
    let steps = 50;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=n);
        let model = random_state_model(&mut rng, n, m);
        let x0_mean = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let x0_cov = random_psd(&mut rng, n, 0.5, 0.1);
        let ys = simulate_measurements(&mut rng, &model, &x0_mean, steps);
        let batch = batch_kf_estimate(&model, steps, &x0_mean, &x0_cov, &ys)?;
        let mut belief = GaussianBelief::new(x0_mean, x0_cov)?;
        for y in &ys {
            belief = kf_step_with(&belief, &model.phi, &model.h, &model.q, &model.r, y, form)?.posterior;
        }
        worst = worst.max((batch - belief.mean).amax());
    }
    Ok(PropertyResult::new(
        "batch/recursive equivalence",
        worst <= 1e-8,
        format!("max |batch - recursive| = {worst:.3e} (tol 1e-8)"),
    ))
}

/// `M* H G = I` for SISE on 100 systems.
pub fn check_sise_input_gain() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let p = rng.random_range(1..=n.min(2));
        let m = rng.random_range(p..=n);
        let f = normal_matrix(&mut rng, n, n) * 0.5;
        let (g, h) = loop {
            let g = normal_matrix(&mut rng, n, p);
            let h = normal_matrix(&mut rng, m, n);
            if linalg::rank(&(&h * &g)) == p {
                break (g, h);
            }
        };
        let q = random_psd(&mut rng, n, 0.1, 0.01);
        let r = random_psd(&mut rng, m, 0.1, 0.1);
        let sys = LinearSystem::new(f, g, h, q, r)?;
        let belief = GaussianBelief::new(DVector::zeros(n), random_psd(&mut rng, n, 0.5, 0.1))?;
        let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        let upd = sise_step_detailed(&SiseState::new(belief, p), &sys, &y)?;
        let mhg = &upd.m_star * sys.h() * sys.g();
        worst = worst.max((mhg - DMatrix::identity(p, p)).amax());
    }
    Ok(PropertyResult::new(
        "SISE input gain M*HG = I",
        worst <= 1e-12,
        format!("max |M*HG - I| = {worst:.3e} (tol 1e-12)"),
    ))
}

/// Gain complement and information-form identities along 50-step runs.
pub fn check_kf_identities(fault: Option<Fault>) -> Result<(PropertyResult, PropertyResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let form = covariance_form(fault);
    let (mut worst_gain, mut worst_info) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=n);
        let model = random_state_model(&mut rng, n, m);
        let eye = DMatrix::<f64>::identity(n, n);
        let r_inv = model.r.clone().try_inverse().expect("R is PD");
        let info = model.h.transpose() * &r_inv * &model.h;
        let ys = simulate_measurements(&mut rng, &model, &DVector::zeros(n), 50);
        let mut belief = GaussianBelief::new(DVector::zeros(n), random_psd(&mut rng, n, 0.5, 0.1))?;
        for y in &ys {
            let upd = kf_step_with(&belief, &model.phi, &model.h, &model.q, &model.r, y, form)?;
            let prior = &upd.prior.cov;
            let post = &upd.posterior.cov;
            let complement = &eye - &upd.gain * &model.h;
            let expected = (&eye + prior * &info).try_inverse().expect("I + P H'R^-1 H is invertible");
            worst_gain = worst_gain.max((&complement - &expected).amax()).max(rel_gap(post, &(&expected * prior)));
            let lhs = post.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::INFINITY));
            let rhs = prior.clone().try_inverse().expect("prior is PD") + &info;
            worst_info = worst_info.max(rel_gap(&lhs, &rhs));
            belief = upd.posterior;
        }
    }
    Ok((
        PropertyResult::new(
            "gain complement I - KH = (I + P H'R^-1 H)^-1",
            worst_gain <= 1e-9,
            format!("max deviation = {worst_gain:.3e} (tol 1e-9)"),
        ),
        PropertyResult::new(
            "information form P+^-1 = P-^-1 + H'R^-1 H",
            worst_info <= 1e-8,
            format!("max relative deviation = {worst_info:.3e} (tol 1e-8)"),
        ),
    ))
}

/// `P^f >= P^t >= P` and monotonicity of `P^f`, `P^t` along `dQ_i = s_i dQ`
/// with `0 <= s_1 <= s_2`, on 50 triples.
pub fn check_covariance_orderings() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=n);
        let model = random_state_model(&mut rng, n, m);
        let p_prev = random_psd(&mut rng, n, 0.5, 0.0);
        let dq = random_psd(&mut rng, n, 0.2, 0.0);
        let s1: f64 = rng.random_range(0.0..1.0);
        let s2 = s1 + rng.random_range(0.0..2.0);
        let (dq1, dq2) = (&dq * s1, &dq * s2);
        let t1 = covariance_triple_step(&model, &p_prev, &dq1)?;
        let t2 = covariance_triple_step(&model, &p_prev, &dq2)?;
        for gap in [
            linalg::psd_gap(&t1.filter_calc, &t1.true_cov),
            linalg::psd_gap(&t1.true_cov, &t1.ideal),
            linalg::psd_gap(&t2.filter_calc, &t2.true_cov),
            linalg::psd_gap(&t2.true_cov, &t2.ideal),
            linalg::psd_gap(&t2.filter_calc, &t1.filter_calc),
            linalg::psd_gap(&t2.true_cov, &t1.true_cov),
        ] {
            worst = worst.min(gap);
        }
    }
    Ok(PropertyResult::new(
        "covariance orderings P^f >= P^t >= P, monotone in dQ",
        worst >= -1e-9,
        format!("min eigenvalue of differences = {worst:.3e} (tol -1e-9)"),
    ))
}

/// Closed-form `P^t - P` on square invertible `H`.
pub fn check_gap_closed_form() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let model = random_state_model(&mut rng, n, n);
        let p_prev = random_psd(&mut rng, n, 0.5, 0.0);
        let dq = random_psd(&mut rng, n, 0.2, 0.05);
        let triple = covariance_triple_step(&model, &p_prev, &dq)?;
        let closed = covariance_gap_closed_form(&model, &p_prev, &dq)?;
        worst = worst.max((&triple.true_cov - &triple.ideal - closed).amax());
    }
    Ok(PropertyResult::new(
        "closed-form true/ideal covariance gap",
        worst <= 1e-8,
        format!("max deviation = {worst:.3e} (tol 1e-8)"),
    ))
}

/// One-step bias removal with `dQ = 1e12 I` and square invertible `H`.
pub fn check_infinite_rate() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let model = random_state_model(&mut rng, n, n);
        let q_used = &model.q + DMatrix::identity(n, n) * 1e12;
        let b0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) + 1.0);
        let seq = bias_propagation(&model, &q_used, &DMatrix::identity(n, n), &b0, 1)?;
        worst = worst.max(seq[1].norm() / b0.norm());
    }
    Ok(PropertyResult::new(
        "one-step bias removal at dQ = 1e12 I",
        worst <= 1e-4,
        format!("max remaining bias fraction = {worst:.3e} (tol 1e-4)"),
    ))
}

fn default_truth() -> Result<TruthModel> {
    Ok(TruthModel::from_system(&default_tracking_system(DEFAULT_T, DEFAULT_QX, DEFAULT_R)?))
}

fn d_star() -> DMatrix<f64> {
    DMatrix::identity(1, 1) * DEFAULT_D_STAR
}

/// SISE, NKF-DOB and KF-DOB at `D = e^20 D*` on the default scenario.
pub fn check_family_identity() -> Result<PropertyResult> {
    let s = identity_check(&default_truth()?, &DisturbanceProfile::default_profile(), DEFAULT_STEPS, 1, &d_star(), 20f64.exp())?;
    Ok(PropertyResult::new(
        "SISE / NKF-DOB / KF-DOB identity at D = e^20 D*",
        s.max_d_hat_deviation <= 1e-3 && s.max_d_cov_deviation <= 1e-2,
        format!(
            "max |d_hat gap| = {:.3e} (tol 1e-3), max relative P^dd gap = {:.3e} (tol 1e-2)",
            s.max_d_hat_deviation, s.max_d_cov_deviation
        ),
    ))
}

/// Wide-bandwidth MKC and single-model IMM against KF-DOB, plus IMM simplex.
pub fn check_reductions() -> Result<PropertyResult> {
    let truth = default_truth()?;
    let sys = &truth.system;
    let traj = simulate_truth(&truth, &DisturbanceProfile::default_profile(), 400, 2, DEFAULT_T)?;
    let d = d_star() * 2f64.exp();
    let wide = MkcConfig::uniform(1e8, 1, 2, 2)?;
    let one = DMatrix::identity(1, 1);
    let prior = kf_dob_prior(&truth.x0, &d);
    let mut kf = prior.clone();
    let mut mkc = prior.clone();
    let mut imm = ImmState::uniform(prior.clone(), one.clone())?;
    let mut imm2 = ImmState::uniform(prior, DMatrix::from_row_slice(2, 2, &[0.98, 0.02, 0.5, 0.5]))?;
    let d_list2 = [d_star(), d_star() * 5f64.exp()];
    let (mut mkc_gap, mut imm_exact, mut simplex) = (0.0_f64, true, 0.0_f64);
    for y in &traj.measurements {
        let k = kf_dob_step(&kf, sys, &d, y)?;
        let (m, _) = mkckf_dob_step(&mkc, sys, &d, y, &wide)?;
        let i = immkf_dob_step(&imm, sys, std::slice::from_ref(&d), sys.q(), sys.r(), y)?;
        let i2 = immkf_dob_step(&imm2, sys, &d_list2, sys.q(), sys.r(), y)?;
        mkc_gap = mkc_gap
            .max((&m.belief.mean - &k.belief.mean).amax())
            .max((&m.belief.cov - &k.belief.cov).amax());
        imm_exact &= i.fused.belief == k.belief;
        let mu = i2.state.mode_probs();
        simplex = simplex.max((mu.sum() - 1.0).abs()).max(-mu.min());
        kf = k.belief;
        mkc = m.belief;
        imm = i.state;
        imm2 = i2.state;
    }
    Ok(PropertyResult::new(
        "MKC and IMM reductions to KF-DOB",
        mkc_gap <= 1e-6 && imm_exact && simplex <= 1e-12,
        format!("MKC gap = {mkc_gap:.3e} (tol 1e-6), IMM q=1 exact = {imm_exact}, simplex error = {simplex:.3e}"),
    ))
}

/// Standard comparison set for the default scenario: the KF-DOB eta grid
/// followed by MKCKF-DOB and IMMKF-DOB.
pub fn default_comparison_estimators() -> Result<Vec<NamedEstimator>> {
    let ds = d_star();
    let mut list = eta_sweep_estimators(&ds, &default_eta_grid());
    list.push(NamedEstimator::new(
        "mkckfdob",
        EstimatorKind::MkckfDob {
            d: ds.clone(),
            config: MkcConfig::new(vec![3.0], 2, 2)?,
        },
    ));
    list.push(NamedEstimator::new(
        "immkfdob",
        EstimatorKind::ImmkfDob {
            d_list: vec![ds.clone(), &ds * 5f64.exp()],
            transition: DMatrix::from_row_slice(2, 2, &[0.98, 0.02, 0.5, 0.5]),
        },
    ));
    Ok(list)
}

/// `{e^0, e^1, e^2, e^3, e^20}`.
pub fn default_eta_grid() -> Vec<f64> {
    [0.0, 1.0, 2.0, 3.0, 20.0].iter().map(|l: &f64| l.exp()).collect()
}

/// Eta-sweep ordering and remedy dominance over `trials` paired trials.
pub fn check_monte_carlo(trials: usize, threads: Option<usize>) -> Result<(PropertyResult, PropertyResult)> {
    let grid = default_eta_grid();
    let mut cfg = MonteCarloConfig::new(default_truth()?, DisturbanceProfile::default_profile(), DEFAULT_STEPS, trials, 2024, DEFAULT_T);
    cfg.window = DEFAULT_WINDOW;
    cfg.threads = threads;
    cfg.estimators = default_comparison_estimators()?;
    let report = run_monte_carlo(&cfg)?;
    let kf = &report.estimators[..grid.len()];
    let bias: Vec<f64> = kf.iter().map(|r| r.mean_bias_sq).collect();
    let var: Vec<f64> = kf.iter().map(|r| r.mean_var).collect();
    let (vb, vv) = (order_violations(&bias, false), order_violations(&var, true));
    let best_kf = kf.iter().map(|r| r.perf_loss).fold(f64::INFINITY, f64::min);
    let slack = statistical_slack(trials);
    let limit = best_kf * (1.0 + slack);
    let mkc = report.get("mkckfdob").map_or(f64::NAN, |r| r.perf_loss);
    let imm = report.get("immkfdob").map_or(f64::NAN, |r| r.perf_loss);
    let failures: usize = report.estimators.iter().map(|r| r.failures).sum();
    Ok((
        PropertyResult::new(
            "bias-variance trade-off across the eta grid",
            vb <= 1 && vv <= 1 && failures == 0,
            format!("bias^2 inversions = {vb}, variance inversions = {vv} (max 1 each), K = {trials}"),
        ),
        PropertyResult::new(
            "MKCKF-DOB and IMMKF-DOB beat the best KF-DOB",
            mkc < limit && imm < limit && failures == 0,
            format!("MKC {mkc:.4}, IMM {imm:.4}, best KF-DOB {best_kf:.4} (slack {:.1}%)", slack * 100.0),
        ),
    ))
}

/// Runs every property; an `Err` means a check could not be evaluated.
pub fn run_verify(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut out = vec![check_batch_equivalence(opts.fault)?, check_sise_input_gain()?];
    let (gain, info) = check_kf_identities(opts.fault)?;
    out.push(gain);
    out.push(info);
    out.push(check_covariance_orderings()?);
    out.push(check_gap_closed_form()?);
    out.push(check_infinite_rate()?);
    out.push(check_family_identity()?);
    out.push(check_reductions()?);
    let (trade, remedies) = check_monte_carlo(opts.trials, opts.threads)?;
    out.push(trade);
    out.push(remedies);
    Ok(out)
}
