use doblab::estimators::{
    immkf_dob_step, kf_dob_partitioned_step, kf_dob_prior, kf_dob_step, kf_step_detailed, mkckf_dob_step_inspect,
    sise_step, EstimatorKind, ImmState, MkcConfig, NkfState, PartitionedState, SiseState,
};
use doblab::harness::{band_coverage, constant_steps, run_monte_carlo, MonteCarloConfig, NamedEstimator};
use doblab::linalg::{max_asymmetry, min_eigenvalue, psd_gap};
use doblab::scenario::{
    default_tracking_system, simulate_truth, DisturbanceProfile, TruthModel, DEFAULT_D_STAR, DEFAULT_QX, DEFAULT_R,
    DEFAULT_T, DEFAULT_WINDOW,
};
use doblab::verify::{default_comparison_estimators, default_eta_grid, random_psd, random_state_model};
use doblab::{GaussianBelief, LinearSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tracking() -> LinearSystem {
    default_tracking_system(DEFAULT_T, DEFAULT_QX, DEFAULT_R).unwrap()
}

fn d_star() -> DMatrix<f64> {
    DMatrix::identity(1, 1) * DEFAULT_D_STAR
}

fn measurements(seed: u64, steps: usize) -> Vec<DVector<f64>> {
    let truth = TruthModel::from_system(&tracking());
    simulate_truth(&truth, &DisturbanceProfile::default_profile(), steps, seed, DEFAULT_T)
        .unwrap()
        .measurements
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joseph_posterior_is_symmetric_psd(seed in any::<u64>(), n in 1usize..=4, m_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 1 + (m_frac * (n as f64 - 1.0)).round() as usize;
        let model = random_state_model(&mut rng, n, m);
        let mut belief = GaussianBelief::new(DVector::zeros(n), random_psd(&mut rng, n, 0.5, 0.0)).unwrap();
        for _ in 0..20 {
            let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
            let upd = kf_step_detailed(&belief, &model.phi, &model.h, &model.q, &model.r, &y).unwrap();
            prop_assert!(max_asymmetry(&upd.posterior.cov) == 0.0);
            prop_assert!(min_eigenvalue(&upd.posterior.cov) >= -1e-12);
            prop_assert!(psd_gap(&upd.prior.cov, &upd.posterior.cov) >= -1e-10);
            belief = upd.posterior;
        }
    }

    #[test]
    fn partitioned_matches_augmented(seed in 0u64..1000, log_eta in 0.0f64..20.0) {
        let sys = tracking();
        let d = d_star() * log_eta.exp();
        let truth = TruthModel::from_system(&sys);
        let mut joint = kf_dob_prior(&truth.x0, &d);
        let mut part = PartitionedState::from_belief(&joint, 1);
        let mut worst = 0.0_f64;
        for y in measurements(seed, 50) {
            joint = kf_dob_step(&joint, &sys, &d, &y).unwrap().belief;
            part = kf_dob_partitioned_step(&part, &sys, &d, &y).unwrap();
            let b = part.to_belief();
            worst = worst.max((&b.mean - &joint.mean).amax()).max((&b.cov - &joint.cov).amax() / joint.cov.amax());
        }
        prop_assert!(worst <= 1e-9, "{}", worst);
    }

    #[test]
    fn mkc_iterations_inflate_covariances(seed in 0u64..1000, sigma in 0.2f64..5.0) {
        let sys = tracking();
        let d = d_star();
        let cfg = MkcConfig::uniform(sigma, 1, 2, 2).unwrap();
        let mut belief = kf_dob_prior(&TruthModel::from_system(&sys).x0, &d);
        for y in measurements(seed, 30) {
            let out = mkckf_dob_step_inspect(&belief, &sys, &d, &y, &cfg).unwrap();
            for it in &out.trace {
                let scale = out.prior_cov.amax();
                prop_assert!(psd_gap(&it.p_tilde, &out.prior_cov) >= -1e-9 * scale);
                prop_assert!(psd_gap(&it.r_tilde, sys.r()) >= -1e-12);
            }
            belief = out.estimate.belief;
        }
    }

    #[test]
    fn imm_probabilities_stay_in_simplex(seed in 0u64..1000, stay in 0.5f64..0.999, log_gap in 0.0f64..10.0) {
        let sys = tracking();
        let d_list = [d_star(), d_star() * log_gap.exp(), d_star() * (2.0 * log_gap).exp()];
        let leave = (1.0 - stay) / 2.0;
        let transition = DMatrix::from_fn(3, 3, |i, j| if i == j { stay } else { leave });
        let prior = kf_dob_prior(&TruthModel::from_system(&sys).x0, &d_list[0]);
        let mut state = ImmState::uniform(prior, transition).unwrap();
        for y in measurements(seed, 100) {
            let out = immkf_dob_step(&state, &sys, &d_list, sys.q(), sys.r(), &y).unwrap();
            let mu = out.state.mode_probs();
            prop_assert!((mu.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(mu.iter().all(|v| *v >= 0.0 && *v <= 1.0));
            state = out.state;
        }
    }
}

#[test]
fn imm_with_identical_models_equals_kf_dob() {
    let sys = tracking();
    let d = d_star() * 2f64.exp();
    let prior = kf_dob_prior(&TruthModel::from_system(&sys).x0, &d);
    let mut kf = prior.clone();
    let mut state = ImmState::uniform(prior, DMatrix::from_element(2, 2, 0.5)).unwrap();
    let d_list = [d.clone(), d.clone()];
    for y in measurements(4, 300) {
        let k = kf_dob_step(&kf, &sys, &d, &y).unwrap();
        let out = immkf_dob_step(&state, &sys, &d_list, sys.q(), sys.r(), &y).unwrap();
        assert!((&out.fused.belief.mean - &k.belief.mean).amax() <= 1e-9);
        assert!((&out.fused.belief.cov - &k.belief.cov).amax() <= 1e-9);
        kf = k.belief;
        state = out.state;
    }
}

#[test]
fn kf_dob_and_nkf_dob_approach_sise() {
    let sys = tracking();
    let x0 = TruthModel::from_system(&sys).x0;
    let d = d_star() * 20f64.exp();
    let mut kf = kf_dob_prior(&x0, &d);
    let mut nkf = NkfState::new(x0.clone(), 1);
    let mut sise = SiseState::new(x0, 1);
    let (mut d_gap, mut x_gap) = (0.0_f64, 0.0_f64);
    for (k, y) in measurements(12, 2000).iter().enumerate() {
        kf = kf_dob_step(&kf, &sys, &d, y).unwrap().belief;
        nkf = doblab::estimators::nkf_dob_step(&nkf, &sys, &d, y).unwrap();
        sise = sise_step(&sise, &sys, y).unwrap();
        if k >= 2 {
            d_gap = d_gap.max((kf.mean[0] - sise.last_d[0]).abs()).max((nkf.d[0] - sise.last_d[0]).abs());
            let x_kf = kf.mean.rows(1, 2).into_owned();
            x_gap = x_gap.max((&x_kf - &sise.x_belief.mean).amax()).max((&nkf.x_belief.mean - &sise.x_belief.mean).amax());
        }
    }
    assert!(d_gap <= 1e-4, "{d_gap}");
    assert!(x_gap <= 1e-4, "{x_gap}");
}

/// Shared 100-trial run over the default scenario with every estimator family.
fn family_report() -> doblab::harness::MonteCarloReport {
    let truth = TruthModel::from_system(&tracking());
    let mut cfg = MonteCarloConfig::new(truth, DisturbanceProfile::default_profile(), 2000, 100, 4242, DEFAULT_T);
    cfg.window = DEFAULT_WINDOW;
    cfg.estimators = default_comparison_estimators().unwrap();
    cfg.estimators.push(NamedEstimator::new("sise", EstimatorKind::Sise));
    cfg.estimators.push(NamedEstimator::new("nkfdob", EstimatorKind::NkfDob { d: d_star() * 20f64.exp() }));
    run_monte_carlo(&cfg).unwrap()
}

#[test]
fn monte_carlo_statistics() {
    let report = family_report();
    let profile = DisturbanceProfile::default_profile();

    // 3-sigma bands cover the per-trial errors away from jump steps.
    let steps = constant_steps(&profile, report.steps);
    for est in &report.estimators {
        let coverage = band_coverage(est, &steps);
        assert!(coverage >= 0.95, "{}: {coverage}", est.name);
        assert_eq!(est.failures, 0);
        assert!((est.perf_loss - est.mean_bias_sq - est.mean_var).abs() <= 1e-12);
    }

    // Steady-state error variance over the last 100 steps before each jump
    // grows with eta.
    let starts: Vec<usize> = profile.segments().iter().map(|s| s.0).filter(|s| *s > 0).collect();
    let settled: Vec<usize> = starts.iter().flat_map(|s| s - 100..*s).collect();
    let grid = default_eta_grid();
    let variances: Vec<f64> = report.estimators[..grid.len()]
        .iter()
        .map(|r| settled.iter().map(|k| r.std[k - 1].powi(2)).sum::<f64>() / settled.len() as f64)
        .collect();
    for w in variances.windows(2) {
        assert!(w[1] >= w[0], "{variances:?}");
    }
}
