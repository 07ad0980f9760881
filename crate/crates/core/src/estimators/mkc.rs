//! Multi-kernel correntropy KF-DOB: a fixed-point iteration that inflates the
//! prediction and measurement covariances channel by channel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kfdob::DobEstimate;
use crate::error::{DobError, Result};
use crate::linalg::{self, check_len};
use crate::model::{augment, AugmentedModel, GaussianBelief, LinearSystem};

/// Kernel weights are floored here before `M~` is inverted.
pub const KERNEL_FLOOR: f64 = 1e-12;

pub const DEFAULT_WIDE_BANDWIDTH: f64 = 1e8;

/// `exp(-e^2 / (2 sigma^2))`.
pub fn gaussian_kernel(e: f64, sigma: f64) -> f64 {
    (-(e * e) / (2.0 * sigma * sigma)).exp()
}

/// Single-sample MKC loss `sum_i sigma_i^2 (1 - G(e_i))`.
pub fn mkc_loss(errors: &DVector<f64>, sigmas: &DVector<f64>) -> Result<f64> {
    check_len(sigmas, errors.len(), "kernel bandwidths")?;
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(DobError::InvalidParameter("kernel bandwidths must be positive".into()));
    }
    Ok(errors
        .iter()
        .zip(sigmas.iter())
        .map(|(&e, &s)| {
            // 1 - exp(-u) via exp_m1 keeps the wide-kernel limit accurate
            let u = e * e / (2.0 * s * s);
            s * s * -(-u).exp_m1()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkcConfig {
    pub sigma_d: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_r: Vec<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
}

impl MkcConfig {
    /// Disturbance bandwidths `sigma_d` with wide state and measurement kernels.
    pub fn new(sigma_d: Vec<f64>, n: usize, m: usize) -> Result<Self> {
        let cfg = Self {
            sigma_d,
            sigma_x: vec![DEFAULT_WIDE_BANDWIDTH; n],
            sigma_r: vec![DEFAULT_WIDE_BANDWIDTH; m],
            epsilon: 1e-6,
            max_iters: 50,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every bandwidth set to `sigma`.
    pub fn uniform(sigma: f64, p: usize, n: usize, m: usize) -> Result<Self> {
        let mut cfg = Self::new(vec![sigma; p], n, m)?;
        cfg.sigma_x = vec![sigma; n];
        cfg.sigma_r = vec![sigma; m];
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.sigma_d.iter().chain(&self.sigma_x).chain(&self.sigma_r);
        for s in all {
            if !(s.is_finite() && *s > 0.0) {
                return Err(DobError::InvalidParameter(format!("kernel bandwidth must be positive, got {s}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(DobError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(DobError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.sigma_d.is_empty() || self.sigma_x.is_empty() || self.sigma_r.is_empty() {
            return Err(DobError::InvalidParameter("kernel bandwidth lists must be nonempty".into()));
        }
        Ok(())
    }

    fn check_dims(&self, p: usize, n: usize, m: usize) -> Result<()> {
        self.validate()?;
        for (what, len, want) in [
            ("sigma_d", self.sigma_d.len(), p),
            ("sigma_x", self.sigma_x.len(), n),
            ("sigma_r", self.sigma_r.len(), m),
        ] {
            if len != want {
                return Err(DobError::Dimension {
                    what: what.into(),
                    expected: (want, 1),
                    found: (len, 1),
                });
            }
        }
        Ok(())
    }
}

/// Inflated covariances used at one fixed-point iteration.
#[derive(Debug, Clone)]
pub struct MkcIteration {
    pub p_tilde: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MkcOutcome {
    pub estimate: DobEstimate,
    pub iterations: usize,
    pub converged: bool,
    /// The true prediction covariance `P_{k|k-1}`.
    pub prior_cov: DMatrix<f64>,
    pub trace: Vec<MkcIteration>,
}

fn kernel_weights(e: &DVector<f64>, sigmas: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        e.len(),
        e.iter().zip(sigmas).map(|(&v, &s)| gaussian_kernel(v, s).max(KERNEL_FLOOR)),
    )
}

/// `B diag(1/w) B'`.
fn inflate(b: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= w[j];
    }
    linalg::symmetrize(&(scaled * b.transpose()))
}

pub(crate) fn mkc_step_with_model(
    belief: &GaussianBelief,
    model: &AugmentedModel,
    y: &DVector<f64>,
    cfg: &MkcConfig,
    keep_trace: bool,
) -> Result<MkcOutcome> {
    let (p, n, m) = (model.disturbance_dim(), model.state_dim(), y.len());
    cfg.check_dims(p, n, model.r().nrows())?;
    belief.check_dim(p + n, "MKCKF-DOB belief")?;
    check_len(y, model.r().nrows(), "measurement")?;
    let (phi, h, q, r) = (model.phi(), model.h(), model.q(), model.r());

    let x_pred = phi * &belief.mean;
    let p_pred = linalg::symmetrize(&(phi * &belief.cov * phi.transpose() + q));
    let b_p = linalg::cholesky_factor(&p_pred)?;
    let b_r = linalg::cholesky_factor(r)?;
    let sigma_p: Vec<f64> = cfg.sigma_d.iter().chain(&cfg.sigma_x).copied().collect();

    let innovation = y - h * &x_pred;
    let mut x_t = x_pred.clone();
    let mut gain = DMatrix::zeros(p + n, m);
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = Vec::new();
    while iterations < cfg.max_iters {
        iterations += 1;
        let e_p = b_p
            .solve_lower_triangular(&(&x_pred - &x_t))
            .ok_or(DobError::Factorization { min_eigenvalue: 0.0 })?;
        let e_r = b_r
            .solve_lower_triangular(&(y - h * &x_t))
            .ok_or(DobError::Factorization { min_eigenvalue: 0.0 })?;
        let p_tilde = inflate(&b_p, &kernel_weights(&e_p, &sigma_p));
        let r_tilde = inflate(&b_r, &kernel_weights(&e_r, &cfg.sigma_r));
        let s = linalg::symmetrize(&(h * &p_tilde * h.transpose() + &r_tilde));
        gain = linalg::gain(&p_tilde, h, &s)?;
        if keep_trace {
            trace.push(MkcIteration { p_tilde, r_tilde });
        }
        let next = &x_pred + &gain * &innovation;
        let step = (&next - &x_t).norm();
        let scale = next.norm();
        x_t = next;
        if step == 0.0 || step <= cfg.epsilon * scale {
            converged = true;
            break;
        }
    }

    let cov = linalg::joseph(&p_pred, &gain, h, r);
    Ok(MkcOutcome {
        estimate: DobEstimate::from_belief(GaussianBelief::from_parts(x_t, cov), p),
        iterations,
        converged,
        prior_cov: p_pred,
        trace,
    })
}

/// One MKCKF-DOB step with iteration count and convergence flag.
pub fn mkckf_dob_step_inspect(
    belief: &GaussianBelief,
    sys: &LinearSystem,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &MkcConfig,
) -> Result<MkcOutcome> {
    mkc_step_with_model(belief, &augment(sys, d)?, y, cfg, true)
}

/// One MKCKF-DOB step. Returns the estimate and the number of fixed-point
/// iterations used; hitting `max_iters` is not an error.
pub fn mkckf_dob_step(
    belief: &GaussianBelief,
    sys: &LinearSystem,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &MkcConfig,
) -> Result<(DobEstimate, usize)> {
    let out = mkc_step_with_model(belief, &augment(sys, d)?, y, cfg, false)?;
    Ok((out.estimate, out.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(0.0, 0.3), 1.0);
        assert!((gaussian_kernel(2.0, 2.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(3.0, 1e8) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_values() {
        let l = mkc_loss(&DVector::zeros(3), &DVector::from_element(3, 1.0)).unwrap();
        assert_eq!(l, 0.0);
        let l = mkc_loss(&DVector::from_element(1, 1.0), &DVector::from_element(1, 1.0)).unwrap();
        assert!((l - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        let l = mkc_loss(&DVector::from_vec(vec![1.0, 2.0]), &DVector::from_element(2, 1e8)).unwrap();
        assert!((l - 2.5).abs() < 1e-6);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(MkcConfig::new(vec![0.0], 2, 2).is_err());
        let mut cfg = MkcConfig::new(vec![3.0], 2, 2).unwrap();
        cfg.epsilon = -1.0;
        assert!(cfg.validate().is_err());
        cfg.epsilon = 1e-6;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_innovation_converges_immediately() {
        let t = 0.1;
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[t * t / 2.0, t]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 1e-4,
            DMatrix::identity(2, 2) * 1e-2,
        )
        .unwrap();
        let d = DMatrix::identity(1, 1) * 1e-4;
        let belief = GaussianBelief::new(DVector::from_vec(vec![1.0, 0.5, -0.5]), DMatrix::identity(3, 3) * 0.1).unwrap();
        let model = augment(&sys, &d).unwrap();
        let pred = model.phi() * &belief.mean;
        let y = model.h() * &pred;
        let cfg = MkcConfig::new(vec![3.0], 2, 2).unwrap();
        let out = mkckf_dob_step_inspect(&belief, &sys, &d, &y, &cfg).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert!((out.estimate.belief.mean - pred).amax() < 1e-15);
    }
}
