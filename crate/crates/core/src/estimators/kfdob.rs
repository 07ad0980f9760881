//! KF-DOB: the disturbance augmented into the state under the nominal
//! random-walk model `d_k = d_{k-1} + w_{d,k}`.

use nalgebra::{DMatrix, DVector};

use super::kf::{kf_step_detailed, KfUpdate};
use crate::error::Result;
use crate::linalg::{self, check_len, check_shape, check_square};
use crate::model::{augment, AugmentedModel, GaussianBelief, LinearSystem};

/// Posterior over `[d; x]` plus its leading disturbance block.
#[derive(Debug, Clone)]
pub struct DobEstimate {
    pub belief: GaussianBelief,
    pub d_hat: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

impl DobEstimate {
    pub(crate) fn from_belief(belief: GaussianBelief, p: usize) -> Self {
        let d_hat = belief.mean.rows(0, p).into_owned();
        let d_cov = belief.cov.view((0, 0), (p, p)).into_owned();
        Self { belief, d_hat, d_cov }
    }

    /// Marginal belief over the plant state `x`.
    pub fn state(&self) -> GaussianBelief {
        let p = self.d_hat.len();
        self.belief.marginal(p, self.belief.dim() - p)
    }
}

/// Covariance of `d_{k-1}` given measurements up to `k`.
///
/// The KF-DOB posterior block is `cov(d_k | y_1..k)`, and `d_k = d_{k-1} + w_{d,k}`
/// with `w_{d,k}` independent of every measurement up to `k`, so the lagged
/// covariance is the block minus `D`. This is the quantity SISE and NKF-DOB report.
pub fn lagged_disturbance_cov(d_cov: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(d_cov - d))
}

/// Initial KF-DOB belief: disturbance mean zero with covariance `D`, independent of `x`.
pub fn kf_dob_prior(x: &GaussianBelief, d: &DMatrix<f64>) -> GaussianBelief {
    let dist = GaussianBelief::from_parts(DVector::zeros(d.nrows()), d.clone());
    GaussianBelief::stack(&dist, x)
}

/// One KF-DOB step against a prebuilt augmented model.
pub fn kf_dob_step_with_model(
    belief: &GaussianBelief,
    model: &AugmentedModel,
    y: &DVector<f64>,
) -> Result<(DobEstimate, KfUpdate)> {
    belief.check_dim(model.dim(), "KF-DOB belief")?;
    let upd = kf_step_detailed(belief, model.phi(), model.h(), model.q(), model.r(), y)?;
    Ok((DobEstimate::from_belief(upd.posterior.clone(), model.disturbance_dim()), upd))
}

/// One KF-DOB step: the Kalman recursion applied to `augment(sys, d)`.
pub fn kf_dob_step(
    belief: &GaussianBelief,
    sys: &LinearSystem,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DobEstimate> {
    let model = augment(sys, d)?;
    Ok(kf_dob_step_with_model(belief, &model, y)?.0)
}

/// KF-DOB state held block-wise: means of `d` and `x` with
/// `P^dd`, `P^dx` and `P^xx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedState {
    pub x: DVector<f64>,
    pub d: DVector<f64>,
    pub p_dd: DMatrix<f64>,
    pub p_dx: DMatrix<f64>,
    pub p_xx: DMatrix<f64>,
}

impl PartitionedState {
    pub fn from_belief(belief: &GaussianBelief, p: usize) -> Self {
        let n = belief.dim() - p;
        Self {
            d: belief.mean.rows(0, p).into_owned(),
            x: belief.mean.rows(p, n).into_owned(),
            p_dd: belief.cov.view((0, 0), (p, p)).into_owned(),
            p_dx: belief.cov.view((0, p), (p, n)).into_owned(),
            p_xx: belief.cov.view((p, p), (n, n)).into_owned(),
        }
    }

    pub fn to_belief(&self) -> GaussianBelief {
        let (p, n) = (self.d.len(), self.x.len());
        let mut mean = DVector::zeros(p + n);
        mean.rows_mut(0, p).copy_from(&self.d);
        mean.rows_mut(p, n).copy_from(&self.x);
        let mut cov = DMatrix::zeros(p + n, p + n);
        cov.view_mut((0, 0), (p, p)).copy_from(&self.p_dd);
        cov.view_mut((0, p), (p, n)).copy_from(&self.p_dx);
        cov.view_mut((p, 0), (n, p)).copy_from(&self.p_dx.transpose());
        cov.view_mut((p, p), (n, n)).copy_from(&self.p_xx);
        GaussianBelief::from_parts(mean, cov)
    }
}

/// KF-DOB written block-wise (cross-covariance propagated explicitly).
pub fn kf_dob_partitioned_step(
    state: &PartitionedState,
    sys: &LinearSystem,
    d_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<PartitionedState> {
    let (n, p, m) = (sys.n(), sys.p(), sys.m());
    check_len(&state.x, n, "x mean")?;
    check_len(&state.d, p, "d mean")?;
    check_square(&state.p_dd, p, "P^dd")?;
    check_shape(&state.p_dx, (p, n), "P^dx")?;
    check_square(&state.p_xx, n, "P^xx")?;
    check_square(d_cov, p, "D")?;
    check_len(y, m, "measurement")?;

    let (f, g, h, q, r) = (sys.f(), sys.g(), sys.h(), sys.q(), sys.r());
    let p_xd = state.p_dx.transpose();

    let p_dd_pred = &state.p_dd + d_cov;
    let p_dx_pred = &state.p_dd * g.transpose() + &state.p_dx * f.transpose();
    let p_xx_pred = linalg::symmetrize(
        &(g * &state.p_dd * g.transpose()
            + f * &p_xd * g.transpose()
            + g * &state.p_dx * f.transpose()
            + f * &state.p_xx * f.transpose()
            + q),
    );

    let s = linalg::symmetrize(&(h * &p_xx_pred * h.transpose() + r));
    // S^-1 H P^xx_pred and S^-1 H P^xd_pred
    let s_inv_hpxx = linalg::spd_solve(&s, &(h * &p_xx_pred))?;
    let s_inv_hpxd = linalg::spd_solve(&s, &(h * p_dx_pred.transpose()))?;
    let k_x = s_inv_hpxx.transpose();
    let m_d = s_inv_hpxd.transpose();

    let p_xx = linalg::symmetrize(&((DMatrix::identity(n, n) - &k_x * h) * &p_xx_pred));
    let p_dd = linalg::symmetrize(&(&p_dd_pred - &p_dx_pred * h.transpose() * &s_inv_hpxd));
    let p_dx = &p_dx_pred - &p_dx_pred * h.transpose() * &s_inv_hpxx;

    let predicted_x = f * &state.x + g * &state.d;
    let innovation = y - h * &predicted_x;
    Ok(PartitionedState {
        x: predicted_x + &k_x * &innovation,
        d: &state.d + &m_d * &innovation,
        p_dd,
        p_dx,
        p_xx,
    })
}
