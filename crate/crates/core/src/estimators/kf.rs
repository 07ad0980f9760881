use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{self, check_len, check_shape, check_square};
use crate::model::GaussianBelief;

/// Everything produced by one predict/correct cycle.
#[derive(Debug, Clone)]
pub struct KfUpdate {
    pub prior: GaussianBelief,
    pub posterior: GaussianBelief,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// Posterior covariance form. Only `Joseph` is used by the public API; the
/// other variant exists so the verification suite can inject a known fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CovarianceForm {
    Joseph,
    JosephWithoutNoise,
}

pub fn kf_predict(belief: &GaussianBelief, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<GaussianBelief> {
    let dim = belief.dim();
    check_square(phi, dim, "Phi")?;
    check_square(q, dim, "Q")?;
    check_square(&belief.cov, dim, "belief covariance")?;
    let mean = phi * &belief.mean;
    let cov = linalg::symmetrize(&(phi * &belief.cov * phi.transpose() + q));
    Ok(GaussianBelief::from_parts(mean, cov))
}

pub(crate) fn kf_correct_with(
    prior: GaussianBelief,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    form: CovarianceForm,
) -> Result<KfUpdate> {
    let m = y.len();
    check_shape(h, (m, prior.dim()), "H")?;
    check_square(r, m, "R")?;
    check_len(y, m, "measurement")?;

    let s = linalg::symmetrize(&(h * &prior.cov * h.transpose() + r));
    let k = linalg::gain(&prior.cov, h, &s)?;
    let innovation = y - h * &prior.mean;
    let mean = &prior.mean + &k * &innovation;
    let cov = match form {
        CovarianceForm::Joseph => linalg::joseph(&prior.cov, &k, h, r),
        CovarianceForm::JosephWithoutNoise => {
            let zero = DMatrix::zeros(m, m);
            linalg::joseph(&prior.cov, &k, h, &zero)
        }
    };
    Ok(KfUpdate {
        posterior: GaussianBelief::from_parts(mean, cov),
        prior,
        gain: k,
        innovation,
        innovation_cov: s,
    })
}

/// Measurement update of a predicted belief.
pub fn kf_correct(prior: GaussianBelief, h: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>) -> Result<KfUpdate> {
    kf_correct_with(prior, h, r, y, CovarianceForm::Joseph)
}

pub(crate) fn kf_step_with(
    belief: &GaussianBelief,
    phi: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    form: CovarianceForm,
) -> Result<KfUpdate> {
    let prior = kf_predict(belief, phi, q)?;
    kf_correct_with(prior, h, r, y, form)
}

/// One Kalman predict/correct cycle returning all intermediate quantities.
pub fn kf_step_detailed(
    belief: &GaussianBelief,
    phi: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<KfUpdate> {
    kf_step_with(belief, phi, h, q, r, y, CovarianceForm::Joseph)
}

/// One Kalman predict/correct cycle with a Joseph-form covariance update.
pub fn kf_step(
    belief: &GaussianBelief,
    phi: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    Ok(kf_step_detailed(belief, phi, h, q, r, y)?.posterior)
}
