//! NKF-DOB: the disturbance enters through the process noise without its own
//! random-walk state, so each step estimates the previous-step input.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{self, check_len, check_square};
use crate::model::{GaussianBelief, LinearSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct NkfState {
    pub x_belief: GaussianBelief,
    /// Estimate of `d_{k-1}` given measurements up to `k`.
    pub d: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

impl NkfState {
    pub fn new(x_belief: GaussianBelief, p: usize) -> Self {
        Self {
            x_belief,
            d: DVector::zeros(p),
            d_cov: DMatrix::zeros(p, p),
        }
    }
}

/// Intermediate quantities of one NKF-DOB step.
#[derive(Debug, Clone)]
pub struct NkfUpdate {
    pub state: NkfState,
    /// `M_k = D G' H' S^-1`.
    pub m_gain: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

pub fn nkf_dob_step_detailed(state: &NkfState, sys: &LinearSystem, d: &DMatrix<f64>, y: &DVector<f64>) -> Result<NkfUpdate> {
    let (n, p, m) = (sys.n(), sys.p(), sys.m());
    state.x_belief.check_dim(n, "NKF-DOB belief")?;
    check_square(d, p, "D")?;
    check_len(y, m, "measurement")?;
    let (f, g, h, q, r) = (sys.f(), sys.g(), sys.h(), sys.q(), sys.r());

    let x_pred = f * &state.x_belief.mean;
    let p_pred = linalg::symmetrize(&(g * d * g.transpose() + f * &state.x_belief.cov * f.transpose() + q));
    let s = linalg::symmetrize(&(h * &p_pred * h.transpose() + r));
    let k = linalg::gain(&p_pred, h, &s)?;
    // M = D G' H' S^-1 = (S^-1 H G D)'
    let m_gain = linalg::spd_solve(&s, &(h * g * d))?.transpose();

    let innovation = y - h * &x_pred;
    let x = &x_pred + &k * &innovation;
    let cov = linalg::joseph(&p_pred, &k, h, r);
    let d_hat = &m_gain * &innovation;
    let d_cov = linalg::symmetrize(&((DMatrix::identity(p, p) - &m_gain * h * g) * d));
    Ok(NkfUpdate {
        state: NkfState {
            x_belief: GaussianBelief::from_parts(x, cov),
            d: d_hat,
            d_cov,
        },
        m_gain,
        gain: k,
    })
}

/// One NKF-DOB step.
pub fn nkf_dob_step(state: &NkfState, sys: &LinearSystem, d: &DMatrix<f64>, y: &DVector<f64>) -> Result<NkfState> {
    Ok(nkf_dob_step_detailed(state, sys, d, y)?.state)
}
