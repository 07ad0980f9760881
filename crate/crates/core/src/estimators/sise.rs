//! Simultaneous input and state estimation (no disturbance model).

use nalgebra::{DMatrix, DVector};

use crate::error::{DobError, Result};
use crate::linalg::{self, check_len};
use crate::model::{GaussianBelief, LinearSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct SiseState {
    pub x_belief: GaussianBelief,
    /// Estimate of `d_{k-1}`.
    pub last_d: DVector<f64>,
    /// `P^dd_{k|k}`.
    pub last_d_cov: DMatrix<f64>,
}

impl SiseState {
    pub fn new(x_belief: GaussianBelief, p: usize) -> Self {
        Self {
            x_belief,
            last_d: DVector::zeros(p),
            last_d_cov: DMatrix::zeros(p, p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SiseUpdate {
    pub state: SiseState,
    /// `M*_k`, the input-estimation gain.
    pub m_star: DMatrix<f64>,
    /// `K*_k`, the state-correction gain.
    pub k_star: DMatrix<f64>,
}

pub fn sise_step_detailed(state: &SiseState, sys: &LinearSystem, y: &DVector<f64>) -> Result<SiseUpdate> {
    let (n, m) = (sys.n(), sys.m());
    state.x_belief.check_dim(n, "SISE belief")?;
    check_len(y, m, "measurement")?;
    let (f, g, h, q, r) = (sys.f(), sys.g(), sys.h(), sys.q(), sys.r());

    // time update
    let x_pred = f * &state.x_belief.mean;
    let p_pred = linalg::symmetrize(&(f * &state.x_belief.cov * f.transpose() + q));

    // input estimation
    let r_tilde = linalg::symmetrize(&(h * &p_pred * h.transpose() + r));
    // M* = (HG' R~^-1 HG)^-1 HG' R~^-1 through a QR factorization of the
    // whitened HG, which keeps M* HG = I accurate when the Gram matrix is
    // poorly conditioned.
    let hg = h * g;
    let l = linalg::cholesky_factor(&r_tilde)?;
    let unobservable = || DobError::DisturbanceUnobservable {
        condition: linalg::condition_estimate(&(hg.transpose() * &hg)),
    };
    let white_hg = l.solve_lower_triangular(&hg).ok_or_else(unobservable)?;
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(m, m)).ok_or_else(unobservable)?;
    let qr = white_hg.qr();
    let upper = qr.r();
    let diag_max = upper.diagonal().amax();
    if !(diag_max > 0.0) || upper.diagonal().iter().any(|v| v.abs() <= diag_max * f64::EPSILON * m as f64) {
        return Err(unobservable());
    }
    let upper_inv = upper
        .solve_upper_triangular(&DMatrix::identity(upper.nrows(), upper.nrows()))
        .ok_or_else(unobservable)?;
    let m_star = &upper_inv * qr.q().transpose() * &l_inv;
    let d_cov = linalg::symmetrize(&(&upper_inv * upper_inv.transpose()));
    let d_hat = &m_star * (y - h * &x_pred);

    // state correction
    let x_star = &x_pred + g * &d_hat;
    let k_star = linalg::gain(&p_pred, h, &r_tilde)?;
    let x = &x_star + &k_star * (y - h * &x_star);

    let eye = DMatrix::<f64>::identity(n, n);
    let gm = g * &m_star;
    let a = &eye - &gm * h;
    let inner = &a * &p_pred * a.transpose() + &gm * r * gm.transpose();
    let cross = &k_star * r * gm.transpose();
    let cov = linalg::symmetrize(&((&eye - &k_star * h) * inner + &cross));

    Ok(SiseUpdate {
        state: SiseState {
            x_belief: GaussianBelief::from_parts(x, cov),
            last_d: d_hat,
            last_d_cov: d_cov,
        },
        m_star,
        k_star,
    })
}

/// One SISE step. `last_d` of the result estimates the input that drove the
/// transition into the current measurement.
pub fn sise_step(state: &SiseState, sys: &LinearSystem, y: &DVector<f64>) -> Result<SiseState> {
    Ok(sise_step_detailed(state, sys, y)?.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_hand_values() {
        let sys = LinearSystem::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let st = SiseState::new(GaussianBelief::new(DVector::from_element(1, 0.5), scalar(1.0)).unwrap(), 1);
        let upd = sise_step_detailed(&st, &sys, &DVector::from_element(1, 3.0)).unwrap();
        assert!((upd.m_star[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((upd.state.last_d[0] - 2.5).abs() < 1e-15);
        assert!((upd.state.last_d_cov[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn input_gain_inverts_hg() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(2..=4);
            let p = rng.random_range(1..=n.min(2));
            let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let g = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            let h = DMatrix::identity(n, n);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &a * a.transpose() * 0.1;
            let r = DMatrix::identity(n, n) * rng.random_range(0.1..2.0);
            let sys = LinearSystem::new(f, g, h, q, r).unwrap();
            let belief = GaussianBelief::new(DVector::zeros(n), DMatrix::identity(n, n)).unwrap();
            let upd = sise_step_detailed(&SiseState::new(belief, p), &sys, &DVector::zeros(n)).unwrap();
            let mhg = &upd.m_star * sys.h() * sys.g();
            assert!((mhg - DMatrix::identity(p, p)).amax() <= 1e-12);
        }
    }
}
