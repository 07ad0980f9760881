//! Batch-form Kalman estimators and the covariance-mismatch analysis used as
//! independent references for the recursive filters.
//!
//! Everything here works on a generic [`StateSpaceModel`] `(Phi, H, Q, R)`;
//! pass `sys.state_model()` for the plant or `augment(..).state_space()` for
//! the KF-DOB model.

use nalgebra::{DMatrix, DVector};

use crate::error::{DobError, Result};
use crate::linalg::{self, check_len, check_square};
use crate::model::StateSpaceModel;

pub const MAX_BATCH_STEPS: usize = 200;
pub const MAX_BATCH_DIM: usize = 2000;

/// Riccati iterations used to reach the steady-state gain.
pub const STEADY_STATE_ITERS: usize = 500;

/// Stacked model `X = Phi_1k x0 + G_1k W`, `Y = H_1k x0 + D_1k W + V`.
#[derive(Debug, Clone)]
pub struct ExtendedModel {
    pub steps: usize,
    pub phi_1k: DMatrix<f64>,
    pub g_1k: DMatrix<f64>,
    pub h_bar: DMatrix<f64>,
    pub h_1k: DMatrix<f64>,
    pub d_1k: DMatrix<f64>,
    pub q_1k: DMatrix<f64>,
    pub r_1k: DMatrix<f64>,
}

impl ExtendedModel {
    pub fn new(model: &StateSpaceModel, steps: usize) -> Result<Self> {
        let q = model.dim();
        let m = model.meas_dim();
        if steps == 0 {
            return Err(DobError::InvalidParameter("batch horizon must be at least 1".into()));
        }
        if steps > MAX_BATCH_STEPS || steps * q > MAX_BATCH_DIM || steps * m > MAX_BATCH_DIM {
            return Err(DobError::BatchTooLarge { steps, dim: q });
        }

        // powers[i] = Phi^i
        let mut powers = Vec::with_capacity(steps + 1);
        powers.push(DMatrix::identity(q, q));
        for i in 1..=steps {
            let next = &model.phi * &powers[i - 1];
            powers.push(next);
        }

        let mut phi_1k = DMatrix::zeros(steps * q, q);
        let mut g_1k = DMatrix::zeros(steps * q, steps * q);
        let mut h_bar = DMatrix::zeros(steps * m, steps * q);
        let mut q_1k = DMatrix::zeros(steps * q, steps * q);
        let mut r_1k = DMatrix::zeros(steps * m, steps * m);
        for i in 0..steps {
            phi_1k.view_mut((i * q, 0), (q, q)).copy_from(&powers[i + 1]);
            for j in 0..=i {
                g_1k.view_mut((i * q, j * q), (q, q)).copy_from(&powers[i - j]);
            }
            h_bar.view_mut((i * m, i * q), (m, q)).copy_from(&model.h);
            q_1k.view_mut((i * q, i * q), (q, q)).copy_from(&model.q);
            r_1k.view_mut((i * m, i * m), (m, m)).copy_from(&model.r);
        }
        let h_1k = &h_bar * &phi_1k;
        let d_1k = &h_bar * &g_1k;
        Ok(Self {
            steps,
            phi_1k,
            g_1k,
            h_bar,
            h_1k,
            d_1k,
            q_1k,
            r_1k,
        })
    }

    /// `phi^1_k = Phi^k`, the last block of `Phi_1k`.
    pub fn last_transition(&self) -> DMatrix<f64> {
        let q = self.phi_1k.ncols();
        self.phi_1k.view(((self.steps - 1) * q, 0), (q, q)).into_owned()
    }

    /// `G^{rk}_1k`, the last block row of `G_1k`.
    pub fn last_row(&self) -> DMatrix<f64> {
        let q = self.phi_1k.ncols();
        self.g_1k.view(((self.steps - 1) * q, 0), (q, self.steps * q)).into_owned()
    }
}

fn stack_measurements(ys: &[DVector<f64>], m: usize) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(ys.len() * m);
    for (i, y) in ys.iter().enumerate() {
        check_len(y, m, "measurement")?;
        out.rows_mut(i * m, m).copy_from(y);
    }
    Ok(out)
}

/// Batch gain `H^h = (phi P0 H_1k' + G^rk Q_1k D_1k') (H_1k P0 H_1k' + D_1k Q_1k D_1k' + R_1k)^-1`.
pub fn batch_gain(ext: &ExtendedModel, x0_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let phi_k = ext.last_transition();
    let g_rk = ext.last_row();
    let cross = &phi_k * x0_cov * ext.h_1k.transpose() + &g_rk * &ext.q_1k * ext.d_1k.transpose();
    let gram = linalg::symmetrize(
        &(&ext.h_1k * x0_cov * ext.h_1k.transpose() + &ext.d_1k * &ext.q_1k * ext.d_1k.transpose() + &ext.r_1k),
    );
    let chol = gram.clone().cholesky().ok_or_else(|| DobError::SingularGram {
        condition: linalg::condition_estimate(&gram),
    })?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// Batch estimate of `x_k` from `k` measurements and the prior `N(x0_mean, x0_cov)`.
/// A zero `x0_cov` gives the exact-initial-state estimator.
pub fn batch_kf_estimate(
    model: &StateSpaceModel,
    steps: usize,
    x0_mean: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let q = model.dim();
    check_len(x0_mean, q, "x0 mean")?;
    check_square(x0_cov, q, "x0 covariance")?;
    let x0_cov = linalg::ensure_psd(x0_cov, "x0 covariance")?;
    if ys.len() != steps {
        return Err(DobError::Dimension {
            what: "measurement sequence".into(),
            expected: (steps, 1),
            found: (ys.len(), 1),
        });
    }
    let ext = ExtendedModel::new(model, steps)?;
    let y = stack_measurements(ys, model.meas_dim())?;
    let gain = batch_gain(&ext, &x0_cov)?;
    Ok(&gain * y + (ext.last_transition() - &gain * &ext.h_1k) * x0_mean)
}

/// Riccati recursion from `P_{0|0} = p0`. Returns the gains `K_1..K_k` and
/// the posterior covariances `P_{1|1}..P_{k|k}`.
pub fn riccati(model: &StateSpaceModel, p0: &DMatrix<f64>, steps: usize) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let q = model.dim();
    check_square(p0, q, "P0")?;
    let mut p = p0.clone();
    let mut gains = Vec::with_capacity(steps);
    let mut covs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let pred = linalg::symmetrize(&(&model.phi * &p * model.phi.transpose() + &model.q));
        let s = linalg::symmetrize(&(&model.h * &pred * model.h.transpose() + &model.r));
        let k = linalg::gain(&pred, &model.h, &s)?;
        p = linalg::joseph(&pred, &k, &model.h, &model.r);
        gains.push(k);
        covs.push(p.clone());
    }
    Ok((gains, covs))
}

/// Superposition of the Kalman estimate into the response to measurements
/// (started at zero) and the response to the initial mean.
#[derive(Debug, Clone)]
pub struct ResponseDecomposition {
    pub measurement: Vec<DVector<f64>>,
    pub initial: Vec<DVector<f64>>,
}

impl ResponseDecomposition {
    pub fn total(&self, k: usize) -> DVector<f64> {
        &self.measurement[k] + &self.initial[k]
    }
}

/// `x^h_k = (I - K_k H) Phi x^h_{k-1} + K_k y_k` from zero and
/// `x^s_k = (I - K_k H) Phi x^s_{k-1}` from `x0`, for `k = 1..len(ys)`.
pub fn response_decomposition(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> Result<ResponseDecomposition> {
    let q = model.dim();
    check_len(x0, q, "x0")?;
    let (gains, _) = riccati(model, x0_cov, ys.len())?;
    let eye = DMatrix::<f64>::identity(q, q);
    let mut xh = DVector::zeros(q);
    let mut xs = x0.clone();
    let mut out = ResponseDecomposition {
        measurement: Vec::with_capacity(ys.len()),
        initial: Vec::with_capacity(ys.len()),
    };
    for (k, y) in gains.iter().zip(ys) {
        check_len(y, model.meas_dim(), "measurement")?;
        let closed = (&eye - k * &model.h) * &model.phi;
        xh = &closed * &xh + k * y;
        xs = &closed * &xs;
        out.measurement.push(xh.clone());
        out.initial.push(xs.clone());
    }
    Ok(out)
}

/// Bias sequence `x^b_j = (I - K_j H) Phi x^b_{j-1}` with gains from the
/// Riccati recursion driven by `q_used`. Element 0 is `x0_bias`.
pub fn bias_propagation(
    model: &StateSpaceModel,
    q_used: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    x0_bias: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let q = model.dim();
    check_square(q_used, q, "Q^u")?;
    check_len(x0_bias, q, "initial bias")?;
    let used = StateSpaceModel {
        q: linalg::ensure_psd(q_used, "Q^u")?,
        ..model.clone()
    };
    let (gains, _) = riccati(&used, p0, steps)?;
    let eye = DMatrix::<f64>::identity(q, q);
    let mut seq = Vec::with_capacity(steps + 1);
    seq.push(x0_bias.clone());
    for k in &gains {
        let next = (&eye - k * &model.h) * &model.phi * seq.last().unwrap();
        seq.push(next);
    }
    Ok(seq)
}

/// `C_k = |x^b_k|^2` for each element.
pub fn convergence_index(bias: &[DVector<f64>]) -> Vec<f64> {
    bias.iter().map(|b| b.norm_squared()).collect()
}

/// Ideal, filter-calculated and true posterior covariances after one step
/// from a common `P_{k-1|k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTriple {
    pub ideal: DMatrix<f64>,
    pub filter_calc: DMatrix<f64>,
    pub true_cov: DMatrix<f64>,
    /// The mismatched gain `K^f`.
    pub filter_gain: DMatrix<f64>,
    /// The true predicted covariance `Phi P Phi' + Q`.
    pub predicted: DMatrix<f64>,
}

pub fn covariance_triple_step(model: &StateSpaceModel, p_prev: &DMatrix<f64>, dq: &DMatrix<f64>) -> Result<CovarianceTriple> {
    let q = model.dim();
    check_square(p_prev, q, "P_prev")?;
    check_square(dq, q, "dQ")?;
    let p_prev = linalg::ensure_psd(p_prev, "P_prev")?;
    let q_used = linalg::ensure_psd(&(&model.q + dq), "Q + dQ")?;
    let (phi, h, r) = (&model.phi, &model.h, &model.r);

    let pred = linalg::symmetrize(&(phi * &p_prev * phi.transpose() + &model.q));
    let pred_f = linalg::symmetrize(&(phi * &p_prev * phi.transpose() + q_used));
    let s = linalg::symmetrize(&(h * &pred * h.transpose() + r));
    let s_f = linalg::symmetrize(&(h * &pred_f * h.transpose() + r));
    let k = linalg::gain(&pred, h, &s)?;
    let k_f = linalg::gain(&pred_f, h, &s_f)?;

    Ok(CovarianceTriple {
        ideal: linalg::joseph(&pred, &k, h, r),
        filter_calc: linalg::joseph(&pred_f, &k_f, h, r),
        true_cov: linalg::joseph(&pred, &k_f, h, r),
        filter_gain: k_f,
        predicted: pred,
    })
}

/// Closed form of `P^t - P`: `C R X A X' R' C'` with `X = (A + A B^-1 A)^-1`,
/// `A = H P_pred H' + R`, `B = H dQ H'`, `C = H'(H H')^-1`.
///
/// Requires `H H'` and `B` invertible. It reproduces [`covariance_triple_step`]
/// when `H` is square and invertible; for a wide `H` the two differ.
pub fn covariance_gap_closed_form(model: &StateSpaceModel, p_prev: &DMatrix<f64>, dq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = model.dim();
    check_square(p_prev, q, "P_prev")?;
    check_square(dq, q, "dQ")?;
    let (phi, h, r) = (&model.phi, &model.h, &model.r);
    let pred = linalg::symmetrize(&(phi * p_prev * phi.transpose() + &model.q));
    let a = linalg::symmetrize(&(h * &pred * h.transpose() + r));
    let b = linalg::symmetrize(&(h * dq * h.transpose()));
    let hht = h * h.transpose();
    let invert = |m: &DMatrix<f64>| {
        m.clone().try_inverse().ok_or_else(|| DobError::SingularGram {
            condition: linalg::condition_estimate(m),
        })
    };
    let c = h.transpose() * invert(&hht)?;
    let x = invert(&(&a + &a * invert(&b)? * &a))?;
    Ok(linalg::symmetrize(&(&c * r * &x * &a * x.transpose() * r.transpose() * c.transpose())))
}

/// Steady-state gain from `q_used` and the resulting true error covariance
/// when the real process noise is `model.q`.
pub fn steady_state_true_covariance(model: &StateSpaceModel, q_used: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = model.dim();
    let used = StateSpaceModel {
        q: linalg::ensure_psd(q_used, "Q^u")?,
        ..model.clone()
    };
    let (gains, _) = riccati(&used, &DMatrix::zeros(q, q), STEADY_STATE_ITERS)?;
    let k = gains.last().cloned().unwrap_or_else(|| DMatrix::zeros(q, model.meas_dim()));
    let mut p = DMatrix::zeros(q, q);
    for _ in 0..STEADY_STATE_ITERS {
        let pred = &model.phi * &p * model.phi.transpose() + &model.q;
        p = linalg::joseph(&pred, &k, &model.h, &model.r);
    }
    Ok(p)
}

/// Spectral radius of `(I - K H) Phi` at the converged gain.
pub fn closed_loop_spectral_radius(model: &StateSpaceModel, p0: &DMatrix<f64>) -> Result<f64> {
    let q = model.dim();
    let (gains, _) = riccati(model, p0, STEADY_STATE_ITERS)?;
    let k = gains.last().cloned().unwrap_or_else(|| DMatrix::zeros(q, model.meas_dim()));
    let closed = (DMatrix::identity(q, q) - k * &model.h) * &model.phi;
    Ok(closed.complex_eigenvalues().iter().fold(0.0_f64, |m, z| m.max(z.norm())))
}

/// Whether `X = I + P^o H' R^-1 H` and `Y = (P^u - P^o) H' R^-1 H` are
/// symmetric within `tol` at every step of the two Riccati recursions.
pub fn symmetry_assumption_holds(
    model: &StateSpaceModel,
    dq: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    steps: usize,
    tol: f64,
) -> Result<bool> {
    let q = model.dim();
    let r_inv = model
        .r
        .clone()
        .try_inverse()
        .ok_or_else(|| DobError::SingularInnovation {
            condition: linalg::condition_estimate(&model.r),
        })?;
    let info = model.h.transpose() * r_inv * &model.h;
    let used = StateSpaceModel {
        q: &model.q + dq,
        ..model.clone()
    };
    let mut po = p0.clone();
    let mut pu = p0.clone();
    for _ in 0..steps {
        let pred_o = &model.phi * &po * model.phi.transpose() + &model.q;
        let pred_u = &used.phi * &pu * used.phi.transpose() + &used.q;
        let x = DMatrix::identity(q, q) + &pred_o * &info;
        let y = (&pred_u - &pred_o) * &info;
        if linalg::max_asymmetry(&x) > tol || linalg::max_asymmetry(&y) > tol {
            return Ok(false);
        }
        let (_, co) = riccati(model, &po, 1)?;
        let (_, cu) = riccati(&used, &pu, 1)?;
        po = co.into_iter().next().unwrap();
        pu = cu.into_iter().next().unwrap();
    }
    Ok(true)
}
