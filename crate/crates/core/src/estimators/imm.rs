//! IMMKF-DOB: a bank of KF-DOB models that differ only in `D`, mixed through
//! Markov mode probabilities.

use nalgebra::{DMatrix, DVector};

use super::kf::kf_step_detailed;
use super::kfdob::DobEstimate;
use crate::error::{DobError, Result};
use crate::linalg::{self, block_diag, check_square};
use crate::model::{GaussianBelief, LinearSystem};

/// Lower bound for the predicted mode probability `c_j` before division.
pub const MIXING_FLOOR: f64 = 1e-300;

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ImmState {
    beliefs: Vec<GaussianBelief>,
    mode_probs: DVector<f64>,
    transition: DMatrix<f64>,
}

impl ImmState {
    pub fn new(beliefs: Vec<GaussianBelief>, mode_probs: DVector<f64>, transition: DMatrix<f64>) -> Result<Self> {
        let q = beliefs.len();
        if q == 0 {
            return Err(DobError::InvalidParameter("IMM needs at least one model".into()));
        }
        let dim = beliefs[0].dim();
        for b in &beliefs {
            b.check_dim(dim, "IMM model belief")?;
        }
        linalg::check_len(&mode_probs, q, "mode probabilities")?;
        check_square(&transition, q, "transition matrix")?;
        if mode_probs.iter().any(|v| !(*v >= 0.0)) || (mode_probs.sum() - 1.0).abs() > SIMPLEX_TOL {
            return Err(DobError::InvalidParameter("mode probabilities must lie in the simplex".into()));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(DobError::InvalidParameter(format!("transition row {i} is not stochastic")));
            }
        }
        Ok(Self {
            beliefs,
            mode_probs,
            transition,
        })
    }

    /// Every model starts from `belief` with uniform mode probabilities.
    pub fn uniform(belief: GaussianBelief, transition: DMatrix<f64>) -> Result<Self> {
        let q = transition.nrows();
        if q == 0 {
            return Err(DobError::InvalidParameter("IMM needs at least one model".into()));
        }
        Self::new(vec![belief; q], DVector::from_element(q, 1.0 / q as f64), transition)
    }

    pub fn beliefs(&self) -> &[GaussianBelief] {
        &self.beliefs
    }
    pub fn mode_probs(&self) -> &DVector<f64> {
        &self.mode_probs
    }
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
    pub fn models(&self) -> usize {
        self.beliefs.len()
    }
}

#[derive(Debug, Clone)]
pub struct ImmOutcome {
    pub state: ImmState,
    pub fused: DobEstimate,
    /// Per-model measurement likelihoods `Lambda_j`.
    pub likelihoods: DVector<f64>,
    /// Set when every likelihood underflowed and probabilities were reset to uniform.
    pub underflow: bool,
}

/// Density of `N(0, S)` at `e`.
fn gaussian_density(e: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let m = e.len() as f64;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| DobError::SingularInnovation {
            condition: linalg::condition_estimate(s),
        })?;
    let white = chol.l().solve_lower_triangular(e).unwrap_or_else(|| DVector::from_element(e.len(), f64::INFINITY));
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok((-0.5 * white.norm_squared() - 0.5 * m * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det).exp())
}

/// One IMM cycle: mixing, per-model KF, likelihood update and fusion.
pub fn immkf_dob_step(
    state: &ImmState,
    sys: &LinearSystem,
    d_list: &[DMatrix<f64>],
    q_x: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<ImmOutcome> {
    let q = state.models();
    let (n, p, m) = (sys.n(), sys.p(), sys.m());
    if d_list.len() != q {
        return Err(DobError::Dimension {
            what: "D list".into(),
            expected: (q, 1),
            found: (d_list.len(), 1),
        });
    }
    check_square(q_x, n, "Q_x")?;
    check_square(r, m, "R")?;
    let dim = p + n;
    for b in &state.beliefs {
        b.check_dim(dim, "IMM model belief")?;
    }

    let mut phi = DMatrix::zeros(dim, dim);
    phi.view_mut((0, 0), (p, p)).fill_with_identity();
    phi.view_mut((p, 0), (n, p)).copy_from(sys.g());
    phi.view_mut((p, p), (n, n)).copy_from(sys.f());
    let mut h = DMatrix::zeros(m, dim);
    h.view_mut((0, p), (m, n)).copy_from(sys.h());

    let mu = &state.mode_probs;
    let tp = &state.transition;

    // mixing weights mu_ij = P_ij mu_i / c_j
    let c_bar: Vec<f64> = (0..q)
        .map(|j| (0..q).map(|i| tp[(i, j)] * mu[i]).sum::<f64>().max(MIXING_FLOOR))
        .collect();

    let mut beliefs = Vec::with_capacity(q);
    let mut likelihoods = DVector::zeros(q);
    for j in 0..q {
        let mixed = if q == 1 {
            state.beliefs[0].clone()
        } else {
            let w: Vec<f64> = (0..q).map(|i| tp[(i, j)] * mu[i] / c_bar[j]).collect();
            let mut mean = DVector::zeros(dim);
            for i in 0..q {
                mean += &state.beliefs[i].mean * w[i];
            }
            let mut cov = DMatrix::zeros(dim, dim);
            for i in 0..q {
                let dx = &state.beliefs[i].mean - &mean;
                cov += (&state.beliefs[i].cov + &dx * dx.transpose()) * w[i];
            }
            GaussianBelief::from_parts(mean, linalg::symmetrize(&cov))
        };
        check_square(&d_list[j], p, "D")?;
        let d_j = linalg::ensure_psd(&d_list[j], "D")?;
        let q_j = block_diag(&[&d_j, q_x]);
        let upd = kf_step_detailed(&mixed, &phi, &h, &q_j, r, y)?;
        likelihoods[j] = gaussian_density(&upd.innovation, &upd.innovation_cov)?;
        beliefs.push(upd.posterior);
    }

    let mut probs = DVector::from_iterator(q, (0..q).map(|j| likelihoods[j] * c_bar[j]));
    let total = probs.sum();
    let underflow = !(total > 0.0 && total.is_finite());
    if underflow {
        probs = DVector::from_element(q, 1.0 / q as f64);
    } else {
        probs /= total;
    }

    let fused = if q == 1 {
        beliefs[0].clone()
    } else {
        let mut mean = DVector::zeros(dim);
        for j in 0..q {
            mean += &beliefs[j].mean * probs[j];
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for j in 0..q {
            let dx = &beliefs[j].mean - &mean;
            cov += (&beliefs[j].cov + &dx * dx.transpose()) * probs[j];
        }
        GaussianBelief::from_parts(mean, linalg::symmetrize(&cov))
    };

    Ok(ImmOutcome {
        state: ImmState {
            beliefs,
            mode_probs: probs,
            transition: tp.clone(),
        },
        fused: DobEstimate::from_belief(fused, p),
        likelihoods,
        underflow,
    })
}
