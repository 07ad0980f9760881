//! Uniform stepping interface over every estimator family.

use nalgebra::{DMatrix, DVector};

use super::imm::{immkf_dob_step, ImmState};
use super::kfdob::{kf_dob_partitioned_step, kf_dob_prior, kf_dob_step_with_model, PartitionedState};
use super::mkc::{mkc_step_with_model, MkcConfig};
use super::nkf::{nkf_dob_step, NkfState};
use super::sise::{sise_step, SiseState};
use crate::error::{DobError, Result};
use crate::model::{augment, AugmentedModel, GaussianBelief, LinearSystem};

/// Estimator selection with its tuning.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    KfDob { d: DMatrix<f64> },
    KfDobPartitioned { d: DMatrix<f64> },
    NkfDob { d: DMatrix<f64> },
    Sise,
    MkckfDob { d: DMatrix<f64>, config: MkcConfig },
    ImmkfDob { d_list: Vec<DMatrix<f64>>, transition: DMatrix<f64> },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::KfDob { .. } => "kfdob",
            Self::KfDobPartitioned { .. } => "kfdob_partitioned",
            Self::NkfDob { .. } => "nkfdob",
            Self::Sise => "sise",
            Self::MkckfDob { .. } => "mkckfdob",
            Self::ImmkfDob { .. } => "immkfdob",
        }
    }
}

/// Per-step output shared by all observers.
///
/// `d_hat` is aligned with the input that drove the transition into the
/// current measurement. For SISE and NKF-DOB that is their native output; for
/// the augmented filters it is the leading block of the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub d_hat: DVector<f64>,
    pub d_cov: DMatrix<f64>,
    pub x_hat: DVector<f64>,
    pub x_cov: DMatrix<f64>,
}

impl Estimate {
    fn from_joint(belief: &GaussianBelief, p: usize) -> Self {
        let n = belief.dim() - p;
        Self {
            d_hat: belief.mean.rows(0, p).into_owned(),
            d_cov: belief.cov.view((0, 0), (p, p)).into_owned(),
            x_hat: belief.mean.rows(p, n).into_owned(),
            x_cov: belief.cov.view((p, p), (n, n)).into_owned(),
        }
    }
}

#[derive(Debug, Clone)]
enum ObserverState {
    KfDob { model: AugmentedModel, belief: GaussianBelief },
    Partitioned { d: DMatrix<f64>, state: PartitionedState },
    Nkf { d: DMatrix<f64>, state: NkfState },
    Sise { state: SiseState },
    Mkc { model: AugmentedModel, config: MkcConfig, belief: GaussianBelief },
    Imm { d_list: Vec<DMatrix<f64>>, state: ImmState },
}

/// Counters for conditions that are flagged rather than raised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObserverFlags {
    /// MKC steps that hit `max_iters`.
    pub nonconverged: usize,
    /// IMM steps where every likelihood underflowed.
    pub underflow: usize,
    /// Total MKC fixed-point iterations.
    pub iterations: usize,
}

/// A running disturbance observer.
#[derive(Debug, Clone)]
pub struct Observer {
    sys: LinearSystem,
    state: ObserverState,
    flags: ObserverFlags,
}

impl Observer {
    /// Builds an observer from the prior over `x`. Augmented filters start with
    /// disturbance mean zero and covariance `D` (IMM uses the first `D`).
    pub fn new(kind: &EstimatorKind, sys: &LinearSystem, x_prior: &GaussianBelief) -> Result<Self> {
        x_prior.check_dim(sys.n(), "state prior")?;
        let p = sys.p();
        let state = match kind {
            EstimatorKind::KfDob { d } => {
                let model = augment(sys, d)?;
                ObserverState::KfDob {
                    belief: kf_dob_prior(x_prior, &model.disturbance_cov()),
                    model,
                }
            }
            EstimatorKind::KfDobPartitioned { d } => {
                let model = augment(sys, d)?;
                let prior = kf_dob_prior(x_prior, &model.disturbance_cov());
                ObserverState::Partitioned {
                    d: model.disturbance_cov(),
                    state: PartitionedState::from_belief(&prior, p),
                }
            }
            EstimatorKind::NkfDob { d } => {
                let model = augment(sys, d)?;
                ObserverState::Nkf {
                    d: model.disturbance_cov(),
                    state: NkfState::new(x_prior.clone(), p),
                }
            }
            EstimatorKind::Sise => ObserverState::Sise {
                state: SiseState::new(x_prior.clone(), p),
            },
            EstimatorKind::MkckfDob { d, config } => {
                config.validate()?;
                let model = augment(sys, d)?;
                ObserverState::Mkc {
                    belief: kf_dob_prior(x_prior, &model.disturbance_cov()),
                    model,
                    config: config.clone(),
                }
            }
            EstimatorKind::ImmkfDob { d_list, transition } => {
                let first = d_list
                    .first()
                    .ok_or_else(|| DobError::InvalidParameter("IMM needs at least one D".into()))?;
                let mut checked = Vec::with_capacity(d_list.len());
                for d in d_list {
                    checked.push(augment(sys, d)?.disturbance_cov());
                }
                let prior = kf_dob_prior(x_prior, &augment(sys, first)?.disturbance_cov());
                let state = ImmState::uniform(prior, transition.clone())?;
                if state.models() != checked.len() {
                    return Err(DobError::Dimension {
                        what: "IMM transition matrix".into(),
                        expected: (checked.len(), checked.len()),
                        found: transition.shape(),
                    });
                }
                ObserverState::Imm { d_list: checked, state }
            }
        };
        Ok(Self {
            sys: sys.clone(),
            state,
            flags: ObserverFlags::default(),
        })
    }

    pub fn flags(&self) -> ObserverFlags {
        self.flags
    }

    /// Mode probabilities of an IMM observer.
    pub fn mode_probs(&self) -> Option<&DVector<f64>> {
        match &self.state {
            ObserverState::Imm { state, .. } => Some(state.mode_probs()),
            _ => None,
        }
    }

    pub fn step(&mut self, y: &DVector<f64>) -> Result<Estimate> {
        let p = self.sys.p();
        let sys = &self.sys;
        match &mut self.state {
            ObserverState::KfDob { model, belief } => {
                let (est, _) = kf_dob_step_with_model(belief, model, y)?;
                *belief = est.belief;
                Ok(Estimate::from_joint(belief, p))
            }
            ObserverState::Partitioned { d, state } => {
                *state = kf_dob_partitioned_step(state, sys, d, y)?;
                Ok(Estimate {
                    d_hat: state.d.clone(),
                    d_cov: state.p_dd.clone(),
                    x_hat: state.x.clone(),
                    x_cov: state.p_xx.clone(),
                })
            }
            ObserverState::Nkf { d, state } => {
                *state = nkf_dob_step(state, sys, d, y)?;
                Ok(Estimate {
                    d_hat: state.d.clone(),
                    d_cov: state.d_cov.clone(),
                    x_hat: state.x_belief.mean.clone(),
                    x_cov: state.x_belief.cov.clone(),
                })
            }
            ObserverState::Sise { state } => {
                *state = sise_step(state, sys, y)?;
                Ok(Estimate {
                    d_hat: state.last_d.clone(),
                    d_cov: state.last_d_cov.clone(),
                    x_hat: state.x_belief.mean.clone(),
                    x_cov: state.x_belief.cov.clone(),
                })
            }
            ObserverState::Mkc { model, config, belief } => {
                let out = mkc_step_with_model(belief, model, y, config, false)?;
                self.flags.iterations += out.iterations;
                if !out.converged {
                    self.flags.nonconverged += 1;
                }
                *belief = out.estimate.belief;
                Ok(Estimate::from_joint(belief, p))
            }
            ObserverState::Imm { d_list, state } => {
                let out = immkf_dob_step(state, sys, d_list, sys.q(), sys.r(), y)?;
                if out.underflow {
                    self.flags.underflow += 1;
                }
                *state = out.state;
                Ok(Estimate::from_joint(&out.fused.belief, p))
            }
        }
    }
}
