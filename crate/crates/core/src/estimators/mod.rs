//! Step functions for every estimator family plus the [`Observer`] wrapper.

pub mod imm;
pub mod kf;
pub mod kfdob;
pub mod mkc;
pub mod nkf;
pub mod observer;
pub mod sise;

pub use imm::{immkf_dob_step, ImmOutcome, ImmState};
pub use kf::{kf_correct, kf_predict, kf_step, kf_step_detailed, KfUpdate};
pub use kfdob::{
    kf_dob_partitioned_step, kf_dob_prior, kf_dob_step, kf_dob_step_with_model, lagged_disturbance_cov, DobEstimate,
    PartitionedState,
};
pub use mkc::{gaussian_kernel, mkc_loss, mkckf_dob_step, mkckf_dob_step_inspect, MkcConfig, MkcIteration, MkcOutcome};
pub use nkf::{nkf_dob_step, nkf_dob_step_detailed, NkfState, NkfUpdate};
pub use observer::{Estimate, EstimatorKind, Observer, ObserverFlags};
pub use sise::{sise_step, sise_step_detailed, SiseState, SiseUpdate};
