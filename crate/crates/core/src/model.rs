//! State-space and belief types shared by every estimator.
//!
//! The augmented KF-DOB state is ordered `[d; x]` (disturbance first) everywhere.

use nalgebra::{DMatrix, DVector};

use crate::error::{DobError, Result};
use crate::linalg::{self, block_diag, check_len, check_shape, check_square, ensure_pd, ensure_psd};

/// Time-invariant linear system with an unknown input:
///
/// ```text
/// x_k = F x_{k-1} + G d_{k-1} + w_k,   w_k ~ N(0, Q)
/// y_k = H x_k + v_k,                   v_k ~ N(0, R)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LinearSystem {
    /// Validates dimensions, `Q` PSD, `R` PD and `rank(HG) = rank(G) = p`.
    pub fn new(
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = f.nrows();
        if n == 0 {
            return Err(DobError::InvalidParameter("state dimension must be positive".into()));
        }
        check_square(&f, n, "F")?;
        let p = g.ncols();
        if p == 0 {
            return Err(DobError::InvalidParameter("disturbance dimension must be positive".into()));
        }
        check_shape(&g, (n, p), "G")?;
        let m = h.nrows();
        if m == 0 {
            return Err(DobError::InvalidParameter("measurement dimension must be positive".into()));
        }
        check_shape(&h, (m, n), "H")?;
        check_square(&q, n, "Q")?;
        check_square(&r, m, "R")?;
        let q = ensure_psd(&q, "Q")?;
        let r = ensure_pd(&r, "R")?;

        let rank_g = linalg::rank(&g);
        let rank_hg = linalg::rank(&(&h * &g));
        if rank_g != p || rank_hg != p {
            return Err(DobError::RankCondition { rank_hg, rank_g, p });
        }
        Ok(Self { f, g, h, q, r })
    }

    /// Same `F`, `G`, `H` with different noise covariances.
    pub fn with_noise(&self, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::new(self.f.clone(), self.g.clone(), self.h.clone(), q, r)
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.f.nrows()
    }
    /// Measurement dimension.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }
    /// Disturbance dimension.
    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    /// The plain `(F, H, Q, R)` model without the disturbance channel.
    pub fn state_model(&self) -> StateSpaceModel {
        StateSpaceModel {
            phi: self.f.clone(),
            h: self.h.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
        }
    }
}

/// Generic `x_k = Phi x_{k-1} + w_k`, `y_k = H x_k + v_k` model used by the
/// plain Kalman recursion and the batch oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub phi: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(phi: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = phi.nrows();
        check_square(&phi, n, "Phi")?;
        let m = h.nrows();
        check_shape(&h, (m, n), "H")?;
        check_square(&q, n, "Q")?;
        check_square(&r, m, "R")?;
        let q = ensure_psd(&q, "Q")?;
        let r = ensure_psd(&r, "R")?;
        Ok(Self { phi, h, q, r })
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    /// Copy of the model with `Q` replaced by `Q + dq`.
    pub fn with_process_offset(&self, dq: &DMatrix<f64>) -> Result<Self> {
        check_square(dq, self.dim(), "dQ")?;
        Ok(Self {
            q: linalg::symmetrize(&(&self.q + dq)),
            ..self.clone()
        })
    }
}

/// KF-DOB model over the augmented state `[d; x]`:
///
/// ```text
/// Phi = [[I, 0], [G, F]],  Haug = [0, H],  Qaug = blockdiag(D, Q)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    phi: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: usize,
    n: usize,
}

impl AugmentedModel {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn disturbance_dim(&self) -> usize {
        self.p
    }
    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.p + self.n
    }

    /// Recovers `(F, G, H)` from the block layout.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (p, n) = (self.p, self.n);
        let f = self.phi.view((p, p), (n, n)).into_owned();
        let g = self.phi.view((p, 0), (n, p)).into_owned();
        let h = self.h.view((0, p), (self.h.nrows(), n)).into_owned();
        (f, g, h)
    }

    /// The disturbance noise covariance `D` (leading block of `Qaug`).
    pub fn disturbance_cov(&self) -> DMatrix<f64> {
        self.q.view((0, 0), (self.p, self.p)).into_owned()
    }

    pub fn state_space(&self) -> StateSpaceModel {
        StateSpaceModel {
            phi: self.phi.clone(),
            h: self.h.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
        }
    }
}

/// Builds the augmented KF-DOB model for disturbance noise covariance `d`.
pub fn augment(system: &LinearSystem, d: &DMatrix<f64>) -> Result<AugmentedModel> {
    let (n, p, m) = (system.n(), system.p(), system.m());
    check_square(d, p, "D")?;
    let d = ensure_psd(d, "D")?;

    let mut phi = DMatrix::zeros(p + n, p + n);
    phi.view_mut((0, 0), (p, p)).fill_with_identity();
    phi.view_mut((p, 0), (n, p)).copy_from(system.g());
    phi.view_mut((p, p), (n, n)).copy_from(system.f());

    let mut h = DMatrix::zeros(m, p + n);
    h.view_mut((0, p), (m, n)).copy_from(system.h());

    let q = block_diag(&[&d, system.q()]);
    Ok(AugmentedModel {
        phi,
        h,
        q,
        r: system.r().clone(),
        p,
        n,
    })
}

/// Mean and symmetric PSD covariance: the state every filter carries.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_square(&cov, mean.len(), "belief covariance")?;
        let cov = ensure_psd(&cov, "belief covariance")?;
        Ok(Self { mean, cov })
    }

    /// Internal constructor for covariances that are PSD by construction.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Belief over `[d; x]` from independent disturbance and state beliefs.
    pub fn stack(d: &GaussianBelief, x: &GaussianBelief) -> Self {
        let mut mean = DVector::zeros(d.dim() + x.dim());
        mean.rows_mut(0, d.dim()).copy_from(&d.mean);
        mean.rows_mut(d.dim(), x.dim()).copy_from(&x.mean);
        Self {
            mean,
            cov: block_diag(&[&d.cov, &x.cov]),
        }
    }

    /// Marginal over components `[start, start + len)`.
    pub fn marginal(&self, start: usize, len: usize) -> Self {
        Self {
            mean: self.mean.rows(start, len).into_owned(),
            cov: self.cov.view((start, start), (len, len)).into_owned(),
        }
    }

    pub(crate) fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        check_len(&self.mean, dim, what)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracking(t: f64) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[t * t / 2.0, t]),
            DMatrix::identity(2, 2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0])),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn augment_places_blocks() {
        let sys = tracking(0.1);
        let aug = augment(&sys, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        let expected_phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.1 * 0.1 / 2.0, 1.0, 0.1, 0.1, 0.0, 1.0]);
        assert_eq!(aug.phi(), &expected_phi);
        assert_eq!(aug.h(), &DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(aug.q(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0])));
        assert_eq!(aug.disturbance_cov(), DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn augment_is_lossless() {
        let sys = tracking(0.25);
        let aug = augment(&sys, &DMatrix::from_element(1, 1, 0.5)).unwrap();
        let (f, g, h) = aug.blocks();
        assert_eq!(&f, sys.f());
        assert_eq!(&g, sys.g());
        assert_eq!(&h, sys.h());
    }

    #[test]
    fn augment_rejects_wrong_d() {
        let sys = tracking(0.1);
        match augment(&sys, &DMatrix::identity(2, 2)) {
            Err(DobError::Dimension { what, .. }) => assert_eq!(what, "D"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn construction_checks() {
        let f = DMatrix::identity(2, 2);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        // H blind to the disturbance direction
        let h = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let err = LinearSystem::new(f.clone(), g.clone(), h, DMatrix::zeros(2, 2), DMatrix::identity(1, 1));
        assert!(matches!(err, Err(DobError::RankCondition { rank_hg: 0, .. })));

        let err = LinearSystem::new(
            f.clone(),
            g.clone(),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        );
        assert!(matches!(err, Err(DobError::NotPositiveDefinite { .. })));

        let err = LinearSystem::new(f, g, DMatrix::identity(3, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        assert!(matches!(err, Err(DobError::Dimension { .. })));
    }

    #[test]
    fn belief_rejects_indefinite() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianBelief::new(DVector::zeros(2), cov).is_err());
    }
}
