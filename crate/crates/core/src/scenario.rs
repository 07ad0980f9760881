//! Ground truth: the constant-velocity tracking plant, step-plus-noise
//! disturbances and seeded trajectory simulation.
//!
//! Row `k` of a [`Trajectory`] holds `x_k`, `y_k` and the disturbance that
//! drove the transition `x_{k-1} -> x_k`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DobError, Result};
use crate::linalg::{self, check_len, check_square, ensure_psd};
use crate::model::{GaussianBelief, LinearSystem};
use crate::output::fmt_f64;

pub const DEFAULT_T: f64 = 0.1;
pub const DEFAULT_QX: f64 = 1e-4;
pub const DEFAULT_R: f64 = 1e-2;
pub const DEFAULT_D_STAR: f64 = 1e-3;
pub const DEFAULT_X0_VAR: f64 = 1e-2;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_STARTS: [usize; 7] = [0, 300, 600, 900, 1260, 1560, 1860];
pub const DEFAULT_LEVELS: [f64; 4] = [0.0, 5.0, -3.0, 8.0];
/// Default analysis window, inclusive, in 1-based steps.
pub const DEFAULT_WINDOW: (usize, usize) = (1260, 1320);

const STREAM_PROCESS: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;
const STREAM_DISTURBANCE: u64 = 3;
const STREAM_INITIAL: u64 = 4;

/// Constant-velocity plant: `F = [[1, T], [0, 1]]`, `G = [T^2/2; T]`, `H = I`,
/// `Q = q_x I`, `R = r I`.
pub fn default_tracking_system(t: f64, q_x: f64, r: f64) -> Result<LinearSystem> {
    if !(t.is_finite() && t > 0.0) {
        return Err(DobError::InvalidParameter(format!("sampling time must be positive, got {t}")));
    }
    LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[t * t / 2.0, t]),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * q_x,
        DMatrix::identity(2, 2) * r,
    )
}

/// Piecewise-constant levels over closed-left intervals plus white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceProfile {
    segments: Vec<(usize, f64)>,
    noise_cov: DMatrix<f64>,
}

impl DisturbanceProfile {
    pub fn new(segments: Vec<(usize, f64)>, noise_cov: DMatrix<f64>) -> Result<Self> {
        if segments.first().map(|s| s.0) != Some(0) {
            return Err(DobError::InvalidParameter("the first disturbance segment must start at step 0".into()));
        }
        if segments.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(DobError::InvalidParameter("disturbance segments must be strictly increasing".into()));
        }
        if segments.iter().any(|s| !s.1.is_finite()) {
            return Err(DobError::InvalidParameter("disturbance levels must be finite".into()));
        }
        if !noise_cov.is_square() || noise_cov.nrows() == 0 {
            return Err(DobError::Dimension {
                what: "Q_d".into(),
                expected: (noise_cov.nrows().max(1), noise_cov.nrows().max(1)),
                found: noise_cov.shape(),
            });
        }
        let noise_cov = ensure_psd(&noise_cov, "Q_d")?;
        Ok(Self { segments, noise_cov })
    }

    /// Scalar profile with `Q_d = 0` from segment starts and levels cycled over them.
    pub fn cycled(starts: &[usize], levels: &[f64]) -> Result<Self> {
        if levels.is_empty() {
            return Err(DobError::InvalidParameter("at least one level is required".into()));
        }
        let segments = starts.iter().enumerate().map(|(i, &s)| (s, levels[i % levels.len()])).collect();
        Self::new(segments, DMatrix::zeros(1, 1))
    }

    /// The default scenario: levels `0, 5, -3, 8` cycled with a jump at step 1260.
    pub fn default_profile() -> Self {
        Self::cycled(&DEFAULT_STARTS, &DEFAULT_LEVELS).expect("default profile is valid")
    }

    pub fn with_noise(&self, noise_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(self.segments.clone(), noise_cov)
    }

    pub fn segments(&self) -> &[(usize, f64)] {
        &self.segments
    }
    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }
    pub fn dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    /// Step level active at `k`.
    pub fn level(&self, k: usize) -> f64 {
        let idx = self.segments.partition_point(|s| s.0 <= k);
        self.segments[idx - 1].1
    }

    /// Whether `k` starts a segment whose level differs from the previous one.
    pub fn is_jump(&self, k: usize) -> bool {
        k > 0 && self.level(k) != self.level(k - 1)
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Level at `k` on every channel plus a `N(0, Q_d)` draw.
pub fn sample_disturbance<R: Rng + ?Sized>(profile: &DisturbanceProfile, k: usize, rng: &mut R) -> DVector<f64> {
    let p = profile.dim();
    let z = standard_normal(rng, p);
    DVector::from_element(p, profile.level(k)) + linalg::psd_sqrt(&profile.noise_cov) * z
}

/// The data-generating model. Only PSD is required of the noise covariances,
/// so noiseless truth is allowed even though the filters need `R` PD.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub system: LinearSystem,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
    pub x0: GaussianBelief,
}

impl TruthModel {
    /// Noise taken from `sys`, `x_0 ~ N(0, 1e-2 I)`.
    pub fn from_system(sys: &LinearSystem) -> Self {
        let n = sys.n();
        Self {
            system: sys.clone(),
            process_cov: sys.q().clone(),
            measurement_cov: sys.r().clone(),
            x0: GaussianBelief::from_parts(DVector::zeros(n), DMatrix::identity(n, n) * DEFAULT_X0_VAR),
        }
    }

    pub fn with_noise(mut self, process_cov: DMatrix<f64>, measurement_cov: DMatrix<f64>) -> Result<Self> {
        check_square(&process_cov, self.system.n(), "truth Q")?;
        check_square(&measurement_cov, self.system.m(), "truth R")?;
        self.process_cov = ensure_psd(&process_cov, "truth Q")?;
        self.measurement_cov = ensure_psd(&measurement_cov, "truth R")?;
        Ok(self)
    }

    pub fn with_initial(mut self, x0: GaussianBelief) -> Result<Self> {
        x0.check_dim(self.system.n(), "initial state")?;
        self.x0 = x0;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub seed: u64,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with header `step,t,d_true,x1,x2,y1,y2` (columns widen with the dimensions).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = self.disturbances.first().map_or(1, |d| d.len());
        let n = self.x0.len();
        let m = self.measurements.first().map_or(0, |y| y.len());
        let mut header = vec!["step".to_string(), "t".to_string()];
        if p == 1 {
            header.push("d_true".into());
        } else {
            header.extend((1..=p).map(|i| format!("d_true{i}")));
        }
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let step = k + 1;
            let mut row = vec![step.to_string(), fmt_f64(step as f64 * self.dt)];
            row.extend(self.disturbances[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.states[k].iter().map(|v| fmt_f64(*v)));
            row.extend(self.measurements[k].iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `x_k = F x_{k-1} + G d_k + w_k`, `y_k = H x_k + v_k` for `k = 1..steps`,
/// where `d_k` is sampled at step `k`. Each noise source has its own stream.
pub fn simulate_truth(
    truth: &TruthModel,
    profile: &DisturbanceProfile,
    steps: usize,
    seed: u64,
    dt: f64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(DobError::InvalidParameter("steps must be at least 1".into()));
    }
    let sys = &truth.system;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    if profile.dim() != p {
        return Err(DobError::Dimension {
            what: "disturbance profile".into(),
            expected: (p, p),
            found: (profile.dim(), profile.dim()),
        });
    }
    check_len(&truth.x0.mean, n, "initial mean")?;

    let mut rng_w = stream(seed, STREAM_PROCESS);
    let mut rng_v = stream(seed, STREAM_MEASUREMENT);
    let mut rng_d = stream(seed, STREAM_DISTURBANCE);
    let mut rng_x0 = stream(seed, STREAM_INITIAL);

    let sq_q = linalg::psd_sqrt(&truth.process_cov);
    let sq_r = linalg::psd_sqrt(&truth.measurement_cov);
    let sq_x0 = linalg::psd_sqrt(&truth.x0.cov);

    let x0 = &truth.x0.mean + &sq_x0 * standard_normal(&mut rng_x0, n);
    let mut traj = Trajectory {
        x0: x0.clone(),
        states: Vec::with_capacity(steps),
        disturbances: Vec::with_capacity(steps),
        measurements: Vec::with_capacity(steps),
        seed,
        dt,
    };
    let mut x = x0;
    for k in 1..=steps {
        let d = sample_disturbance(profile, k, &mut rng_d);
        x = sys.f() * &x + sys.g() * &d + &sq_q * standard_normal(&mut rng_w, n);
        let y = sys.h() * &x + &sq_r * standard_normal(&mut rng_v, m);
        traj.states.push(x.clone());
        traj.disturbances.push(d);
        traj.measurements.push(y);
    }
    Ok(traj)
}

/// Seed for Monte Carlo trial `trial`, mixed from `base` with splitmix64.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(base) ^ trial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(sys: &LinearSystem, x0: DVector<f64>) -> TruthModel {
        let n = sys.n();
        TruthModel::from_system(sys)
            .with_noise(DMatrix::zeros(n, n), DMatrix::zeros(sys.m(), sys.m()))
            .unwrap()
            .with_initial(GaussianBelief::new(x0, DMatrix::zeros(n, n)).unwrap())
            .unwrap()
    }

    #[test]
    fn tracking_matrices() {
        let sys = default_tracking_system(0.1, DEFAULT_QX, DEFAULT_R).unwrap();
        assert_eq!(sys.f(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!((sys.g()[(0, 0)] - 0.005).abs() < 1e-18);
        assert_eq!(sys.g()[(1, 0)], 0.1);
        assert!(default_tracking_system(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn closed_left_segments() {
        let profile = DisturbanceProfile::cycled(&[0, 10, 20], &[0.0, 5.0, -3.0]).unwrap();
        let mut rng = stream(1, 0);
        assert_eq!(sample_disturbance(&profile, 9, &mut rng)[0], 0.0);
        assert_eq!(sample_disturbance(&profile, 10, &mut rng)[0], 5.0);
        assert_eq!(sample_disturbance(&profile, 15, &mut rng)[0], 5.0);
        assert_eq!(sample_disturbance(&profile, 20, &mut rng)[0], -3.0);
        assert!(profile.is_jump(10) && !profile.is_jump(11));
        let default = DisturbanceProfile::default_profile();
        assert_eq!(default.level(1259), 8.0);
        assert_eq!(default.level(1260), 0.0);
    }

    #[test]
    fn profile_validation() {
        assert!(DisturbanceProfile::new(vec![(1, 0.0)], DMatrix::zeros(1, 1)).is_err());
        assert!(DisturbanceProfile::new(vec![(0, 0.0), (0, 1.0)], DMatrix::zeros(1, 1)).is_err());
        assert!(DisturbanceProfile::new(vec![(0, f64::NAN)], DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn disturbance_noise_moments() {
        let profile = DisturbanceProfile::cycled(&[0], &[5.0])
            .unwrap()
            .with_noise(DMatrix::identity(1, 1))
            .unwrap();
        let mut rng = stream(3, STREAM_DISTURBANCE);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_disturbance(&profile, 7, &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn noiseless_free_response() {
        let sys = default_tracking_system(0.1, DEFAULT_QX, DEFAULT_R).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let profile = DisturbanceProfile::cycled(&[0], &[0.0]).unwrap();
        let traj = simulate_truth(&noiseless(&sys, x0.clone()), &profile, 25, 9, 0.1).unwrap();
        let mut x = x0;
        for k in 0..25 {
            x = sys.f() * &x;
            assert_eq!(traj.states[k], x);
            assert_eq!(traj.measurements[k], x);
        }
    }

    #[test]
    fn one_step_constant_input() {
        let sys = default_tracking_system(0.1, DEFAULT_QX, DEFAULT_R).unwrap();
        let profile = DisturbanceProfile::cycled(&[0], &[2.0]).unwrap();
        let traj = simulate_truth(&noiseless(&sys, DVector::zeros(2)), &profile, 1, 0, 0.1).unwrap();
        assert!((traj.states[0][0] - 0.01).abs() < 1e-17);
        assert!((traj.states[0][1] - 0.2).abs() < 1e-17);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let sys = default_tracking_system(0.1, DEFAULT_QX, DEFAULT_R).unwrap();
        let truth = TruthModel::from_system(&sys);
        let profile = DisturbanceProfile::default_profile();
        let a = simulate_truth(&truth, &profile, 300, 42, 0.1).unwrap();
        let b = simulate_truth(&truth, &profile, 300, 42, 0.1).unwrap();
        let c = simulate_truth(&truth, &profile, 300, 43, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn process_noise_is_white() {
        // F = 0 makes x_k equal to w_k when the disturbance is zero
        let sys = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let truth = TruthModel::from_system(&sys)
            .with_initial(GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap())
            .unwrap();
        let profile = DisturbanceProfile::cycled(&[0], &[0.0]).unwrap();
        let traj = simulate_truth(&truth, &profile, 100_000, 5, 1.0).unwrap();
        for c in 0..2 {
            let w: Vec<f64> = traj.states.iter().map(|x| x[c]).collect();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let var: f64 = w.iter().map(|v| (v - mean).powi(2)).sum();
            let cov: f64 = w.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
            assert!((cov / var).abs() <= 0.02);
        }
    }

    #[test]
    fn csv_header() {
        let sys = default_tracking_system(0.1, DEFAULT_QX, DEFAULT_R).unwrap();
        let traj = simulate_truth(&TruthModel::from_system(&sys), &DisturbanceProfile::default_profile(), 3, 1, 0.1).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,t,d_true,x1,x2,y1,y2");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn trial_seeds_differ() {
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
    }
}
