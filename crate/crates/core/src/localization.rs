//! GPS/INS fusion with a linear Kalman filter.
//!
//! The filtered state is `[pos_x, pos_y, vel_x, vel_y]`. Dead-reckoning
//! acceleration enters through the control input; slow-but-stable GPS
//! readings (position and velocity) enter through the measurement update.
//! The usual cycle applies: predict the state and project the covariance
//! ahead, compute the gain from the innovation covariance, fold the
//! measurement in, and update the covariance.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Fused state vector: `[pos_x (m), pos_y (m), vel_x (m/s), vel_y (m/s)]`.
pub type StateVector = Vector4<f64>;
/// 4×4 state covariance.
pub type Covariance = Matrix4<f64>;

/// Numerical slack allowed below zero for covariance eigenvalues.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Default process noise: positions drift little, velocities a bit more.
pub fn default_process_noise() -> Covariance {
    Matrix4::from_diagonal(&Vector4::new(0.01, 0.01, 0.1, 0.1))
}

/// Default initial covariance: loose on positions, tighter on velocities.
pub fn default_initial_covariance() -> Covariance {
    Matrix4::from_diagonal(&Vector4::new(100.0, 100.0, 10.0, 10.0))
}

/// Default velocity measurement noise, m/s (1σ).
pub const DEFAULT_VELOCITY_SIGMA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("{name} must be finite")]
    NonFinite { name: &'static str },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("covariance is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPositiveSemiDefinite(f64),
    #[error("innovation covariance is singular; measurement update impossible")]
    SingularInnovation,
    #[error("trajectory must be non-empty")]
    EmptyTrajectory,
}

fn check_finite_matrix(name: &'static str, m: &Matrix4<f64>) -> Result<(), LocalizationError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LocalizationError::NonFinite { name })
    }
}

fn symmetrize(m: &Covariance) -> Covariance {
    (m + m.transpose()) * 0.5
}

/// Fused state estimate with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub s: StateVector,
    pub p: Covariance,
}

impl KalmanState {
    /// Builds a state, checking that the covariance is symmetric and
    /// positive semi-definite (within [`PSD_TOLERANCE`]).
    pub fn new(s: StateVector, p: Covariance) -> Result<Self, LocalizationError> {
        if !s.iter().all(|x| x.is_finite()) {
            return Err(LocalizationError::NonFinite { name: "state" });
        }
        check_finite_matrix("covariance", &p)?;
        let asym = (p - p.transpose()).abs().max();
        let scale = p.abs().max().max(1.0);
        if asym > 1e-9 * scale {
            return Err(LocalizationError::NotSymmetric(asym));
        }
        let min_eig = p
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOLERANCE * scale {
            return Err(LocalizationError::NotPositiveSemiDefinite(min_eig));
        }
        Ok(Self { s, p })
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.p
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Constant-velocity-plus-control transition over one step of `dt` seconds.
///
/// `a` carries positions forward by `vel * dt`; `b` folds the commanded
/// acceleration in with `dt²/2` on positions and `dt` on velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    pub dt: f64,
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub q: Covariance,
}

impl ProcessModel {
    pub fn new(dt: f64, q: Covariance) -> Result<Self, LocalizationError> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(LocalizationError::Negative {
                name: "dt",
                value: dt,
            });
        }
        check_finite_matrix("process noise", &q)?;
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, 0.0, dt,  0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let half_dt2 = 0.5 * dt * dt;
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            half_dt2, 0.0,
            0.0,      half_dt2,
            dt,       0.0,
            0.0,      dt,
        );
        Ok(Self { dt, a, b, q })
    }

    pub fn with_default_noise(dt: f64) -> Result<Self, LocalizationError> {
        Self::new(dt, default_process_noise())
    }
}

/// How sensor readings map onto the state, and how noisy they are.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub h: Matrix4<f64>,
    pub r: Covariance,
}

impl MeasurementModel {
    pub fn new(h: Matrix4<f64>, r: Covariance) -> Result<Self, LocalizationError> {
        check_finite_matrix("observation matrix", &h)?;
        check_finite_matrix("measurement noise", &r)?;
        let asym = (r - r.transpose()).abs().max();
        if asym > 1e-9 * r.abs().max().max(1.0) {
            return Err(LocalizationError::NotSymmetric(asym));
        }
        Ok(Self { h, r })
    }

    /// GPS supplying positions and velocities directly: `h` is the identity,
    /// noise defaults to 7 m on positions and 1 m/s on velocities (1σ).
    pub fn gps_default() -> Self {
        Self::gps(7.0, DEFAULT_VELOCITY_SIGMA)
    }

    /// GPS measurement model with the given position / velocity noise (1σ).
    pub fn gps(pos_sigma: f64, vel_sigma: f64) -> Self {
        let r = Matrix4::from_diagonal(&Vector4::new(
            pos_sigma * pos_sigma,
            pos_sigma * pos_sigma,
            vel_sigma * vel_sigma,
            vel_sigma * vel_sigma,
        ));
        Self {
            h: Matrix4::identity(),
            r,
        }
    }
}

/// Commanded acceleration on the X and Y axes, m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub u: Vector2<f64>,
}

impl ControlInput {
    pub fn new(a_x: f64, a_y: f64) -> Result<Self, LocalizationError> {
        if !(a_x.is_finite() && a_y.is_finite()) {
            return Err(LocalizationError::NonFinite { name: "control" });
        }
        Ok(Self {
            u: Vector2::new(a_x, a_y),
        })
    }

    pub fn zero() -> Self {
        Self {
            u: Vector2::zeros(),
        }
    }
}

/// Prediction step: `s' = A s + B u`, `P' = A P Aᵀ + Q`.
pub fn predict(
    state: &KalmanState,
    model: &ProcessModel,
    u: &ControlInput,
) -> Result<KalmanState, LocalizationError> {
    if !u.u.iter().all(|x| x.is_finite()) {
        return Err(LocalizationError::NonFinite { name: "control" });
    }
    let s = model.a * state.s + model.b * u.u;
    let p = symmetrize(&(model.a * state.p * model.a.transpose() + model.q));
    KalmanState::new(s, p)
}

/// Measurement step: `K = P Hᵀ (H P Hᵀ + R)⁻¹`, `s' = s + K (z − H s)`,
/// `P' = (I − K H) P`.
///
/// A singular innovation covariance is reported as an error rather than
/// silently regularized.
pub fn update(
    predicted: &KalmanState,
    meas: &MeasurementModel,
    z: &StateVector,
) -> Result<KalmanState, LocalizationError> {
    if !z.iter().all(|x| x.is_finite()) {
        return Err(LocalizationError::NonFinite { name: "measurement" });
    }
    let innovation_cov = meas.h * predicted.p * meas.h.transpose() + meas.r;
    let inv = innovation_cov
        .try_inverse()
        .ok_or(LocalizationError::SingularInnovation)?;
    let gain = predicted.p * meas.h.transpose() * inv;
    let s = predicted.s + gain * (z - meas.h * predicted.s);
    let p = symmetrize(&((Matrix4::identity() - gain * meas.h) * predicted.p));
    KalmanState::new(s, p)
}

/// One sample of a true trajectory: the control that produced the step and
/// the resulting true state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub control: ControlInput,
    pub truth: StateVector,
}

/// Result of running the filter along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    /// Fused estimate at each trajectory sample.
    pub fused: Vec<KalmanState>,
    /// The noisy measurements the filter consumed.
    pub measurements: Vec<StateVector>,
}

/// Runs the filter over a trajectory with simulated GPS noise (`gps_sigma`
/// on positions, [`DEFAULT_VELOCITY_SIGMA`] on velocities) and the default
/// process / measurement models. Deterministic for a fixed seed.
pub fn track(
    trajectory: &[TrackPoint],
    dt: f64,
    gps_sigma: f64,
    seed: u64,
) -> Result<TrackOutput, LocalizationError> {
    let process = ProcessModel::with_default_noise(dt)?;
    let meas = MeasurementModel::gps(gps_sigma, DEFAULT_VELOCITY_SIGMA);
    track_with(trajectory, &process, &meas, gps_sigma, DEFAULT_VELOCITY_SIGMA, seed)
}

/// [`track`] with explicit process and measurement models and velocity noise.
pub fn track_with(
    trajectory: &[TrackPoint],
    process: &ProcessModel,
    meas: &MeasurementModel,
    gps_sigma: f64,
    vel_sigma: f64,
    seed: u64,
) -> Result<TrackOutput, LocalizationError> {
    if trajectory.is_empty() {
        return Err(LocalizationError::EmptyTrajectory);
    }
    for (name, value) in [("gps_sigma", gps_sigma), ("vel_sigma", vel_sigma)] {
        if !value.is_finite() || value < 0.0 {
            return Err(LocalizationError::Negative { name, value });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos_noise = Normal::new(0.0, gps_sigma).expect("sigma validated");
    let vel_noise = Normal::new(0.0, vel_sigma).expect("sigma validated");
    let mut measure = |truth: &StateVector| -> StateVector {
        Vector4::new(
            truth[0] + pos_noise.sample(&mut rng),
            truth[1] + pos_noise.sample(&mut rng),
            truth[2] + vel_noise.sample(&mut rng),
            truth[3] + vel_noise.sample(&mut rng),
        )
    };

    let mut fused = Vec::with_capacity(trajectory.len());
    let mut measurements = Vec::with_capacity(trajectory.len());

    // Bootstrap from the first measurement with the default loose prior.
    let z0 = measure(&trajectory[0].truth);
    let mut state = KalmanState::new(z0, default_initial_covariance())?;
    measurements.push(z0);
    fused.push(state.clone());

    for point in &trajectory[1..] {
        let predicted = predict(&state, process, &point.control)?;
        let z = measure(&point.truth);
        state = update(&predicted, meas, &z)?;
        measurements.push(z);
        fused.push(state.clone());
    }
    Ok(TrackOutput {
        fused,
        measurements,
    })
}

/// Constant-acceleration trajectory sampled at `dt`, starting from the given
/// position and velocity. Convenient for demos and evaluation runs.
pub fn constant_acceleration_trajectory(
    start_pos: (f64, f64),
    start_vel: (f64, f64),
    accel: (f64, f64),
    dt: f64,
    steps: usize,
) -> Vec<TrackPoint> {
    let control = ControlInput::new(accel.0, accel.1).expect("finite acceleration");
    (0..steps)
        .map(|k| {
            let t = k as f64 * dt;
            TrackPoint {
                control,
                truth: Vector4::new(
                    start_pos.0 + start_vel.0 * t + 0.5 * accel.0 * t * t,
                    start_pos.1 + start_vel.1 * t + 0.5 * accel.1 * t * t,
                    start_vel.0 + accel.0 * t,
                    start_vel.1 + accel.1 * t,
                ),
            }
        })
        .collect()
}

/// Root-mean-square position error of a sequence of `[x, y]` estimates
/// against the matching true states.
pub fn position_rmse<'a>(
    estimates: impl Iterator<Item = &'a StateVector>,
    truths: impl Iterator<Item = &'a StateVector>,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, t) in estimates.zip(truths) {
        let dx = e[0] - t[0];
        let dy = e[1] - t[1];
        sum += dx * dx + dy * dy;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}
