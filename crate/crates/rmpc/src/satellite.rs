//! In-orbit relative position keeping study: linearized rendezvous dynamics
//! with impulsive thrust, drag, thruster execution errors, and navigation
//! errors that grow with distance and speed.
//!
//! State is `(x, y, z, vx, vy, vz)` in the rotating frame of a circular
//! reference orbit (radial, along-track, cross-track); inputs are per-axis
//! velocity increments applied once per sample period.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::{ControlError, ControllerConfig};
use crate::dynamics::{discretize_impulsive, ContinuousLti, DiscreteLti, DynamicsError};
use crate::polytope::{GeometryError, Polytope};
use crate::uncertainty::{DependencyTerm, NormKind, UncertaintyError, UncertaintyModel};

/// Errors raised while assembling the study.
#[derive(Debug, Error)]
pub enum SatelliteError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Physical and tuning parameters; defaults describe a low Earth orbit
/// station keeping problem with centimeter-level position windows.
#[derive(Clone, Debug, PartialEq)]
pub struct SatelliteParams {
    /// Gravitational parameter of the central body [m^3/s^2].
    pub gravitational_parameter: f64,
    /// Semi-major axis of the circular reference orbit [m].
    pub semi_major_axis: f64,
    /// Period between impulsive burns [s].
    pub sample_period: f64,
    /// Per-axis position window half-width [m].
    pub position_bound: f64,
    /// Per-axis velocity window half-width [m/s].
    pub velocity_bound: f64,
    /// Per-axis bound on each velocity increment [m/s].
    pub input_bound: f64,
    /// Peak unmodeled acceleration per axis, e.g. differential drag [m/s^2].
    pub accel_disturbance: f64,
    /// Fixed execution error of a burn, two-norm bound [m/s].
    pub thruster_fixed_error: f64,
    /// Execution error proportional to the burn magnitude (pointing cone).
    pub thruster_proportional_error: f64,
    /// Fixed per-axis position estimation error [m].
    pub position_estimate_error: f64,
    /// Fixed per-axis velocity estimation error [m/s].
    pub velocity_estimate_error: f64,
    /// Position estimation error proportional to distance from the origin.
    pub position_proportional_error: f64,
    /// Velocity estimation error proportional to the speed.
    pub velocity_proportional_error: f64,
    /// Prediction horizon in samples.
    pub horizon: usize,
    /// Weight of the scaled state cost against the scaled input cost.
    pub lambda: f64,
}

impl Default for SatelliteParams {
    fn default() -> Self {
        SatelliteParams {
            gravitational_parameter: 3.986e14,
            semi_major_axis: 6_793_137.0,
            sample_period: 100.0,
            position_bound: 0.10,
            velocity_bound: 1.0e-3,
            input_bound: 2.0e-3,
            accel_disturbance: 50.0e-9,
            thruster_fixed_error: 1.0e-6,
            thruster_proportional_error: (std::f64::consts::PI / 180.0).tan(),
            position_estimate_error: 4.0e-3,
            velocity_estimate_error: 4.0e-6,
            position_proportional_error: 0.02,
            velocity_proportional_error: 1.0e-3,
            horizon: 4,
            lambda: 3.0e-3,
        }
    }
}

impl SatelliteParams {
    /// Mean motion of the reference orbit [rad/s].
    pub fn orbital_rate(&self) -> f64 {
        (self.gravitational_parameter / self.semi_major_axis.powi(3)).sqrt()
    }

    /// Reference orbit period [s].
    pub fn orbital_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.orbital_rate()
    }

    /// Samples per reference orbit, rounded up.
    pub fn steps_per_orbit(&self) -> usize {
        (self.orbital_period() / self.sample_period).ceil() as usize
    }

    fn validate(&self) -> Result<(), SatelliteError> {
        let positive = [
            ("gravitational_parameter", self.gravitational_parameter),
            ("semi_major_axis", self.semi_major_axis),
            ("sample_period", self.sample_period),
            ("position_bound", self.position_bound),
            ("velocity_bound", self.velocity_bound),
            ("input_bound", self.input_bound),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(SatelliteError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let nonnegative = [
            ("accel_disturbance", self.accel_disturbance),
            ("thruster_fixed_error", self.thruster_fixed_error),
            ("thruster_proportional_error", self.thruster_proportional_error),
            ("position_estimate_error", self.position_estimate_error),
            ("velocity_estimate_error", self.velocity_estimate_error),
            ("position_proportional_error", self.position_proportional_error),
            ("velocity_proportional_error", self.velocity_proportional_error),
            ("lambda", self.lambda),
        ];
        for (name, v) in nonnegative {
            if !v.is_finite() || v < 0.0 {
                return Err(SatelliteError::InvalidParams(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.horizon == 0 {
            return Err(SatelliteError::InvalidParams("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Relative motion around a circular orbit, linearized at the origin:
/// in-plane coupling through the mean motion, cross-track a plain oscillator.
pub fn continuous_dynamics(params: &SatelliteParams) -> Result<ContinuousLti, SatelliteError> {
    params.validate()?;
    let w = params.orbital_rate();
    let mut a = DMatrix::zeros(6, 6);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    a[(3, 0)] = 3.0 * w * w;
    a[(3, 4)] = 2.0 * w;
    a[(4, 3)] = -2.0 * w;
    a[(5, 2)] = -w * w;
    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        b[(3 + i, i)] = 1.0;
    }
    Ok(ContinuousLti::new(a, b)?)
}

/// Fully assembled study: plant, disturbance model, and controller
/// configuration certifying the whole state window.
#[derive(Clone, Debug)]
pub struct SatelliteProblem {
    pub params: SatelliteParams,
    pub plant: DiscreteLti,
    pub config: ControllerConfig,
}

/// Number of stacked disturbance channels the plant accepts.
pub const DISTURBANCE_CHANNELS: usize = 21;

/// Builds the discrete plant and the controller configuration from the
/// physical parameters.
///
/// Disturbance channel layout (21 total): unmodeled acceleration (3, enters
/// through the hold map), fixed estimation error (6, enters as a state offset
/// one sample back), fixed burn error (3, enters like an input), proportional
/// burn error (3, likewise), proportional position estimation error (3), and
/// proportional velocity estimation error (3).
pub fn build_problem(params: &SatelliteParams) -> Result<SatelliteProblem, SatelliteError> {
    params.validate()?;
    let cont = continuous_dynamics(params)?;
    let (a, b, e) = discretize_impulsive(&cont, params.sample_period)?;
    let n = 6;
    let m = 3;

    // position-only and velocity-only injections for the estimation errors
    let mut lift_pos = DMatrix::zeros(n, 3);
    let mut lift_vel = DMatrix::zeros(n, 3);
    for i in 0..3 {
        lift_pos[(i, i)] = 1.0;
        lift_vel[(3 + i, i)] = 1.0;
    }
    let neg_a_pos = -(&a * &lift_pos);
    let neg_a_vel = -(&a * &lift_vel);

    let mut d = DMatrix::zeros(n, DISTURBANCE_CHANNELS);
    d.view_mut((0, 0), (n, 3)).copy_from(&e);
    d.view_mut((0, 3), (n, n)).copy_from(&(-&a));
    d.view_mut((0, 9), (n, 3)).copy_from(&b);
    d.view_mut((0, 12), (n, 3)).copy_from(&b);
    d.view_mut((0, 15), (n, 3)).copy_from(&neg_a_pos);
    d.view_mut((0, 18), (n, 3)).copy_from(&neg_a_vel);

    // independent channels: acceleration (rows 0..3), fixed position and
    // velocity estimation errors (rows 3..9); zero-width channels are dropped
    let half_widths = [
        params.accel_disturbance,
        params.accel_disturbance,
        params.accel_disturbance,
        params.position_estimate_error,
        params.position_estimate_error,
        params.position_estimate_error,
        params.velocity_estimate_error,
        params.velocity_estimate_error,
        params.velocity_estimate_error,
    ];
    let kept: Vec<usize> = (0..9).filter(|&i| half_widths[i] > 0.0).collect();
    let (w_map, w_set) = if kept.is_empty() {
        let unit = Polytope::from_bounds(
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
        )?;
        (DMatrix::zeros(DISTURBANCE_CHANNELS, 1), unit)
    } else {
        let mut w_map = DMatrix::zeros(DISTURBANCE_CHANNELS, kept.len());
        let mut h = DVector::zeros(kept.len());
        for (col, &row) in kept.iter().enumerate() {
            w_map[(row, col)] = 1.0;
            h[col] = half_widths[row];
        }
        let set = Polytope::from_bounds(&(-&h), &h)?;
        (w_map, set)
    };

    let channel = |offset: usize| {
        let mut l = DMatrix::zeros(DISTURBANCE_CHANNELS, 3);
        for i in 0..3 {
            l[(offset + i, i)] = 1.0;
        }
        l
    };
    let mut terms = Vec::new();
    if params.thruster_fixed_error > 0.0 {
        terms.push(DependencyTerm::constant(
            channel(9),
            NormKind::L2,
            params.thruster_fixed_error,
            n,
            m,
        )?);
    }
    if params.thruster_proportional_error > 0.0 {
        terms.push(DependencyTerm::new(
            channel(12),
            NormKind::L2,
            DMatrix::zeros(0, n),
            NormKind::L2,
            DMatrix::identity(m, m),
            NormKind::L2,
            0.0,
            0.0,
            params.thruster_proportional_error,
        )?);
    }
    if params.position_proportional_error > 0.0 {
        terms.push(DependencyTerm::new(
            channel(15),
            NormKind::Linf,
            lift_pos.transpose(),
            NormKind::L2,
            DMatrix::zeros(0, m),
            NormKind::L2,
            0.0,
            params.position_proportional_error,
            0.0,
        )?);
    }
    if params.velocity_proportional_error > 0.0 {
        terms.push(DependencyTerm::new(
            channel(18),
            NormKind::Linf,
            lift_vel.transpose(),
            NormKind::L2,
            DMatrix::zeros(0, m),
            NormKind::L2,
            0.0,
            params.velocity_proportional_error,
            0.0,
        )?);
    }
    let model = UncertaintyModel::new(w_map, w_set, terms, n, m)?;

    let mut state_half = DVector::zeros(n);
    let mut state_scale = DVector::zeros(n);
    for i in 0..3 {
        state_half[i] = params.position_bound;
        state_half[3 + i] = params.velocity_bound;
        state_scale[i] = params.position_bound;
        state_scale[3 + i] = params.velocity_bound;
    }
    let state_set = Polytope::from_bounds(&(-&state_half), &state_half)?;
    let input_half = DVector::from_element(m, params.input_bound);
    let input_set = Polytope::from_bounds(&(-&input_half), &input_half)?;
    let input_scale = DVector::from_element(m, params.input_bound);

    let plant = DiscreteLti::new(a, b, d)?;
    let config = ControllerConfig::new(
        plant.clone(),
        state_set.clone(),
        input_set,
        state_set,
        model,
        params.horizon,
        params.lambda,
        state_scale,
        input_scale,
    )?;
    Ok(SatelliteProblem { params: params.clone(), plant, config })
}
