//! Linear time-invariant models, impulsive discretization, and the impulse
//! response stacks used to eliminate predicted states from the horizon
//! program.

use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised by model construction and discretization.
#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sampling period {0}")]
    InvalidTimestep(f64),
    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("non-finite result: {0}")]
    NonFiniteResult(String),
}

/// Continuous-time model `xdot = a x + b u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if a.nrows() != a.ncols() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "state matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "input matrix has {} rows for {} states",
                b.nrows(),
                a.nrows()
            )));
        }
        Ok(ContinuousLti { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }
}

/// Discrete-time model `x+ = a x + b u + d p` with `p` the stacked
/// disturbance channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl DiscreteLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if a.nrows() != a.ncols() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "state matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || d.nrows() != a.nrows() {
            return Err(DynamicsError::DimensionMismatch(format!(
                "input map has {} rows and disturbance map {} rows for {} states",
                b.nrows(),
                d.nrows(),
                a.nrows()
            )));
        }
        Ok(DiscreteLti { a, b, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_disturbances(&self) -> usize {
        self.d.ncols()
    }
}

/// Discretizes `xdot = a x + b u` over one period `ts`, treating the input as
/// an impulsive increment applied at the start of the interval.
///
/// Returns `(a_d, b_d, e_d)` where `a_d = exp(a ts)`, `b_d = a_d b` maps the
/// impulse, and `e_d = int_0^ts exp(a (ts - tau)) b dtau` maps an input held
/// constant over the interval (the shape a slowly varying disturbance enters
/// through).  The integral comes from one matrix exponential of the block
/// `[[a, b], [0, 0]]` scaled by `ts`.
pub fn discretize_impulsive(
    sys: &ContinuousLti,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    if !ts.is_finite() || ts <= 0.0 {
        return Err(DynamicsError::InvalidTimestep(ts));
    }
    let n = sys.num_states();
    let m = sys.b.ncols();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    block.view_mut((0, n), (n, m)).copy_from(&sys.b);
    let phi = (block * ts).exp();
    let a_d = phi.view((0, 0), (n, n)).into_owned();
    let e_d = phi.view((0, n), (n, m)).into_owned();
    let b_d = &a_d * &sys.b;
    for (name, mat) in [("state map", &a_d), ("impulse map", &b_d), ("hold map", &e_d)] {
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteResult(format!(
                "{name} overflowed during discretization"
            )));
        }
    }
    Ok((a_d, b_d, e_d))
}

/// Impulse responses of a [`DiscreteLti`] over a prediction horizon.
///
/// For step `t` in `1..=horizon`, the predicted state is
/// `x_t = a^t x_0 + sum_i input_map(t, i) u_i + sum_i disturbance_map(t, i) p_i`
/// with `i` ranging over `0..t`.
#[derive(Clone, Debug)]
pub struct ImpulseStacks {
    horizon: usize,
    a_powers: Vec<DMatrix<f64>>,
    input: Vec<Vec<DMatrix<f64>>>,
    disturbance: Vec<Vec<DMatrix<f64>>>,
}

impl ImpulseStacks {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `a^t` for `t` in `0..=horizon`.
    pub fn a_power(&self, t: usize) -> &DMatrix<f64> {
        &self.a_powers[t]
    }

    /// `a^(t-1-i) b` for `t` in `1..=horizon`, `i < t`.
    pub fn input_map(&self, t: usize, i: usize) -> &DMatrix<f64> {
        &self.input[t - 1][i]
    }

    /// `a^(t-1-i) d` for `t` in `1..=horizon`, `i < t`.
    pub fn disturbance_map(&self, t: usize, i: usize) -> &DMatrix<f64> {
        &self.disturbance[t - 1][i]
    }
}

/// Precomputes the impulse response stacks for the given horizon.
pub fn impulse_stacks(sys: &DiscreteLti, horizon: usize) -> Result<ImpulseStacks, DynamicsError> {
    if horizon == 0 {
        return Err(DynamicsError::InvalidHorizon(horizon));
    }
    let n = sys.num_states();
    let mut a_powers = Vec::with_capacity(horizon + 1);
    a_powers.push(DMatrix::identity(n, n));
    for t in 1..=horizon {
        let next = &a_powers[t - 1] * sys.a();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteResult(format!(
                "state transition power {t} overflowed"
            )));
        }
        a_powers.push(next);
    }
    let mut input = Vec::with_capacity(horizon);
    let mut disturbance = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut row_b = Vec::with_capacity(t);
        let mut row_d = Vec::with_capacity(t);
        for i in 0..t {
            row_b.push(&a_powers[t - 1 - i] * sys.b());
            row_d.push(&a_powers[t - 1 - i] * sys.d());
        }
        input.push(row_b);
        disturbance.push(row_d);
    }
    Ok(ImpulseStacks { horizon, a_powers, input, disturbance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, DVector};

    #[test]
    fn double_integrator_discretizes_exactly() {
        let sys = ContinuousLti::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]).unwrap();
        let h = 0.7;
        let (a, b, e) = discretize_impulsive(&sys, h).unwrap();
        // exp of a nilpotent matrix is the truncated series
        assert_abs_diff_eq!(a[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(0, 1)], h, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(1, 1)], 1.0, epsilon = 1e-12);
        // impulse: velocity kick then drift
        assert_abs_diff_eq!(b[(0, 0)], h, epsilon = 1e-12);
        assert_abs_diff_eq!(b[(1, 0)], 1.0, epsilon = 1e-12);
        // held input: standard zero-order hold integral
        assert_abs_diff_eq!(e[(0, 0)], h * h / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[(1, 0)], h, epsilon = 1e-12);
    }

    #[test]
    fn scalar_exponential_closed_form() {
        let lam = -0.4;
        let sys = ContinuousLti::new(dmatrix![lam], dmatrix![1.0]).unwrap();
        let h = 2.5;
        let (a, b, e) = discretize_impulsive(&sys, h).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], (lam * h).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(b[(0, 0)], (lam * h).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[(0, 0)], ((lam * h).exp() - 1.0) / lam, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_timestep() {
        let sys = ContinuousLti::new(dmatrix![0.0], dmatrix![1.0]).unwrap();
        assert!(matches!(
            discretize_impulsive(&sys, 0.0),
            Err(DynamicsError::InvalidTimestep(_))
        ));
        assert!(matches!(
            discretize_impulsive(&sys, -1.0),
            Err(DynamicsError::InvalidTimestep(_))
        ));
    }

    #[test]
    fn overflow_is_reported() {
        let sys = ContinuousLti::new(dmatrix![1.0e4], dmatrix![1.0]).unwrap();
        assert!(matches!(
            discretize_impulsive(&sys, 1.0e3),
            Err(DynamicsError::NonFiniteResult(_))
        ));
    }

    #[test]
    fn stacks_match_direct_powers() {
        let sys = DiscreteLti::new(
            dmatrix![0.9, 0.1; 0.0, 0.8],
            dmatrix![0.0; 1.0],
            dmatrix![1.0; 0.5],
        )
        .unwrap();
        let stacks = impulse_stacks(&sys, 4).unwrap();
        assert_eq!(stacks.horizon(), 4);
        // newest entry is the raw map, oldest carries the highest power
        assert_abs_diff_eq!(
            (stacks.input_map(3, 2) - sys.b()).norm(),
            0.0,
            epsilon = 1e-14
        );
        let a2b = sys.a() * sys.a() * sys.b();
        assert_abs_diff_eq!((stacks.input_map(3, 0) - &a2b).norm(), 0.0, epsilon = 1e-14);
        let a3 = sys.a() * sys.a() * sys.a();
        assert_abs_diff_eq!((stacks.a_power(3) - &a3).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn stacks_reconstruct_rollout() {
        // x_t from the stacks must match step-by-step propagation
        let sys = DiscreteLti::new(
            dmatrix![0.9, 0.2; -0.1, 0.95],
            dmatrix![0.1; 0.2],
            dmatrix![0.05; 0.01],
        )
        .unwrap();
        let stacks = impulse_stacks(&sys, 5).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let us = [0.3, -0.2, 0.1, 0.0, 0.25];
        let ps = [0.01, -0.02, 0.0, 0.03, -0.01];
        let mut x = x0.clone();
        for t in 1..=5usize {
            x = sys.a() * &x
                + sys.b() * DVector::from_vec(vec![us[t - 1]])
                + sys.d() * DVector::from_vec(vec![ps[t - 1]]);
            let mut pred = stacks.a_power(t) * &x0;
            for i in 0..t {
                pred += stacks.input_map(t, i) * DVector::from_vec(vec![us[i]]);
                pred += stacks.disturbance_map(t, i) * DVector::from_vec(vec![ps[i]]);
            }
            assert_abs_diff_eq!((&pred - &x).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_horizon_rejected() {
        let sys =
            DiscreteLti::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert!(matches!(impulse_stacks(&sys, 0), Err(DynamicsError::InvalidHorizon(0))));
    }
}
