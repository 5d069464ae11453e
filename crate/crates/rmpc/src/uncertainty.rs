//! Additive disturbance models: a polytopic part that is independent of the
//! operating point plus norm-ball terms whose radii grow affinely with the
//! norms of the current state and input.
//!
//! A model describes the set
//! `P(x, u) = { W w + sum_l L_l q_l : R w <= r, |q_l|_p <= radius_l(x, u) }`
//! with `radius_l(x, u) = c0 + cx |F_x x| + cu |F_u u|`, all coefficients
//! nonnegative.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, AffExpr, ConicProgram, SolveStatus};
use crate::polytope::{GeometryError, Polytope};

/// Errors raised while building or querying an uncertainty model.
#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("radius coefficients must be finite and nonnegative: {0}")]
    NegativeCoefficient(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("solver failed: {0}")]
    Numerical(String),
}

/// The vector norms the model understands.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    /// Hoelder conjugate: `l1 <-> linf`, `l2 <-> l2`.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::Linf,
            NormKind::L2 => NormKind::L2,
            NormKind::Linf => NormKind::L1,
        }
    }

    /// Norm of `v`; empty vectors have norm zero.
    pub fn eval(self, v: &DVector<f64>) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.norm(),
            NormKind::Linf => v.amax(),
        }
    }
}

/// How a stochastic realization is drawn from the disturbance set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStrategy {
    /// Interior draws: convex vertex mixtures and volume-uniform ball points.
    #[default]
    Uniform,
    /// Worst-case flavored draws: random vertices and ball-surface points.
    Extreme,
}

/// One norm-ball disturbance channel with an operating-point dependent radius.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyTerm {
    channel_map: DMatrix<f64>,
    ball_norm: NormKind,
    state_map: DMatrix<f64>,
    state_norm: NormKind,
    input_map: DMatrix<f64>,
    input_norm: NormKind,
    c0: f64,
    cx: f64,
    cu: f64,
}

impl DependencyTerm {
    /// Term `channel_map * q` with `|q|_ball <= c0 + cx |state_map x|_sn +
    /// cu |input_map u|_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channel_map: DMatrix<f64>,
        ball_norm: NormKind,
        state_map: DMatrix<f64>,
        state_norm: NormKind,
        input_map: DMatrix<f64>,
        input_norm: NormKind,
        c0: f64,
        cx: f64,
        cu: f64,
    ) -> Result<Self, UncertaintyError> {
        if channel_map.nrows() == 0 || channel_map.ncols() == 0 {
            return Err(UncertaintyError::DimensionMismatch("empty channel map".into()));
        }
        for (name, c) in [("c0", c0), ("cx", cx), ("cu", cu)] {
            if !c.is_finite() || c < 0.0 {
                return Err(UncertaintyError::NegativeCoefficient(format!("{name} = {c}")));
            }
        }
        if channel_map.iter().any(|v| !v.is_finite())
            || state_map.iter().any(|v| !v.is_finite())
            || input_map.iter().any(|v| !v.is_finite())
        {
            return Err(UncertaintyError::DimensionMismatch("non-finite map entries".into()));
        }
        Ok(DependencyTerm {
            channel_map,
            ball_norm,
            state_map,
            state_norm,
            input_map,
            input_norm,
            c0,
            cx,
            cu,
        })
    }

    /// Term with a fixed radius `c0`, independent of the operating point.
    pub fn constant(
        channel_map: DMatrix<f64>,
        ball_norm: NormKind,
        c0: f64,
        num_states: usize,
        num_inputs: usize,
    ) -> Result<Self, UncertaintyError> {
        DependencyTerm::new(
            channel_map,
            ball_norm,
            DMatrix::zeros(0, num_states),
            NormKind::L2,
            DMatrix::zeros(0, num_inputs),
            NormKind::L2,
            c0,
            0.0,
            0.0,
        )
    }

    /// Ball radius at the operating point `(x, u)`.
    pub fn radius(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut r = self.c0;
        if self.cx > 0.0 {
            r += self.cx * self.state_norm.eval(&(&self.state_map * x));
        }
        if self.cu > 0.0 {
            r += self.cu * self.input_norm.eval(&(&self.input_map * u));
        }
        r
    }

    pub fn channel_map(&self) -> &DMatrix<f64> {
        &self.channel_map
    }

    pub fn ball_norm(&self) -> NormKind {
        self.ball_norm
    }

    pub fn state_map(&self) -> &DMatrix<f64> {
        &self.state_map
    }

    pub fn state_norm(&self) -> NormKind {
        self.state_norm
    }

    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }

    pub fn input_norm(&self) -> NormKind {
        self.input_norm
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cu(&self) -> f64 {
        self.cu
    }

    /// Whether the radius actually varies with the operating point.
    pub fn is_dependent(&self) -> bool {
        self.cx > 0.0 || self.cu > 0.0
    }
}

/// Full disturbance model for a plant with fixed state and input dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyModel {
    independent_map: DMatrix<f64>,
    independent_set: Polytope,
    terms: Vec<DependencyTerm>,
    vertices: Vec<DVector<f64>>,
    num_states: usize,
    num_inputs: usize,
}

impl UncertaintyModel {
    /// Builds and validates a model; the independent set must be bounded,
    /// nonempty, and full dimensional (its vertices are cached here).
    pub fn new(
        independent_map: DMatrix<f64>,
        independent_set: Polytope,
        terms: Vec<DependencyTerm>,
        num_states: usize,
        num_inputs: usize,
    ) -> Result<Self, UncertaintyError> {
        let d = independent_map.nrows();
        if d == 0 {
            return Err(UncertaintyError::DimensionMismatch("empty independent map".into()));
        }
        if independent_map.iter().any(|v| !v.is_finite()) {
            return Err(UncertaintyError::DimensionMismatch(
                "non-finite independent map".into(),
            ));
        }
        if independent_set.dim() != independent_map.ncols() {
            return Err(UncertaintyError::DimensionMismatch(format!(
                "independent set dimension {} but map has {} columns",
                independent_set.dim(),
                independent_map.ncols()
            )));
        }
        independent_set.verify()?;
        let vertices = independent_set.vertices()?;
        for (l, term) in terms.iter().enumerate() {
            if term.channel_map.nrows() != d {
                return Err(UncertaintyError::DimensionMismatch(format!(
                    "term {l}: channel map has {} rows, expected {}",
                    term.channel_map.nrows(),
                    d
                )));
            }
            if term.state_map.ncols() != num_states {
                return Err(UncertaintyError::DimensionMismatch(format!(
                    "term {l}: state map has {} columns for {} states",
                    term.state_map.ncols(),
                    num_states
                )));
            }
            if term.input_map.ncols() != num_inputs {
                return Err(UncertaintyError::DimensionMismatch(format!(
                    "term {l}: input map has {} columns for {} inputs",
                    term.input_map.ncols(),
                    num_inputs
                )));
            }
        }
        Ok(UncertaintyModel {
            independent_map,
            independent_set,
            terms,
            vertices,
            num_states,
            num_inputs,
        })
    }

    /// Model whose disturbance set is `{0}`.
    pub fn zero(dimension: usize, num_states: usize, num_inputs: usize) -> Self {
        let unit = Polytope::from_bounds(
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
        )
        .expect("unit interval is a valid box");
        UncertaintyModel::new(
            DMatrix::zeros(dimension, 1),
            unit,
            Vec::new(),
            num_states,
            num_inputs,
        )
        .expect("zero model is always valid")
    }

    /// Dimension of the disturbance vector `p`.
    pub fn dimension(&self) -> usize {
        self.independent_map.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn independent_map(&self) -> &DMatrix<f64> {
        &self.independent_map
    }

    pub fn independent_set(&self) -> &Polytope {
        &self.independent_set
    }

    pub fn independent_vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn terms(&self) -> &[DependencyTerm] {
        &self.terms
    }

    /// Whether any term's radius varies with the operating point.
    pub fn is_dependent(&self) -> bool {
        self.terms.iter().any(|t| t.is_dependent())
    }

    /// Draws one realization at `(x, u)` from a fresh seeded generator.
    pub fn sample(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        seed: u64,
        strategy: SampleStrategy,
    ) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(x, u, &mut rng, strategy)
    }

    /// Draws one realization at `(x, u)` using the caller's generator.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
        strategy: SampleStrategy,
    ) -> DVector<f64> {
        assert_eq!(x.len(), self.num_states, "state dimension mismatch in sample");
        assert_eq!(u.len(), self.num_inputs, "input dimension mismatch in sample");
        let w = match strategy {
            SampleStrategy::Uniform => {
                // flat Dirichlet weights over the vertex set
                let weights: Vec<f64> =
                    self.vertices.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = weights.iter().sum();
                let mut w = DVector::zeros(self.independent_set.dim());
                for (wt, v) in weights.iter().zip(&self.vertices) {
                    w.axpy(wt / total, v, 1.0);
                }
                w
            }
            SampleStrategy::Extreme => {
                self.vertices[rng.random_range(0..self.vertices.len())].clone()
            }
        };
        let mut p = &self.independent_map * w;
        for term in &self.terms {
            let rho = term.radius(x, u);
            let dl = term.channel_map.ncols();
            let q = match strategy {
                SampleStrategy::Uniform => sample_ball_interior(rng, dl, rho, term.ball_norm),
                SampleStrategy::Extreme => sample_ball_surface(rng, dl, rho, term.ball_norm),
            };
            p += &term.channel_map * q;
        }
        p
    }

    /// Smallest uniform relaxation `tau` of every set description row that
    /// admits `p` at the operating point `(x, u)`; zero (up to solver
    /// tolerance) certifies membership.
    pub fn membership_violation(
        &self,
        p: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<f64, UncertaintyError> {
        if p.len() != self.dimension() {
            return Err(UncertaintyError::DimensionMismatch(format!(
                "point has {} entries, disturbance dimension is {}",
                p.len(),
                self.dimension()
            )));
        }
        let mut prog = ConicProgram::new();
        let tau = prog.add_var("tau");
        prog.set_objective(tau, 1.0);
        prog.add_geq(&AffExpr::term(tau, 1.0), 0.0);
        let w = prog.add_vars("w", self.independent_set.dim());
        let set = &self.independent_set;
        for j in 0..set.num_facets() {
            let mut row = AffExpr::constant(0.0);
            for i in 0..set.dim() {
                row.add_term(w.start + i, set.normals()[(j, i)]);
            }
            row.add_term(tau, -(1.0 + set.offsets()[j].abs()));
            prog.add_leq(&row, set.offsets()[j]);
        }
        let mut q_vars = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let q = prog.add_vars("q", term.channel_map.ncols());
            let exprs: Vec<AffExpr> =
                q.clone().map(|v| AffExpr::term(v, 1.0)).collect();
            let s = prog.add_norm_epigraph(&exprs, term.ball_norm);
            let rho = term.radius(x, u);
            let mut cap = AffExpr::term(s, 1.0);
            cap.add_term(tau, -(1.0 + rho));
            prog.add_leq(&cap, rho);
            q_vars.push(q);
        }
        let scale = 1.0 + if p.is_empty() { 0.0 } else { p.amax() };
        for i in 0..self.dimension() {
            let mut expr = AffExpr::constant(-p[i]);
            for c in 0..set.dim() {
                expr.add_term(w.start + c, self.independent_map[(i, c)]);
            }
            for (term, q) in self.terms.iter().zip(&q_vars) {
                for c in 0..term.channel_map.ncols() {
                    expr.add_term(q.start + c, term.channel_map[(i, c)]);
                }
            }
            let mut upper = expr.clone();
            upper.add_term(tau, -scale);
            prog.add_leq(&upper, 0.0);
            let mut lower = expr;
            lower.add_term(tau, scale);
            prog.add_geq(&lower, 0.0);
        }
        let sol = conic::solve(&prog, conic::solver_tolerance())
            .map_err(|e| UncertaintyError::Numerical(e.to_string()))?;
        match sol.status {
            SolveStatus::Optimal => Ok(sol.objective.unwrap().max(0.0)),
            other => Err(UncertaintyError::Numerical(format!(
                "membership solve ended with {other:?}"
            ))),
        }
    }

    /// Largest radius each term attains anywhere on `x_set x u_set`, found by
    /// scanning the vertices (the radius is convex in `x` and `u`).
    pub fn hull_bound(
        &self,
        x_set: &Polytope,
        u_set: &Polytope,
    ) -> Result<Vec<f64>, UncertaintyError> {
        let need_x = self.terms.iter().any(|t| t.cx > 0.0);
        let need_u = self.terms.iter().any(|t| t.cu > 0.0);
        let x_verts = if need_x { x_set.vertices()? } else { Vec::new() };
        let u_verts = if need_u { u_set.vertices()? } else { Vec::new() };
        let mut bounds = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut bound = term.c0;
            if term.cx > 0.0 {
                let peak = x_verts
                    .iter()
                    .map(|v| term.state_norm.eval(&(&term.state_map * v)))
                    .fold(0.0f64, f64::max);
                bound += term.cx * peak;
            }
            if term.cu > 0.0 {
                let peak = u_verts
                    .iter()
                    .map(|v| term.input_norm.eval(&(&term.input_map * v)))
                    .fold(0.0f64, f64::max);
                bound += term.cu * peak;
            }
            bounds.push(bound);
        }
        Ok(bounds)
    }

    /// Rigid over-approximation: every dependent radius is frozen at its
    /// largest value over `x_set x u_set`.
    pub fn to_conservative(
        &self,
        x_set: &Polytope,
        u_set: &Polytope,
    ) -> Result<UncertaintyModel, UncertaintyError> {
        let bounds = self.hull_bound(x_set, u_set)?;
        let terms = self
            .terms
            .iter()
            .zip(&bounds)
            .map(|(term, &bound)| {
                DependencyTerm::constant(
                    term.channel_map.clone(),
                    term.ball_norm,
                    bound,
                    self.num_states,
                    self.num_inputs,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        UncertaintyModel::new(
            self.independent_map.clone(),
            self.independent_set.clone(),
            terms,
            self.num_states,
            self.num_inputs,
        )
    }
}

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Volume-uniform draw from the `norm`-ball of radius `rho`.
fn sample_ball_interior<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    rho: f64,
    norm: NormKind,
) -> DVector<f64> {
    if rho <= 0.0 {
        return DVector::zeros(dim);
    }
    match norm {
        NormKind::Linf => {
            DVector::from_fn(dim, |_, _| rho * (2.0 * rng.random::<f64>() - 1.0))
        }
        NormKind::L2 | NormKind::L1 => {
            // direction with uniform cone measure, radius via inverse cdf
            let raw = match norm {
                NormKind::L2 => gaussian_vector(rng, dim),
                _ => DVector::from_fn(dim, |_, _| {
                    let mag: f64 = rng.sample(Exp1);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                }),
            };
            let len = norm.eval(&raw);
            if len < 1e-300 {
                return DVector::zeros(dim);
            }
            let radius = rho * rng.random::<f64>().powf(1.0 / dim as f64);
            raw * (radius / len)
        }
    }
}

/// Uniformly random direction scaled to sit exactly on the `norm`-sphere of
/// radius `rho`.
fn sample_ball_surface<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    rho: f64,
    norm: NormKind,
) -> DVector<f64> {
    if rho <= 0.0 {
        return DVector::zeros(dim);
    }
    for _ in 0..16 {
        let raw = gaussian_vector(rng, dim);
        let len = norm.eval(&raw);
        if len >= 1e-300 {
            return raw * (rho / len);
        }
    }
    let mut fallback = DVector::zeros(dim);
    fallback[0] = rho;
    fallback
}
