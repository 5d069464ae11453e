//! Convex polytopes in halfspace form and the set queries the controller
//! needs: support values, vertex enumeration, membership, and bounding boxes.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{self, AffExpr, ConicProgram, SolveStatus};

/// Relative tolerance for membership and vertex deduplication predicates.
const EPS: f64 = 1e-9;

/// Errors raised by polytope construction and queries.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("set is unbounded")]
    UnboundedSet,
    #[error("set is empty")]
    EmptySet,
    #[error("set has empty interior")]
    DegenerateSet,
    #[error("solver failed: {0}")]
    Numerical(String),
}

/// Polytope `{ z : normals * z <= offsets }`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl Polytope {
    /// Builds from halfspace data after structural checks only; call
    /// [`Polytope::verify`] to confirm the set is bounded and nonempty.
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, GeometryError> {
        if normals.nrows() != offsets.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} facet normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if normals.nrows() == 0 || normals.ncols() == 0 {
            return Err(GeometryError::DimensionMismatch("empty halfspace description".into()));
        }
        if normals.iter().any(|v| !v.is_finite()) || offsets.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::DimensionMismatch("non-finite halfspace data".into()));
        }
        Ok(Polytope { normals, offsets })
    }

    /// Axis-aligned box `{ z : lower <= z <= upper }` with strictly ordered
    /// finite bounds.  Facets are ordered upper bounds first, then lower.
    pub fn from_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self, GeometryError> {
        let n = lower.len();
        if n == 0 || upper.len() != n {
            return Err(GeometryError::InvalidBounds(format!(
                "lower has {} entries, upper has {}",
                n,
                upper.len()
            )));
        }
        for i in 0..n {
            if !lower[i].is_finite() || !upper[i].is_finite() || lower[i] >= upper[i] {
                return Err(GeometryError::InvalidBounds(format!(
                    "axis {}: need finite lower < upper, got [{}, {}]",
                    i, lower[i], upper[i]
                )));
            }
        }
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(i, i)] = 1.0;
            offsets[i] = upper[i];
            normals[(n + i, i)] = -1.0;
            offsets[n + i] = -lower[i];
        }
        Ok(Polytope { normals, offsets })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Same facet normals with offsets scaled by `alpha`.
    pub fn scale_offsets(&self, alpha: f64) -> Polytope {
        Polytope { normals: self.normals.clone(), offsets: &self.offsets * alpha }
    }

    /// Confirms the set is bounded and nonempty via support solves along
    /// every coordinate axis.
    pub fn verify(&self) -> Result<(), GeometryError> {
        for i in 0..self.dim() {
            let mut dir = DVector::zeros(self.dim());
            dir[i] = 1.0;
            self.support(&dir)?;
            dir[i] = -1.0;
            self.support(&dir)?;
        }
        Ok(())
    }

    /// Support value `max { direction . z : z in set }`.
    pub fn support(&self, direction: &DVector<f64>) -> Result<f64, GeometryError> {
        if direction.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "direction has {} entries for a {}-dimensional set",
                direction.len(),
                self.dim()
            )));
        }
        let mut prog = ConicProgram::new();
        let z = prog.add_vars("z", self.dim());
        for (i, &d) in direction.iter().enumerate() {
            prog.set_objective(z.start + i, -d);
        }
        self.add_membership_rows(&mut prog, z.start);
        let sol = conic::solve(&prog, conic::solver_tolerance())
            .map_err(|e| GeometryError::Numerical(e.to_string()))?;
        match sol.status {
            SolveStatus::Optimal => Ok(-sol.objective.unwrap()),
            SolveStatus::Unbounded => Err(GeometryError::UnboundedSet),
            SolveStatus::Infeasible => Err(GeometryError::EmptySet),
            SolveStatus::NumericalFailure => {
                Err(GeometryError::Numerical("support solve failed".into()))
            }
        }
    }

    /// Adds the rows `normals * z <= offsets` for variables starting at `z0`.
    fn add_membership_rows(&self, prog: &mut ConicProgram, z0: usize) {
        for j in 0..self.num_facets() {
            let mut row = AffExpr::constant(0.0);
            for i in 0..self.dim() {
                row.add_term(z0 + i, self.normals[(j, i)]);
            }
            prog.add_leq(&row, self.offsets[j]);
        }
    }

    /// Componentwise `(lower, upper)` bounds of the set.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            let mut dir = DVector::zeros(n);
            dir[i] = 1.0;
            upper[i] = self.support(&dir)?;
            dir[i] = -1.0;
            lower[i] = -self.support(&dir)?;
        }
        Ok((lower, upper))
    }

    /// Radius of the largest inscribed ball; zero means empty interior.
    pub fn chebyshev_radius(&self) -> Result<f64, GeometryError> {
        let mut prog = ConicProgram::new();
        let z = prog.add_vars("z", self.dim());
        let r = prog.add_var("r");
        prog.set_objective(r, -1.0);
        prog.add_geq(&AffExpr::term(r, 1.0), 0.0);
        for j in 0..self.num_facets() {
            let mut row = AffExpr::constant(0.0);
            for i in 0..self.dim() {
                row.add_term(z.start + i, self.normals[(j, i)]);
            }
            row.add_term(r, self.normals.row(j).norm());
            prog.add_leq(&row, self.offsets[j]);
        }
        let sol = conic::solve(&prog, conic::solver_tolerance())
            .map_err(|e| GeometryError::Numerical(e.to_string()))?;
        match sol.status {
            SolveStatus::Optimal => Ok(-sol.objective.unwrap()),
            SolveStatus::Unbounded => Err(GeometryError::UnboundedSet),
            SolveStatus::Infeasible => Err(GeometryError::EmptySet),
            SolveStatus::NumericalFailure => {
                Err(GeometryError::Numerical("inscribed-ball solve failed".into()))
            }
        }
    }

    /// Membership test `normals * x <= offsets` with per-row slack
    /// `tol * (1 + |offset|)`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool, GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch(format!(
                "point has {} entries for a {}-dimensional set",
                x.len(),
                self.dim()
            )));
        }
        for j in 0..self.num_facets() {
            let lhs = self.normals.row(j).transpose().dot(x);
            if lhs > self.offsets[j] + tol * (1.0 + self.offsets[j].abs()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Enumerates the vertices by intersecting every combination of `dim`
    /// facets and keeping the feasible, deduplicated solutions.
    ///
    /// Cost grows combinatorially in the facet count; intended for the low
    /// dimensional sets this crate works with.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, GeometryError> {
        let n = self.dim();
        let (lower, upper) = self.bounding_box()?;
        let scale = lower.amax().max(upper.amax());
        if self.chebyshev_radius()? <= EPS * (1.0 + scale) {
            return Err(GeometryError::DegenerateSet);
        }
        let mut verts: Vec<DVector<f64>> = Vec::new();
        for combo in (0..self.num_facets()).combinations(n) {
            let mut basis = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (k, &j) in combo.iter().enumerate() {
                basis.row_mut(k).copy_from(&self.normals.row(j));
                rhs[k] = self.offsets[j];
            }
            let lu = basis.full_piv_lu();
            let Some(candidate) = lu.solve(&rhs) else {
                continue;
            };
            if !candidate.iter().all(|v| v.is_finite()) {
                continue;
            }
            if !self.contains(&candidate, EPS)? {
                continue;
            }
            let dup = verts.iter().any(|v| {
                (&candidate - v).amax() <= EPS * (1.0 + candidate.amax())
            });
            if !dup {
                verts.push(candidate);
            }
        }
        Ok(verts)
    }
}
