//! Solver-agnostic conic program container and the interior-point backend.
//!
//! Programs are built row by row: each row is an affine expression of the
//! decision variables, and consecutive rows are grouped into blocks that must
//! land in the zero cone, the nonnegative orthant, or a second-order cone.
//! The backend translates the blocks into the `A x + s = b, s in K` form
//! expected by the interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{NonnegativeConeT, SecondOrderConeT, ZeroConeT},
};
use serde::Serialize;
use thiserror::Error;

use crate::uncertainty::NormKind;

/// Errors raised while building or solving a conic program.
#[derive(Debug, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Solver tolerance used when none is supplied explicitly.
///
/// `RMPC_SOLVER_TOL` overrides the built-in default of `1e-9`; invalid or
/// non-positive values are ignored.
pub fn solver_tolerance() -> f64 {
    std::env::var("RMPC_SOLVER_TOL")
        .ok()
        .and_then(|raw| raw.parse::<f64>().ok())
        .filter(|tol| tol.is_finite() && *tol > 0.0)
        .unwrap_or(1e-9)
}

/// Affine expression `sum coeff * x_var + constant` over program variables.
#[derive(Clone, Debug, Default, Serialize)]
pub struct AffExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffExpr {
    /// Expression with no variable terms.
    pub fn constant(value: f64) -> Self {
        AffExpr { terms: Vec::new(), constant: value }
    }

    /// Single-term expression `coeff * x_var`.
    pub fn term(var: usize, coeff: f64) -> Self {
        AffExpr { terms: vec![(var, coeff)], constant: 0.0 }
    }

    pub fn add_term(&mut self, var: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((var, coeff));
        }
    }

    /// Adds `scale * other` to this expression.
    pub fn add_scaled(&mut self, scale: f64, other: &AffExpr) {
        if scale == 0.0 {
            return;
        }
        self.constant += scale * other.constant;
        for &(var, coeff) in &other.terms {
            self.add_term(var, scale * coeff);
        }
    }

    pub fn scaled(&self, scale: f64) -> AffExpr {
        let mut out = AffExpr::constant(0.0);
        out.add_scaled(scale, self);
        out
    }

    /// Value of the expression at the point `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(var, coeff)| acc + coeff * x[var])
    }
}

/// Cone kind of a row block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConeTag {
    /// Rows equal to zero.
    Zero,
    /// Rows nonnegative.
    NonNeg,
    /// Rows `(t, z)` with `t >= |z|_2`.
    Soc,
}

#[derive(Clone, Debug, Serialize)]
struct ConeBlock {
    tag: ConeTag,
    rows: Vec<AffExpr>,
}

/// Conic program `min objective . x  s.t.  each row block lies in its cone`.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    objective: Vec<f64>,
    blocks: Vec<ConeBlock>,
    /// Primal warm start hint; backends may ignore it.
    pub warm_start: Option<Vec<f64>>,
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram::default()
    }

    /// Adds a variable (zero objective coefficient) and returns its index.
    pub fn add_var(&mut self, name: &str) -> usize {
        self.names.push(name.to_string());
        self.objective.push(0.0);
        self.names.len() - 1
    }

    /// Adds `count` variables named `prefix0..` and returns their index range.
    pub fn add_vars(&mut self, prefix: &str, count: usize) -> std::ops::Range<usize> {
        let start = self.names.len();
        for i in 0..count {
            self.add_var(&format!("{prefix}{i}"));
        }
        start..start + count
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn var_name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    /// Number of rows across blocks with the given tag.
    pub fn rows_with_tag(&self, tag: ConeTag) -> usize {
        self.blocks.iter().filter(|b| b.tag == tag).map(|b| b.rows.len()).sum()
    }

    /// Dimensions of the second-order cone blocks, in order.
    pub fn soc_dims(&self) -> Vec<usize> {
        self.blocks.iter().filter(|b| b.tag == ConeTag::Soc).map(|b| b.rows.len()).collect()
    }

    fn push_row(&mut self, tag: ConeTag, row: AffExpr) {
        debug_assert!(tag != ConeTag::Soc);
        match self.blocks.last_mut() {
            Some(block) if block.tag == tag => block.rows.push(row),
            _ => self.blocks.push(ConeBlock { tag, rows: vec![row] }),
        }
    }

    /// Constrains `expr <= rhs`.
    pub fn add_leq(&mut self, expr: &AffExpr, rhs: f64) {
        let mut row = expr.scaled(-1.0);
        row.constant += rhs;
        self.push_row(ConeTag::NonNeg, row);
    }

    /// Constrains `expr >= rhs`.
    pub fn add_geq(&mut self, expr: &AffExpr, rhs: f64) {
        let mut row = expr.clone();
        row.constant -= rhs;
        self.push_row(ConeTag::NonNeg, row);
    }

    /// Constrains `expr == rhs`.
    pub fn add_eq(&mut self, expr: &AffExpr, rhs: f64) {
        let mut row = expr.clone();
        row.constant -= rhs;
        self.push_row(ConeTag::Zero, row);
    }

    /// Constrains `rows[0] >= |rows[1..]|_2`.
    pub fn add_soc(&mut self, rows: Vec<AffExpr>) {
        assert!(rows.len() >= 2, "second-order cone needs at least two rows");
        self.blocks.push(ConeBlock { tag: ConeTag::Soc, rows });
    }

    /// Adds a variable `s >= |exprs|_norm` and returns its index.
    ///
    /// The infinity norm expands into `2 * exprs.len()` linear rows, the one
    /// norm into one auxiliary variable per entry plus a summing row, and the
    /// two norm into a single second-order cone.
    pub fn add_norm_epigraph(&mut self, exprs: &[AffExpr], norm: NormKind) -> usize {
        assert!(!exprs.is_empty(), "norm epigraph needs at least one entry");
        let s = self.add_var("epi");
        match norm {
            NormKind::L2 => {
                let mut rows = vec![AffExpr::term(s, 1.0)];
                rows.extend(exprs.iter().cloned());
                self.add_soc(rows);
            }
            NormKind::Linf => {
                for e in exprs {
                    // e <= s and -e <= s
                    let mut upper = AffExpr::term(s, 1.0);
                    upper.add_scaled(-1.0, e);
                    self.push_row(ConeTag::NonNeg, upper);
                    let mut lower = AffExpr::term(s, 1.0);
                    lower.add_scaled(1.0, e);
                    self.push_row(ConeTag::NonNeg, lower);
                }
            }
            NormKind::L1 => {
                let mut sum = AffExpr::term(s, 1.0);
                for e in exprs {
                    let t = self.add_var("abs");
                    let mut upper = AffExpr::term(t, 1.0);
                    upper.add_scaled(-1.0, e);
                    self.push_row(ConeTag::NonNeg, upper);
                    let mut lower = AffExpr::term(t, 1.0);
                    lower.add_scaled(1.0, e);
                    self.push_row(ConeTag::NonNeg, lower);
                    sum.add_term(t, -1.0);
                }
                self.push_row(ConeTag::NonNeg, sum);
            }
        }
        s
    }

    /// Adds a variable `s >= sum exprs[i]^2` and returns its index.
    ///
    /// Uses the rotated-cone identity `|(2 e, 1 - s)|_2 <= 1 + s`.
    pub fn add_quadratic_epigraph(&mut self, exprs: &[AffExpr]) -> usize {
        assert!(!exprs.is_empty(), "quadratic epigraph needs at least one entry");
        let s = self.add_var("quad");
        let mut rows = Vec::with_capacity(exprs.len() + 2);
        let mut head = AffExpr::term(s, 1.0);
        head.constant = 1.0;
        rows.push(head);
        for e in exprs {
            rows.push(e.scaled(2.0));
        }
        let mut tail = AffExpr::term(s, -1.0);
        tail.constant = 1.0;
        rows.push(tail);
        self.add_soc(rows);
        s
    }

    /// Structural checks: variable indices in range, finite data, usable cones.
    pub fn validate(&self) -> Result<(), ConicError> {
        if self.names.is_empty() {
            return Err(ConicError::Malformed("program has no variables".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(ConicError::Malformed("objective has non-finite coefficients".into()));
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.tag == ConeTag::Soc && block.rows.len() < 2 {
                return Err(ConicError::Malformed(format!("block {bi}: cone of dimension < 2")));
            }
            for row in &block.rows {
                if !row.constant.is_finite() {
                    return Err(ConicError::Malformed(format!("block {bi}: non-finite constant")));
                }
                for &(var, coeff) in &row.terms {
                    if var >= self.names.len() {
                        return Err(ConicError::Malformed(format!(
                            "block {bi}: variable index {var} out of range"
                        )));
                    }
                    if !coeff.is_finite() {
                        return Err(ConicError::Malformed(format!(
                            "block {bi}: non-finite coefficient on variable {var}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// JSON snapshot of the full program for debugging failed solves.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "num_vars": self.num_vars(),
            "names": self.names,
            "objective": self.objective,
            "blocks": self.blocks,
        })
    }
}

/// Termination status of a solve, normalized across backends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Result of a solve; primal values are present only for `Optimal`.
#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    pub primal: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Wall-clock seconds spent inside the backend.
    pub solve_time: f64,
}

/// Backend capable of solving a [`ConicProgram`].
pub trait SolverBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, tol: f64) -> Result<Solution, ConicError>;
}

/// Interior-point backend; ignores warm start hints.
pub struct InteriorPointBackend;

impl SolverBackend for InteriorPointBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram, tol: f64) -> Result<Solution, ConicError> {
        program.validate()?;
        let n = program.num_vars();
        let m = program.num_rows();

        // Rows become `A x + s = b` with `s` in the cone: `A[r] = -coeffs`,
        // `b[r] = constant`.
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(program.blocks.len());
        let mut r = 0usize;
        for block in &program.blocks {
            cones.push(match block.tag {
                ConeTag::Zero => ZeroConeT(block.rows.len()),
                ConeTag::NonNeg => NonnegativeConeT(block.rows.len()),
                ConeTag::Soc => SecondOrderConeT(block.rows.len()),
            });
            for row in &block.rows {
                b.push(row.constant);
                for &(var, coeff) in &row.terms {
                    triplets.push((r, var, -coeff));
                }
                r += 1;
            }
        }
        let a = csc_from_triplets(m, n, triplets);
        let p = CscMatrix::new(n, n, vec![0; n + 1], Vec::new(), Vec::new());

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .build()
            .map_err(|e| ConicError::NumericalFailure(format!("settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, settings)
            .map_err(|e| ConicError::NumericalFailure(format!("setup: {e:?}")))?;
        solver.solve();

        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalFailure,
        };
        Ok(Solution {
            status,
            primal: (status == SolveStatus::Optimal).then(|| sol.x.clone()),
            objective: (status == SolveStatus::Optimal).then_some(sol.obj_val),
            solve_time: sol.solve_time,
        })
    }
}

/// Solves with the default backend.
pub fn solve(program: &ConicProgram, tol: f64) -> Result<Solution, ConicError> {
    InteriorPointBackend.solve(program, tol)
}

fn csc_from_triplets(m: usize, n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CscMatrix {
    triplets.sort_unstable_by(|x, y| (x.1, x.0).cmp(&(y.1, y.0)));
    // Duplicate entries (a variable appearing twice in one row) merge by sum.
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
    for (row, col, val) in triplets {
        match merged.last_mut() {
            Some(last) if last.0 == row && last.1 == col => last.2 += val,
            _ => merged.push((row, col, val)),
        }
    }
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(merged.len());
    let mut nzval = Vec::with_capacity(merged.len());
    for (row, col, val) in merged {
        colptr[col + 1] += 1;
        rowval.push(row);
        nzval.push(val);
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const TOL: f64 = 1e-9;

    #[test]
    fn lp_two_bounds() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        let y = prog.add_var("y");
        prog.set_objective(x, 1.0);
        prog.set_objective(y, 1.0);
        prog.add_geq(&AffExpr::term(x, 1.0), 1.0);
        prog.add_geq(&AffExpr::term(y, 1.0), 2.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective.unwrap(), 3.0, epsilon = 1e-7);
        let x_val = &sol.primal.unwrap();
        assert_abs_diff_eq!(x_val[x], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(x_val[y], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn equality_pins_variable() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        prog.set_objective(x, 1.0);
        prog.add_eq(&AffExpr::term(x, 1.0), 3.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective.unwrap(), 3.0, epsilon = 1e-7);
    }

    #[test]
    fn norm_epigraphs_hit_closed_forms() {
        // s >= |(3, -4)| under each norm; minimizing s gives the norm itself.
        let cases = [(NormKind::L2, 5.0), (NormKind::Linf, 4.0), (NormKind::L1, 7.0)];
        for (norm, expected) in cases {
            let mut prog = ConicProgram::new();
            let exprs = [AffExpr::constant(3.0), AffExpr::constant(-4.0)];
            let s = prog.add_norm_epigraph(&exprs, norm);
            prog.set_objective(s, 1.0);
            let sol = solve(&prog, TOL).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "norm {norm:?}");
            assert_abs_diff_eq!(sol.objective.unwrap(), expected, epsilon = 1e-7);
        }
    }

    #[test]
    fn quadratic_epigraph_hits_sum_of_squares() {
        let mut prog = ConicProgram::new();
        let exprs = [AffExpr::constant(3.0), AffExpr::constant(4.0)];
        let s = prog.add_quadratic_epigraph(&exprs);
        prog.set_objective(s, 1.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective.unwrap(), 25.0, epsilon = 1e-6);
    }

    #[test]
    fn norm_epigraph_over_variables() {
        // min |x - (3, 4)|_2 is 0 at x = (3, 4).
        let mut prog = ConicProgram::new();
        let x = prog.add_vars("x", 2);
        let mut e0 = AffExpr::term(x.start, 1.0);
        e0.constant = -3.0;
        let mut e1 = AffExpr::term(x.start + 1, 1.0);
        e1.constant = -4.0;
        let s = prog.add_norm_epigraph(&[e0, e1], NormKind::L2);
        prog.set_objective(s, 1.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective.unwrap(), 0.0, epsilon = 1e-6);
        let x_val = sol.primal.unwrap();
        assert_abs_diff_eq!(x_val[x.start], 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(x_val[x.start + 1], 4.0, epsilon = 1e-5);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        prog.add_leq(&AffExpr::term(x, 1.0), -1.0);
        prog.add_geq(&AffExpr::term(x, 1.0), 1.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.primal.is_none());
    }

    #[test]
    fn free_descent_is_unbounded() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        prog.set_objective(x, -1.0);
        prog.add_geq(&AffExpr::term(x, 1.0), 0.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn validate_rejects_out_of_range_variable() {
        let mut prog = ConicProgram::new();
        prog.add_var("x");
        prog.add_leq(&AffExpr::term(7, 1.0), 0.0);
        assert!(matches!(prog.validate(), Err(ConicError::Malformed(_))));
    }

    #[test]
    fn duplicate_terms_merge() {
        // x + x <= 4 with min -x gives x = 2.
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        prog.set_objective(x, -1.0);
        let mut e = AffExpr::term(x, 1.0);
        e.add_term(x, 1.0);
        prog.add_leq(&e, 4.0);
        let sol = solve(&prog, TOL).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.primal.unwrap()[x], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn debug_json_contains_structure() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var("x");
        prog.add_leq(&AffExpr::term(x, 2.0), 1.0);
        let dump = prog.to_debug_json();
        assert_eq!(dump["num_vars"], 1);
        assert_eq!(dump["blocks"].as_array().unwrap().len(), 1);
    }
}
