//! Receding-horizon controller: tightened program assembly, vertex
//! certification of recursive feasibility, and the online control law.
//!
//! The horizon program keeps only the input sequence as decision variables;
//! predicted states are affine in the inputs through the impulse response
//! stacks.  Every facet of the certified set is enforced at every horizon
//! step with a margin made of the independent-disturbance support values plus
//! dual-norm gains times the operating-point radii, the latter entering
//! through norm epigraph variables so the program stays conic.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conic::{self, AffExpr, ConicProgram, SolveStatus};
use crate::dynamics::{impulse_stacks, DiscreteLti, DynamicsError, ImpulseStacks};
use crate::polytope::{GeometryError, Polytope};
use crate::tightening::{build_table, content_key, TighteningError, TighteningTable};
use crate::uncertainty::{UncertaintyError, UncertaintyModel};

/// Smallest invariant-set scale probed before giving up, and the resolution
/// the final scale is located to.
const SHRINK_FLOOR: f64 = 1e-3;
const SHRINK_RESOLUTION: f64 = 1e-3;

/// Errors raised by controller construction and operation.
#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("tightening table was built for different problem data")]
    TableMismatch,
    #[error("horizon program infeasible at the current state")]
    RecedingHorizonInfeasible,
    #[error("no scaled-down invariant set certifies at this horizon")]
    HorizonTooLarge,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("solver failed: {0}")]
    Solver(String),
}

/// Disturbance handling flavors built from one base configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerVariant {
    /// Disturbance ignored entirely.
    Nominal,
    /// Dependent radii frozen at their peak over the constraint sets.
    Conservative,
    /// Radii follow the predicted operating point.
    #[default]
    Dependent,
}

/// Validated problem description for one controller.
#[derive(Clone, Debug)]
pub struct ControllerConfig {
    system: DiscreteLti,
    state_set: Polytope,
    input_set: Polytope,
    invariant_set: Polytope,
    model: UncertaintyModel,
    horizon: usize,
    lambda: f64,
    state_scale: DVector<f64>,
    input_scale: DVector<f64>,
}

impl ControllerConfig {
    /// Validates dimensions, set boundedness, `invariant_set` containment in
    /// the state set, and cost parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: DiscreteLti,
        state_set: Polytope,
        input_set: Polytope,
        invariant_set: Polytope,
        model: UncertaintyModel,
        horizon: usize,
        lambda: f64,
        state_scale: DVector<f64>,
        input_scale: DVector<f64>,
    ) -> Result<Self, ControlError> {
        let n = system.num_states();
        let m = system.num_inputs();
        if state_set.dim() != n || invariant_set.dim() != n {
            return Err(ControlError::DimensionMismatch(format!(
                "state sets live in dimensions {} and {}, plant has {} states",
                state_set.dim(),
                invariant_set.dim(),
                n
            )));
        }
        if input_set.dim() != m {
            return Err(ControlError::DimensionMismatch(format!(
                "input set lives in dimension {}, plant has {} inputs",
                input_set.dim(),
                m
            )));
        }
        if model.num_states() != n || model.num_inputs() != m {
            return Err(ControlError::DimensionMismatch(
                "uncertainty model operating-point dimensions do not match the plant".into(),
            ));
        }
        if model.dimension() != system.num_disturbances() {
            return Err(ControlError::DimensionMismatch(format!(
                "model produces {} disturbance channels, plant takes {}",
                model.dimension(),
                system.num_disturbances()
            )));
        }
        if horizon == 0 {
            return Err(ControlError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ControlError::InvalidConfig(format!(
                "state cost weight must be finite and nonnegative, got {lambda}"
            )));
        }
        if state_scale.len() != n || input_scale.len() != m {
            return Err(ControlError::DimensionMismatch(
                "cost scale vectors do not match the plant dimensions".into(),
            ));
        }
        if state_scale.iter().chain(input_scale.iter()).any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(ControlError::InvalidConfig("cost scales must be positive".into()));
        }
        state_set.verify()?;
        input_set.verify()?;
        for vertex in invariant_set.vertices()? {
            if !state_set.contains(&vertex, 1e-9)? {
                return Err(ControlError::InvalidConfig(
                    "invariant set is not contained in the state constraint set".into(),
                ));
            }
        }
        Ok(ControllerConfig {
            system,
            state_set,
            input_set,
            invariant_set,
            model,
            horizon,
            lambda,
            state_scale,
            input_scale,
        })
    }

    /// Same problem with the disturbance handled per `variant`.
    pub fn with_variant(&self, variant: ControllerVariant) -> Result<ControllerConfig, ControlError> {
        let model = match variant {
            ControllerVariant::Nominal => UncertaintyModel::zero(
                self.model.dimension(),
                self.model.num_states(),
                self.model.num_inputs(),
            ),
            ControllerVariant::Conservative => {
                self.model.to_conservative(&self.state_set, &self.input_set)?
            }
            ControllerVariant::Dependent => self.model.clone(),
        };
        let mut cfg = self.clone();
        cfg.model = model;
        Ok(cfg)
    }

    /// Same problem asked to certify a different target set.
    pub fn with_invariant_set(&self, invariant_set: Polytope) -> Result<ControllerConfig, ControlError> {
        ControllerConfig::new(
            self.system.clone(),
            self.state_set.clone(),
            self.input_set.clone(),
            invariant_set,
            self.model.clone(),
            self.horizon,
            self.lambda,
            self.state_scale.clone(),
            self.input_scale.clone(),
        )
    }

    pub fn system(&self) -> &DiscreteLti {
        &self.system
    }

    pub fn state_set(&self) -> &Polytope {
        &self.state_set
    }

    pub fn input_set(&self) -> &Polytope {
        &self.input_set
    }

    pub fn invariant_set(&self) -> &Polytope {
        &self.invariant_set
    }

    pub fn model(&self) -> &UncertaintyModel {
        &self.model
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state_scale(&self) -> &DVector<f64> {
        &self.state_scale
    }

    pub fn input_scale(&self) -> &DVector<f64> {
        &self.input_scale
    }
}

/// Per-solve metadata reported alongside the applied input.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    /// Scaled quadratic cost at the optimum.
    pub objective: f64,
    /// Seconds spent inside the solver.
    pub solve_time: f64,
    /// Slack of every tightened facet row, ordered by step then facet;
    /// nonnegative (up to solver tolerance) at a feasible optimum.
    pub invariance_margins: Vec<f64>,
    pub num_vars: usize,
    pub num_rows: usize,
}

/// How the vertex check certifies recursive feasibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    /// Target set equals the full state constraint set, so feasibility at its
    /// vertices extends to every reachable state.
    FullWindow,
    /// Target set is a strict subset; feasibility extends over the target set
    /// itself.
    InnerSet,
}

/// One vertex feasibility probe.
#[derive(Clone, Debug, Serialize)]
pub struct VertexCheck {
    pub vertex: Vec<f64>,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub solve_time: f64,
}

/// Result of certifying every vertex of the target set.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub mode: CertificateMode,
    pub passed: bool,
    pub checks: Vec<VertexCheck>,
}

/// Horizon program assembled at one state, with handles to its tightened
/// facet rows for margin evaluation and size accounting.
pub struct AssembledProblem {
    program: ConicProgram,
    invariance: Vec<(AffExpr, f64)>,
}

impl AssembledProblem {
    pub fn program(&self) -> &ConicProgram {
        &self.program
    }

    /// Number of tightened facet rows; one per (horizon step, facet) pair.
    pub fn invariance_count(&self) -> usize {
        self.invariance.len()
    }

    /// Slack of every tightened facet row at the given primal point, in row
    /// emission order (step-major, then facet).
    pub fn invariance_margins(&self, primal: &[f64]) -> Vec<f64> {
        self.invariance.iter().map(|(lhs, rhs)| rhs - lhs.eval(primal)).collect()
    }
}

/// Builds the horizon program at state `x`; exposed for inspection and size
/// accounting, the controller itself goes through [`RmpcController::step`].
pub fn build_problem(
    cfg: &ControllerConfig,
    stacks: &ImpulseStacks,
    table: &TighteningTable,
    x: &DVector<f64>,
) -> Result<AssembledProblem, ControlError> {
    assemble(cfg, stacks, table, x)
}

fn assemble(
    cfg: &ControllerConfig,
    stacks: &ImpulseStacks,
    table: &TighteningTable,
    x: &DVector<f64>,
) -> Result<AssembledProblem, ControlError> {
    let n = cfg.system.num_states();
    let m = cfg.system.num_inputs();
    let horizon = cfg.horizon;
    if x.len() != n {
        return Err(ControlError::DimensionMismatch(format!(
            "state has {} entries, plant has {} states",
            x.len(),
            n
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::DimensionMismatch("state has non-finite entries".into()));
    }
    if stacks.horizon() != horizon || table.horizon() != horizon {
        return Err(ControlError::TableMismatch);
    }
    if table.key() != content_key(&cfg.invariant_set, stacks, &cfg.model) {
        return Err(ControlError::TableMismatch);
    }

    let mut prog = ConicProgram::new();
    let u_vars = prog.add_vars("u", horizon * m);
    debug_assert_eq!(u_vars.start, 0);
    let u_var = |i: usize, ax: usize| i * m + ax;

    // predicted states as affine expressions of the inputs
    let mut xbar: Vec<Vec<AffExpr>> = Vec::with_capacity(horizon + 1);
    xbar.push((0..n).map(|r| AffExpr::constant(x[r])).collect());
    for t in 1..=horizon {
        let drift = stacks.a_power(t) * x;
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let mut e = AffExpr::constant(drift[r]);
            for i in 0..t {
                let bmap = stacks.input_map(t, i);
                for ax in 0..m {
                    e.add_term(u_var(i, ax), bmap[(r, ax)]);
                }
            }
            rows.push(e);
        }
        xbar.push(rows);
    }

    // input constraints at every step
    let u_set = &cfg.input_set;
    for i in 0..horizon {
        for j in 0..u_set.num_facets() {
            let mut row = AffExpr::constant(0.0);
            for ax in 0..m {
                row.add_term(u_var(i, ax), u_set.normals()[(j, ax)]);
            }
            prog.add_leq(&row, u_set.offsets()[j]);
        }
    }

    // norm epigraphs feeding the dependent radii: input norms for every step,
    // predicted state norms from step 1 on (step 0 enters as a constant)
    let terms = cfg.model.terms();
    let mut s_input: Vec<Vec<Option<usize>>> = vec![vec![None; terms.len()]; horizon];
    let mut s_state: Vec<Vec<Option<usize>>> = vec![vec![None; terms.len()]; horizon];
    for (l, term) in terms.iter().enumerate() {
        if term.cu() > 0.0 {
            let fu = term.input_map();
            for i in 0..horizon {
                let exprs: Vec<AffExpr> = (0..fu.nrows())
                    .map(|r| {
                        let mut e = AffExpr::constant(0.0);
                        for ax in 0..m {
                            e.add_term(u_var(i, ax), fu[(r, ax)]);
                        }
                        e
                    })
                    .collect();
                s_input[i][l] = Some(prog.add_norm_epigraph(&exprs, term.input_norm()));
            }
        }
        if term.cx() > 0.0 {
            let fx = term.state_map();
            for i in 1..horizon {
                let exprs: Vec<AffExpr> = (0..fx.nrows())
                    .map(|r| {
                        let mut e = AffExpr::constant(0.0);
                        for c in 0..n {
                            e.add_scaled(fx[(r, c)], &xbar[i][c]);
                        }
                        e
                    })
                    .collect();
                s_state[i][l] = Some(prog.add_norm_epigraph(&exprs, term.state_norm()));
            }
        }
    }
    // measured-state radii contributions are plain numbers
    let radius_now: Vec<f64> = terms
        .iter()
        .map(|term| term.state_norm().eval(&(term.state_map() * x)))
        .collect();

    // tightened facet rows over the horizon
    let i_set = &cfg.invariant_set;
    let mut invariance = Vec::with_capacity(horizon * i_set.num_facets());
    for t in 1..=horizon {
        for j in 0..i_set.num_facets() {
            let mut lhs = AffExpr::constant(0.0);
            for r in 0..n {
                lhs.add_scaled(i_set.normals()[(j, r)], &xbar[t][r]);
            }
            for i in 0..t {
                lhs.constant += table.sigma(j, t, i);
                for (l, term) in terms.iter().enumerate() {
                    let gain = table.kappa(j, t, i, l);
                    if gain == 0.0 {
                        continue;
                    }
                    lhs.constant += gain * term.c0();
                    if term.cx() > 0.0 {
                        if i == 0 {
                            lhs.constant += gain * term.cx() * radius_now[l];
                        } else {
                            lhs.add_term(s_state[i][l].unwrap(), gain * term.cx());
                        }
                    }
                    if term.cu() > 0.0 {
                        lhs.add_term(s_input[i][l].unwrap(), gain * term.cu());
                    }
                }
            }
            let rhs = i_set.offsets()[j];
            prog.add_leq(&lhs, rhs);
            invariance.push((lhs, rhs));
        }
    }

    // quadratic cost over scaled inputs and, when weighted, scaled states
    let mut cost_exprs = Vec::with_capacity(horizon * (m + n));
    for i in 0..horizon {
        for ax in 0..m {
            cost_exprs.push(AffExpr::term(u_var(i, ax), 1.0 / cfg.input_scale[ax]));
        }
    }
    if cfg.lambda > 0.0 {
        let weight = cfg.lambda.sqrt();
        for t in 1..=horizon {
            for r in 0..n {
                cost_exprs.push(xbar[t][r].scaled(weight / cfg.state_scale[r]));
            }
        }
    }
    let cost = prog.add_quadratic_epigraph(&cost_exprs);
    prog.set_objective(cost, 1.0);

    Ok(AssembledProblem { program: prog, invariance })
}

/// Solves the horizon program at every vertex of the configured target set.
pub fn certify_vertices(
    cfg: &ControllerConfig,
    stacks: &ImpulseStacks,
    table: &TighteningTable,
) -> Result<Certificate, ControlError> {
    let mode = if cfg.invariant_set == cfg.state_set {
        CertificateMode::FullWindow
    } else {
        CertificateMode::InnerSet
    };
    let vertices = cfg.invariant_set.vertices()?;
    let checks = vertices
        .par_iter()
        .map(|vertex| {
            let assembled = assemble(cfg, stacks, table, vertex)?;
            let sol = conic::solve(&assembled.program, conic::solver_tolerance())
                .map_err(|e| ControlError::Solver(e.to_string()))?;
            Ok(VertexCheck {
                vertex: vertex.iter().copied().collect(),
                status: sol.status,
                objective: sol.objective,
                solve_time: sol.solve_time,
            })
        })
        .collect::<Result<Vec<_>, ControlError>>()?;
    let passed = checks.iter().all(|c| c.status == SolveStatus::Optimal);
    Ok(Certificate { mode, passed, checks })
}

/// Certified receding-horizon controller.
pub struct RmpcController {
    config: ControllerConfig,
    stacks: ImpulseStacks,
    table: TighteningTable,
    certificate: Certificate,
    shrink_alpha: Option<f64>,
}

impl RmpcController {
    /// Offline phase: precomputes the stacks and margin table, then certifies
    /// the configured target set.  If that set fails, retries with the same
    /// facets scaled toward the origin, locating the largest passing scale by
    /// bisection; gives up with [`ControlError::HorizonTooLarge`] when even
    /// tiny scales fail.
    pub fn offline_init(config: ControllerConfig) -> Result<Self, ControlError> {
        let stacks = impulse_stacks(config.system(), config.horizon())?;
        let table = build_table(config.invariant_set(), &stacks, config.model())?;
        let certificate = certify_vertices(&config, &stacks, &table)?;
        if certificate.passed {
            return Ok(RmpcController { config, stacks, table, certificate, shrink_alpha: None });
        }
        if config.invariant_set().offsets().iter().any(|&g| g <= 0.0) {
            // scaling only moves facets toward the origin when offsets are
            // positive, so there is no fallback to try
            return Err(ControlError::HorizonTooLarge);
        }
        let base = config.invariant_set().clone();
        let probe = |alpha: f64| -> Result<
            Option<(ControllerConfig, TighteningTable, Certificate)>,
            ControlError,
        > {
            let candidate = config.with_invariant_set(base.scale_offsets(alpha))?;
            let table = build_table(candidate.invariant_set(), &stacks, candidate.model())?;
            let cert = certify_vertices(&candidate, &stacks, &table)?;
            Ok(cert.passed.then_some((candidate, table, cert)))
        };
        let mut hi = 1.0;
        let mut alpha = 0.5;
        let mut passing = None;
        while alpha >= SHRINK_FLOOR {
            if let Some(found) = probe(alpha)? {
                passing = Some((alpha, found));
                break;
            }
            hi = alpha;
            alpha *= 0.5;
        }
        let Some((mut lo, mut artifacts)) = passing else {
            return Err(ControlError::HorizonTooLarge);
        };
        while hi - lo > SHRINK_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            match probe(mid)? {
                Some(found) => {
                    lo = mid;
                    artifacts = found;
                }
                None => hi = mid,
            }
        }
        let (config, table, certificate) = artifacts;
        Ok(RmpcController { config, stacks, table, certificate, shrink_alpha: Some(lo) })
    }

    /// Solves the horizon program at `x` and returns the first input along
    /// with solve diagnostics.
    pub fn step(&self, x: &DVector<f64>) -> Result<(DVector<f64>, StepDiagnostics), ControlError> {
        let assembled = assemble(&self.config, &self.stacks, &self.table, x)?;
        let sol = conic::solve(&assembled.program, conic::solver_tolerance())
            .map_err(|e| ControlError::Solver(e.to_string()))?;
        match sol.status {
            SolveStatus::Optimal => {
                let primal = sol.primal.as_ref().unwrap();
                let m = self.config.system.num_inputs();
                let u0 = DVector::from_iterator(m, primal[..m].iter().copied());
                let margins = assembled.invariance_margins(primal);
                Ok((
                    u0,
                    StepDiagnostics {
                        objective: sol.objective.unwrap(),
                        solve_time: sol.solve_time,
                        invariance_margins: margins,
                        num_vars: assembled.program.num_vars(),
                        num_rows: assembled.program.num_rows(),
                    },
                ))
            }
            SolveStatus::Infeasible => Err(ControlError::RecedingHorizonInfeasible),
            other => Err(ControlError::Solver(format!("horizon solve ended with {other:?}"))),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn stacks(&self) -> &ImpulseStacks {
        &self.stacks
    }

    pub fn table(&self) -> &TighteningTable {
        &self.table
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    /// Scale applied to the configured target set by the fallback, if any.
    pub fn shrink_alpha(&self) -> Option<f64> {
        self.shrink_alpha
    }
}
