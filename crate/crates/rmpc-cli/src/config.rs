//! Run configuration: strict JSON schema, validation with field paths, and
//! assembly of the controller problem the commands operate on.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rmpc::controller::{ControllerConfig, ControllerVariant};
use rmpc::dynamics::DiscreteLti;
use rmpc::polytope::Polytope;
use rmpc::satellite::{self, SatelliteParams};
use rmpc::uncertainty::{DependencyTerm, NormKind, SampleStrategy, UncertaintyModel};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Command failures, split by phase so `main` can map them to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

/// Shorthand for wrapping library errors once a run is underway.
pub fn rt(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemSource {
    Satellite,
    Explicit,
}

/// Where Monte Carlo runs begin when no explicit `x0` is given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartKind {
    /// Cycle through the vertices of the certified set.
    #[default]
    Vertices,
    Origin,
}

/// Halfspace set `{z : normals z <= offsets}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSection {
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

/// One norm-ball disturbance channel with operating-point dependent radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub channel_map: Vec<Vec<f64>>,
    #[serde(default)]
    pub ball_norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_map: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub state_norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_map: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub input_norm: NormKind,
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub cx: f64,
    #[serde(default)]
    pub cu: f64,
}

/// Uncertainty description for explicit problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub independent_map: Vec<Vec<f64>>,
    pub independent_set: SetSection,
    #[serde(default)]
    pub terms: Vec<TermSection>,
}

/// Fully spelled-out discrete-time problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub state_set: SetSection,
    pub input_set: SetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_set: Option<SetSection>,
    pub model: ModelSection,
    pub horizon: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<Vec<f64>>,
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
}

fn default_sample_period() -> f64 {
    1.0
}

/// Overrides applied on top of the built-in satellite scenario; SI units,
/// angles in radians.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravitational_parameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_major_axis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_disturbance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thruster_fixed_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thruster_proportional_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_estimate_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_estimate_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_proportional_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_proportional_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl SatelliteSection {
    pub fn apply(&self) -> SatelliteParams {
        let mut p = SatelliteParams::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    p.$field = v;
                }
            };
        }
        take!(gravitational_parameter);
        take!(semi_major_axis);
        take!(sample_period);
        take!(position_bound);
        take!(velocity_bound);
        take!(input_bound);
        take!(accel_disturbance);
        take!(thruster_fixed_error);
        take!(thruster_proportional_error);
        take!(position_estimate_error);
        take!(velocity_estimate_error);
        take!(position_proportional_error);
        take!(velocity_proportional_error);
        take!(horizon);
        take!(lambda);
        p
    }
}

/// Top-level run description shared by all commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub problem: ProblemSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satellite: Option<SatelliteSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<ExplicitSection>,
    /// Controller used by `certify` and `simulate`.
    #[serde(default)]
    pub variant: ControllerVariant,
    /// Controllers compared by `montecarlo`; defaults to just `variant`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<ControllerVariant>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub strategy: SampleStrategy,
    /// Steps discarded before the fuel regression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_cut: Option<usize>,
    /// Start of a `simulate` run and, when set, of every Monte Carlo run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub start: StartKind,
    /// Slack of the certified-set membership test used for violation counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl RunConfig {
    /// Canonical JSON form; `parse_str(emit(cfg))` returns `cfg` unchanged.
    pub fn emit(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// Digest of the canonical form, stamped into every output artifact.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.emit().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads, parses, and validates a config file, reporting every semantic
/// failure with its field path rather than stopping at the first.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_str(&text)
}

/// Parses and validates config text.
pub fn parse_str(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let errors = validate(&cfg);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Validation(errors))
    }
}

fn validate(cfg: &RunConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        errs.push(format!(
            "schema_version: found {}, this build reads {}",
            cfg.schema_version, CONFIG_SCHEMA_VERSION
        ));
    }
    match cfg.problem {
        ProblemSource::Satellite => {
            if cfg.explicit.is_some() {
                errs.push("explicit: set while problem is \"satellite\"".into());
            }
            if let Some(sat) = &cfg.satellite {
                validate_satellite(sat, &mut errs);
            }
        }
        ProblemSource::Explicit => {
            if cfg.satellite.is_some() {
                errs.push("satellite: set while problem is \"explicit\"".into());
            }
            match &cfg.explicit {
                Some(exp) => validate_explicit(exp, &mut errs),
                None => errs.push("explicit: required when problem is \"explicit\"".into()),
            }
        }
    }
    if cfg.runs == Some(0) {
        errs.push("runs: must be at least 1".into());
    }
    if cfg.steps == Some(0) {
        errs.push("steps: must be at least 1".into());
    }
    if let Some(seeds) = &cfg.seeds {
        if seeds.is_empty() {
            errs.push("seeds: must not be empty".into());
        }
        if let Some(runs) = cfg.runs {
            if runs != seeds.len() {
                errs.push(format!("runs: {} conflicts with {} seeds", runs, seeds.len()));
            }
        }
    }
    if let (Some(cut), Some(steps)) = (cfg.transient_cut, cfg.steps) {
        if cut >= steps {
            errs.push(format!("transient_cut: {cut} leaves no steps out of {steps}"));
        }
    }
    if let Some(variants) = &cfg.variants {
        if variants.is_empty() {
            errs.push("variants: must not be empty".into());
        }
        for (i, v) in variants.iter().enumerate() {
            if variants[..i].contains(v) {
                errs.push(format!("variants[{i}]: duplicate entry"));
            }
        }
    }
    if let Some(x0) = &cfg.x0 {
        let expected = match cfg.problem {
            ProblemSource::Satellite => Some(6),
            ProblemSource::Explicit => cfg.explicit.as_ref().map(|e| e.a.len()),
        };
        if let Some(n) = expected {
            if x0.len() != n {
                errs.push(format!("x0: has {} entries, the state has {}", x0.len(), n));
            }
        }
        if x0.iter().any(|v| !v.is_finite()) {
            errs.push("x0: entries must be finite".into());
        }
    }
    if let Some(tol) = cfg.violation_tol {
        if !(tol.is_finite() && tol > 0.0) {
            errs.push(format!("violation_tol: must be positive and finite, got {tol}"));
        }
    }
    errs
}

fn check_positive(value: Option<f64>, path: &str, errs: &mut Vec<String>) {
    if let Some(v) = value {
        if !(v.is_finite() && v > 0.0) {
            errs.push(format!("{path}: must be positive and finite, got {v}"));
        }
    }
}

fn check_nonnegative(value: Option<f64>, path: &str, errs: &mut Vec<String>) {
    if let Some(v) = value {
        if !(v.is_finite() && v >= 0.0) {
            errs.push(format!("{path}: must be nonnegative and finite, got {v}"));
        }
    }
}

fn validate_satellite(sat: &SatelliteSection, errs: &mut Vec<String>) {
    check_positive(sat.gravitational_parameter, "satellite.gravitational_parameter", errs);
    check_positive(sat.semi_major_axis, "satellite.semi_major_axis", errs);
    check_positive(sat.sample_period, "satellite.sample_period", errs);
    check_positive(sat.position_bound, "satellite.position_bound", errs);
    check_positive(sat.velocity_bound, "satellite.velocity_bound", errs);
    check_positive(sat.input_bound, "satellite.input_bound", errs);
    check_nonnegative(sat.accel_disturbance, "satellite.accel_disturbance", errs);
    check_nonnegative(sat.thruster_fixed_error, "satellite.thruster_fixed_error", errs);
    check_nonnegative(
        sat.thruster_proportional_error,
        "satellite.thruster_proportional_error",
        errs,
    );
    check_nonnegative(sat.position_estimate_error, "satellite.position_estimate_error", errs);
    check_nonnegative(sat.velocity_estimate_error, "satellite.velocity_estimate_error", errs);
    check_nonnegative(
        sat.position_proportional_error,
        "satellite.position_proportional_error",
        errs,
    );
    check_nonnegative(
        sat.velocity_proportional_error,
        "satellite.velocity_proportional_error",
        errs,
    );
    if sat.horizon == Some(0) {
        errs.push("satellite.horizon: must be at least 1".into());
    }
    check_nonnegative(sat.lambda, "satellite.lambda", errs);
}

/// Checks a row-major matrix literal and reports its shape.
fn matrix_shape(rows: &[Vec<f64>], path: &str, errs: &mut Vec<String>) -> Option<(usize, usize)> {
    if rows.is_empty() {
        errs.push(format!("{path}: must have at least one row"));
        return None;
    }
    let cols = rows[0].len();
    if cols == 0 {
        errs.push(format!("{path}: rows must not be empty"));
        return None;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            errs.push(format!("{path}[{i}]: has {} entries, row 0 has {cols}", row.len()));
            return None;
        }
        if row.iter().any(|v| !v.is_finite()) {
            errs.push(format!("{path}[{i}]: entries must be finite"));
            return None;
        }
    }
    Some((rows.len(), cols))
}

fn validate_set(set: &SetSection, dim: Option<usize>, path: &str, errs: &mut Vec<String>) {
    let Some((rows, cols)) = matrix_shape(&set.normals, &format!("{path}.normals"), errs) else {
        return;
    };
    if let Some(d) = dim {
        if cols != d {
            errs.push(format!("{path}.normals: has {cols} columns, expected {d}"));
        }
    }
    if set.offsets.len() != rows {
        errs.push(format!(
            "{path}.offsets: has {} entries, normals has {rows} rows",
            set.offsets.len()
        ));
    }
    if set.offsets.iter().any(|v| !v.is_finite()) {
        errs.push(format!("{path}.offsets: entries must be finite"));
    }
}

fn validate_explicit(exp: &ExplicitSection, errs: &mut Vec<String>) {
    let a_shape = matrix_shape(&exp.a, "explicit.a", errs);
    let b_shape = matrix_shape(&exp.b, "explicit.b", errs);
    let d_shape = matrix_shape(&exp.d, "explicit.d", errs);
    let n = match a_shape {
        Some((r, c)) if r == c => Some(r),
        Some((r, c)) => {
            errs.push(format!("explicit.a: must be square, got {r}x{c}"));
            None
        }
        None => None,
    };
    let m = b_shape.map(|(_, c)| c);
    let d_dim = d_shape.map(|(_, c)| c);
    if let (Some(n), Some((rows, _))) = (n, b_shape) {
        if rows != n {
            errs.push(format!("explicit.b: has {rows} rows, the state has {n}"));
        }
    }
    if let (Some(n), Some((rows, _))) = (n, d_shape) {
        if rows != n {
            errs.push(format!("explicit.d: has {rows} rows, the state has {n}"));
        }
    }
    validate_set(&exp.state_set, n, "explicit.state_set", errs);
    validate_set(&exp.input_set, m, "explicit.input_set", errs);
    if let Some(inv) = &exp.invariant_set {
        validate_set(inv, n, "explicit.invariant_set", errs);
    }
    if let Some((rows, _)) = matrix_shape(&exp.model.independent_map, "explicit.model.independent_map", errs)
    {
        if let Some(d) = d_dim {
            if rows != d {
                errs.push(format!(
                    "explicit.model.independent_map: has {rows} rows, the disturbance has {d}"
                ));
            }
        }
    }
    let q = exp.model.independent_map.first().map(|r| r.len());
    validate_set(&exp.model.independent_set, q, "explicit.model.independent_set", errs);
    for (l, term) in exp.model.terms.iter().enumerate() {
        let path = format!("explicit.model.terms[{l}]");
        if let (Some(d), Some((rows, _))) =
            (d_dim, matrix_shape(&term.channel_map, &format!("{path}.channel_map"), errs))
        {
            if rows != d {
                errs.push(format!("{path}.channel_map: has {rows} rows, the disturbance has {d}"));
            }
        }
        for (map, dim, name) in [(&term.state_map, n, "state_map"), (&term.input_map, m, "input_map")] {
            if let Some(rows) = map {
                if let (Some(expected), Some((_, cols))) =
                    (dim, matrix_shape(rows, &format!("{path}.{name}"), errs))
                {
                    if cols != expected {
                        errs.push(format!("{path}.{name}: has {cols} columns, expected {expected}"));
                    }
                }
            }
        }
        for (v, name) in [(term.c0, "c0"), (term.cx, "cx"), (term.cu, "cu")] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{path}.{name}: must be nonnegative and finite, got {v}"));
            }
        }
        if term.cx > 0.0 && term.state_map.is_none() {
            errs.push(format!("{path}.state_map: required when cx > 0"));
        }
        if term.cu > 0.0 && term.input_map.is_none() {
            errs.push(format!("{path}.input_map: required when cu > 0"));
        }
    }
    if exp.horizon == 0 {
        errs.push("explicit.horizon: must be at least 1".into());
    }
    if !(exp.lambda.is_finite() && exp.lambda >= 0.0) {
        errs.push(format!("explicit.lambda: must be nonnegative and finite, got {}", exp.lambda));
    }
    for (scale, dim, name) in
        [(&exp.state_scale, n, "state_scale"), (&exp.input_scale, m, "input_scale")]
    {
        if let Some(s) = scale {
            if let Some(d) = dim {
                if s.len() != d {
                    errs.push(format!("explicit.{name}: has {} entries, expected {d}", s.len()));
                }
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                errs.push(format!("explicit.{name}: entries must be positive and finite"));
            }
        }
    }
    check_positive(Some(exp.sample_period), "explicit.sample_period", errs);
}

/// Everything the commands need, assembled from a validated config.
pub struct BuiltProblem {
    pub plant: DiscreteLti,
    /// Disturbance model the plant actually realizes during simulation.
    pub truth: UncertaintyModel,
    /// Controller problem before any variant substitution.
    pub config: ControllerConfig,
    pub sample_period: f64,
    pub default_steps: usize,
    pub default_transient_cut: usize,
    /// Multiplies fuel rates on output (unit change only).
    pub fuel_scale: f64,
    pub fuel_unit: &'static str,
}

/// Builds the plant, truth model, and controller problem a config describes.
pub fn build(cfg: &RunConfig) -> Result<BuiltProblem, CliError> {
    match cfg.problem {
        ProblemSource::Satellite => {
            let params = cfg.satellite.clone().unwrap_or_default().apply();
            let problem = satellite::build_problem(&params).map_err(rt)?;
            let default_steps =
                (4.0 * params.orbital_period() / params.sample_period).ceil() as usize;
            Ok(BuiltProblem {
                plant: problem.plant.clone(),
                truth: problem.config.model().clone(),
                config: problem.config,
                sample_period: params.sample_period,
                default_steps,
                default_transient_cut: params.steps_per_orbit(),
                fuel_scale: 1e3,
                fuel_unit: "mm/s/year",
            })
        }
        ProblemSource::Explicit => {
            let exp = cfg.explicit.as_ref().expect("validated");
            let a = to_matrix(&exp.a);
            let b = to_matrix(&exp.b);
            let d = to_matrix(&exp.d);
            let n = a.nrows();
            let m = b.ncols();
            let plant = DiscreteLti::new(a, b, d).map_err(rt)?;
            let state_set = to_polytope(&exp.state_set).map_err(rt)?;
            let input_set = to_polytope(&exp.input_set).map_err(rt)?;
            let invariant_set = match &exp.invariant_set {
                Some(s) => to_polytope(s).map_err(rt)?,
                None => state_set.clone(),
            };
            let mut terms = Vec::with_capacity(exp.model.terms.len());
            for t in &exp.model.terms {
                terms.push(
                    DependencyTerm::new(
                        to_matrix(&t.channel_map),
                        t.ball_norm,
                        t.state_map.as_deref().map(to_matrix).unwrap_or_else(|| DMatrix::zeros(0, n)),
                        t.state_norm,
                        t.input_map.as_deref().map(to_matrix).unwrap_or_else(|| DMatrix::zeros(0, m)),
                        t.input_norm,
                        t.c0,
                        t.cx,
                        t.cu,
                    )
                    .map_err(rt)?,
                );
            }
            let model = UncertaintyModel::new(
                to_matrix(&exp.model.independent_map),
                to_polytope(&exp.model.independent_set).map_err(rt)?,
                terms,
                n,
                m,
            )
            .map_err(rt)?;
            let truth = model.clone();
            let config = ControllerConfig::new(
                plant.clone(),
                state_set,
                input_set,
                invariant_set,
                model,
                exp.horizon,
                exp.lambda,
                exp.state_scale
                    .as_ref()
                    .map(|s| DVector::from_row_slice(s))
                    .unwrap_or_else(|| DVector::from_element(n, 1.0)),
                exp.input_scale
                    .as_ref()
                    .map(|s| DVector::from_row_slice(s))
                    .unwrap_or_else(|| DVector::from_element(m, 1.0)),
            )
            .map_err(rt)?;
            Ok(BuiltProblem {
                plant,
                truth,
                config,
                sample_period: exp.sample_period,
                default_steps: 100,
                default_transient_cut: 0,
                fuel_scale: 1.0,
                fuel_unit: "input-norm/year",
            })
        }
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows[0].len();
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

fn to_polytope(set: &SetSection) -> Result<Polytope, rmpc::polytope::GeometryError> {
    Polytope::new(to_matrix(&set.normals), DVector::from_row_slice(&set.offsets))
}
