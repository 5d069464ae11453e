//! Precomputed constraint-tightening tables.
//!
//! For every facet of the target set, every horizon step, and every
//! disturbance injection step, the table stores the support margin of the
//! independent disturbance part and the dual-norm gain of each norm-ball
//! term.  Tables are content addressed so a cached table can be checked
//! against the problem it was built for.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::ImpulseStacks;
use crate::polytope::{GeometryError, Polytope};
use crate::uncertainty::{NormKind, UncertaintyModel};

const SCHEMA_VERSION: u32 = 1;

/// Errors raised while building or loading a table.
#[derive(Debug, Error)]
pub enum TighteningError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("serialization failed: {0}")]
    Serialization(String),
    #[error("table schema version {found} incompatible with {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
}

/// Margin table for one (target set, impulse stacks, uncertainty model)
/// triple.  Indexing: facet `j`, horizon step `t` in `1..=horizon`,
/// injection step `i < t`, term `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TighteningTable {
    schema_version: u32,
    key: String,
    horizon: usize,
    num_facets: usize,
    num_terms: usize,
    sigma: Vec<Vec<Vec<f64>>>,
    kappa: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TighteningTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_facets(&self) -> usize {
        self.num_facets
    }

    pub fn num_terms(&self) -> usize {
        self.num_terms
    }

    /// Content key of the inputs the table was built from.
    pub fn key(&self) -> &str {
        &self.key
    }

    /// Support margin of the independent disturbance injected at step `i`,
    /// seen by facet `j` at step `t`.
    pub fn sigma(&self, j: usize, t: usize, i: usize) -> f64 {
        self.sigma[j][t - 1][i]
    }

    /// Dual-norm gain of term `l` injected at step `i`, seen by facet `j` at
    /// step `t`.
    pub fn kappa(&self, j: usize, t: usize, i: usize, l: usize) -> f64 {
        self.kappa[j][t - 1][i][l]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serialization cannot fail")
    }

    pub fn from_json(raw: &str) -> Result<Self, TighteningError> {
        let table: TighteningTable =
            serde_json::from_str(raw).map_err(|e| TighteningError::Serialization(e.to_string()))?;
        if table.schema_version != SCHEMA_VERSION {
            return Err(TighteningError::SchemaMismatch {
                found: table.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(table)
    }
}

/// Builds the margin table for tightening `target_set` under the given
/// dynamics and disturbance model.
pub fn build_table(
    target_set: &Polytope,
    stacks: &ImpulseStacks,
    model: &UncertaintyModel,
) -> Result<TighteningTable, TighteningError> {
    let n = stacks.a_power(0).nrows();
    if target_set.dim() != n {
        return Err(TighteningError::DimensionMismatch(format!(
            "target set lives in dimension {}, plant has {} states",
            target_set.dim(),
            n
        )));
    }
    if stacks.disturbance_map(1, 0).ncols() != model.dimension() {
        return Err(TighteningError::DimensionMismatch(format!(
            "plant takes {} disturbance channels, model provides {}",
            stacks.disturbance_map(1, 0).ncols(),
            model.dimension()
        )));
    }
    let horizon = stacks.horizon();
    let num_facets = target_set.num_facets();
    let num_terms = model.terms().len();
    let mut sigma = vec![Vec::with_capacity(horizon); num_facets];
    let mut kappa = vec![Vec::with_capacity(horizon); num_facets];
    for j in 0..num_facets {
        let facet: DVector<f64> = target_set.normals().row(j).transpose();
        // the mapped disturbance direction depends on (t, i) only through the
        // injection lag t-1-i, so each distinct lag is evaluated once and the
        // (t, i) triangle is filled by lookup
        let mut sig_lag = Vec::with_capacity(horizon);
        let mut kap_lag: Vec<Vec<f64>> = Vec::with_capacity(horizon);
        for lag in 0..horizon {
            let pulled = stacks.disturbance_map(lag + 1, 0).transpose() * &facet;
            let w_dir = model.independent_map().transpose() * &pulled;
            sig_lag.push(model.independent_set().support(&w_dir)?);
            let gains = model
                .terms()
                .iter()
                .map(|term| {
                    let lifted = term.channel_map().transpose() * &pulled;
                    term.ball_norm().dual().eval(&lifted)
                })
                .collect();
            kap_lag.push(gains);
        }
        for t in 1..=horizon {
            sigma[j].push((0..t).map(|i| sig_lag[t - 1 - i]).collect());
            kappa[j].push((0..t).map(|i| kap_lag[t - 1 - i].clone()).collect());
        }
    }
    Ok(TighteningTable {
        schema_version: SCHEMA_VERSION,
        key: content_key(target_set, stacks, model),
        horizon,
        num_facets,
        num_terms,
        sigma,
        kappa,
    })
}

/// Content key identifying the exact inputs a table depends on.
pub fn content_key(
    target_set: &Polytope,
    stacks: &ImpulseStacks,
    model: &UncertaintyModel,
) -> String {
    let mut h = Sha256::new();
    h.update(b"rmpc-tightening-v1");
    h.update((stacks.horizon() as u64).to_le_bytes());
    feed_matrix(&mut h, target_set.normals());
    feed_vector(&mut h, target_set.offsets());
    for t in 1..=stacks.horizon() {
        for i in 0..t {
            feed_matrix(&mut h, stacks.input_map(t, i));
            feed_matrix(&mut h, stacks.disturbance_map(t, i));
        }
    }
    feed_matrix(&mut h, model.independent_map());
    feed_matrix(&mut h, model.independent_set().normals());
    feed_vector(&mut h, model.independent_set().offsets());
    for term in model.terms() {
        h.update([norm_tag(term.ball_norm()), norm_tag(term.state_norm()), norm_tag(term.input_norm())]);
        feed_matrix(&mut h, term.channel_map());
        feed_matrix(&mut h, term.state_map());
        feed_matrix(&mut h, term.input_map());
        h.update(term.c0().to_le_bytes());
        h.update(term.cx().to_le_bytes());
        h.update(term.cu().to_le_bytes());
    }
    hex_digest(h)
}

fn norm_tag(norm: NormKind) -> u8 {
    match norm {
        NormKind::L1 => 1,
        NormKind::L2 => 2,
        NormKind::Linf => 3,
    }
}

fn feed_matrix(h: &mut Sha256, m: &DMatrix<f64>) {
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
}

fn feed_vector(h: &mut Sha256, v: &DVector<f64>) {
    h.update((v.len() as u64).to_le_bytes());
    for x in v.iter() {
        h.update(x.to_le_bytes());
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
