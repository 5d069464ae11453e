//! Shared helpers for the integration suites: seeded generators, mixed
//! absolute/relative comparisons, and random bounded polytopes.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmpc::polytope::Polytope;

/// Deterministic generator for a test case.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checks `|actual - expected| <= tol * (1 + |expected|)` so one tolerance
/// covers both tiny and large magnitudes.
pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let err = (actual - expected).abs();
    let bound = tol * (1.0 + expected.abs());
    assert!(
        err <= bound,
        "{what}: got {actual}, expected {expected} (error {err:.3e} > bound {bound:.3e})"
    );
}

/// Uniformly random direction on the unit sphere.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Random bounded polytope: a box with half-widths in `[0.5, 2]` cut by
/// `extra` halfspaces whose offsets keep the origin strictly inside.
pub fn random_polytope(rng: &mut ChaCha8Rng, dim: usize, extra: usize) -> Polytope {
    let lower = DVector::from_fn(dim, |_, _| -rng.random_range(0.5..2.0));
    let upper = DVector::from_fn(dim, |_, _| rng.random_range(0.5..2.0));
    let num_facets = 2 * dim + extra;
    let mut normals = DMatrix::zeros(num_facets, dim);
    let mut offsets = DVector::zeros(num_facets);
    for i in 0..dim {
        normals[(i, i)] = 1.0;
        offsets[i] = upper[i];
        normals[(dim + i, i)] = -1.0;
        offsets[dim + i] = -lower[i];
    }
    for k in 0..extra {
        let n = random_unit(rng, dim);
        for c in 0..dim {
            normals[(2 * dim + k, c)] = n[c];
        }
        offsets[2 * dim + k] = rng.random_range(0.4..1.8);
    }
    Polytope::new(normals, offsets).expect("random polytope is well formed")
}
