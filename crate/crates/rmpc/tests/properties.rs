//! Randomized property checks of the geometric and uncertainty primitives:
//! support function laws, vertex enumeration consistency, norm duality,
//! sample membership, and exactness of the one-step tightening.

mod common;

use common::{random_polytope, random_unit, seeded};
use nalgebra::{dmatrix, dvector, DVector};
use proptest::prelude::*;
use rand::RngExt;
use rmpc::dynamics::{impulse_stacks, DiscreteLti};
use rmpc::polytope::Polytope;
use rmpc::satellite::{build_problem, SatelliteParams, SatelliteProblem};
use rmpc::tightening::{build_table, TighteningTable};
use rmpc::uncertainty::{DependencyTerm, NormKind, SampleStrategy, UncertaintyModel};
use std::sync::OnceLock;

fn satellite() -> &'static SatelliteProblem {
    static CELL: OnceLock<SatelliteProblem> = OnceLock::new();
    CELL.get_or_init(|| build_problem(&SatelliteParams::default()).expect("satellite fixture"))
}

fn satellite_table() -> &'static TighteningTable {
    static CELL: OnceLock<TighteningTable> = OnceLock::new();
    CELL.get_or_init(|| {
        let problem = satellite();
        let stacks =
            impulse_stacks(problem.config.system(), problem.config.horizon()).expect("stacks");
        build_table(problem.config.invariant_set(), &stacks, problem.config.model())
            .expect("tightening table")
    })
}

proptest! {
    /// Scaling the direction scales the support value linearly.
    #[test]
    fn support_is_positively_homogeneous(
        seed in 0u64..(1 << 48),
        dim in 2usize..=4,
        alpha in 0.0f64..8.0,
    ) {
        let mut rng = seeded(seed);
        let set = random_polytope(&mut rng, dim, 2);
        let dir = random_unit(&mut rng, dim);
        let base = set.support(&dir).unwrap();
        let scaled = set.support(&(alpha * &dir)).unwrap();
        prop_assert!(
            (scaled - alpha * base).abs() <= 1e-7 * (1.0 + alpha * base.abs()),
            "support({alpha} d) = {scaled}, alpha * support(d) = {}",
            alpha * base
        );
    }

    /// The support of a sum of directions never exceeds the sum of supports.
    #[test]
    fn support_is_subadditive(
        seed in 0u64..(1 << 48),
        dim in 2usize..=4,
        scale_v in 0.1f64..3.0,
        scale_w in 0.1f64..3.0,
    ) {
        let mut rng = seeded(seed);
        let set = random_polytope(&mut rng, dim, 3);
        let v = scale_v * random_unit(&mut rng, dim);
        let w = scale_w * random_unit(&mut rng, dim);
        let s_v = set.support(&v).unwrap();
        let s_w = set.support(&w).unwrap();
        let s_sum = set.support(&(&v + &w)).unwrap();
        prop_assert!(
            s_sum <= s_v + s_w + 1e-7 * (1.0 + s_v.abs() + s_w.abs()),
            "support(v + w) = {s_sum} exceeds {s_v} + {s_w}"
        );
    }

    /// Every enumerated vertex satisfies the facet description and is
    /// dominated by the support value in random directions.
    #[test]
    fn vertices_lie_inside_their_polytope(
        seed in 0u64..(1 << 48),
        dim in 2usize..=4,
        extra in 0usize..=4,
    ) {
        let mut rng = seeded(seed);
        let set = random_polytope(&mut rng, dim, extra);
        let vertices = set.vertices().unwrap();
        prop_assert!(!vertices.is_empty());
        for v in &vertices {
            prop_assert!(set.contains(v, 1e-7).unwrap(), "vertex {v:?} outside its set");
        }
        for _ in 0..5 {
            let dir = random_unit(&mut rng, dim);
            let s = set.support(&dir).unwrap();
            for v in &vertices {
                prop_assert!(
                    dir.dot(v) <= s + 1e-7 * (1.0 + s.abs()),
                    "vertex exceeds the support value"
                );
            }
        }
    }

    /// The generalized Cauchy inequality behind the tightening gains: a
    /// pairing never exceeds the norm times the dual norm.
    #[test]
    fn pairing_respects_dual_norms(
        seed in 0u64..(1 << 48),
        dim in 1usize..=6,
    ) {
        let mut rng = seeded(seed);
        let v = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let w = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        for kind in [NormKind::L1, NormKind::L2, NormKind::Linf] {
            let lhs = v.dot(&w).abs();
            let rhs = kind.eval(&v) * kind.dual().eval(&w);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs), "{kind:?}: {lhs} > {rhs}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Realizations drawn at any admissible operating point belong to the
    /// disturbance set evaluated at that point.
    #[test]
    fn satellite_samples_are_members(
        px in -0.1f64..0.1, py in -0.1f64..0.1, pz in -0.1f64..0.1,
        vx in -1e-3f64..1e-3, vy in -1e-3f64..1e-3, vz in -1e-3f64..1e-3,
        ux in -2e-3f64..2e-3, uy in -2e-3f64..2e-3, uz in -2e-3f64..2e-3,
        seed in 0u64..(1 << 32),
    ) {
        let model = satellite().config.model();
        let x = dvector![px, py, pz, vx, vy, vz];
        let u = dvector![ux, uy, uz];
        for strategy in [SampleStrategy::Uniform, SampleStrategy::Extreme] {
            let p = model.sample(&x, &u, seed, strategy);
            let violation = model.membership_violation(&p, &x, &u).unwrap();
            prop_assert!(
                violation <= 1e-8,
                "{strategy:?} draw violates its own set by {violation:.3e}"
            );
        }
    }

    /// For a one-dimensional system the first-step tightening equals the
    /// analytic worst case, extreme draws never cross it, and they reach it.
    #[test]
    fn one_step_tightening_is_exact_for_a_scalar_system(
        a in -1.5f64..1.5,
        b in -1.2f64..1.2,
        w_max in 0.01f64..0.5,
        ell in 0.3f64..2.0,
        c0 in 0.0f64..0.3,
        cx in 0.0f64..0.4,
        cu in 0.0f64..0.4,
        x in -2.0f64..2.0,
        u in -2.0f64..2.0,
        seed in 0u64..(1 << 32),
    ) {
        let sys = DiscreteLti::new(dmatrix![a], dmatrix![b], dmatrix![1.0]).unwrap();
        let term = DependencyTerm::new(
            dmatrix![ell],
            NormKind::L2,
            dmatrix![1.0],
            NormKind::L2,
            dmatrix![1.0],
            NormKind::L2,
            c0,
            cx,
            cu,
        )
        .unwrap();
        let bounds = Polytope::from_bounds(&dvector![-w_max], &dvector![w_max]).unwrap();
        let model = UncertaintyModel::new(dmatrix![1.0], bounds, vec![term], 1, 1).unwrap();
        let window = Polytope::from_bounds(&dvector![-1.0], &dvector![1.0]).unwrap();
        let stacks = impulse_stacks(&sys, 1).unwrap();
        let table = build_table(&window, &stacks, &model).unwrap();

        let state = dvector![x];
        let input = dvector![u];
        let rho = model.terms()[0].radius(&state, &input);
        let nominal_next = a * x + b * u;

        let mut rng = seeded(seed);
        let mut draws = Vec::with_capacity(200);
        for _ in 0..200 {
            draws.push(model.sample_with(&state, &input, &mut rng, SampleStrategy::Extreme)[0]);
        }

        for (j, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let tightening = table.sigma(j, 1, 0) + table.kappa(j, 1, 0, 0) * rho;
            let analytic = w_max + ell.abs() * rho;
            prop_assert!(
                (tightening - analytic).abs() <= 1e-8 * (1.0 + analytic),
                "facet {j}: table gives {tightening}, analytic worst case {analytic}"
            );
            let bound = sign * nominal_next + tightening;
            let mut reached = f64::NEG_INFINITY;
            for &p in &draws {
                let value = sign * (nominal_next + p);
                prop_assert!(
                    value <= bound + 1e-9 * (1.0 + bound.abs()),
                    "draw crosses the tightened bound by {:.3e}",
                    value - bound
                );
                reached = reached.max(value);
            }
            prop_assert!(
                bound - reached <= 1e-9 * (1.0 + bound.abs()),
                "facet {j}: extreme draws stop {:.3e} short of the bound",
                bound - reached
            );
        }
    }
}

/// The dual pairing is an involution and pairs the expected kinds.
#[test]
fn dual_norms_are_involutive() {
    for kind in [NormKind::L1, NormKind::L2, NormKind::Linf] {
        assert_eq!(kind.dual().dual(), kind);
    }
    assert_eq!(NormKind::L1.dual(), NormKind::Linf);
    assert_eq!(NormKind::Linf.dual(), NormKind::L1);
    assert_eq!(NormKind::L2.dual(), NormKind::L2);
}

/// Offsets of the tightening table: supports of a set containing the origin
/// are nonnegative, and dual-norm gains are nonnegative by definition.
#[test]
fn satellite_table_entries_are_nonnegative() {
    let table = satellite_table();
    let problem = satellite();
    let facets = problem.config.invariant_set().num_facets();
    let terms = problem.config.model().terms().len();
    for j in 0..facets {
        for t in 1..=problem.config.horizon() {
            for i in 0..t {
                assert!(
                    table.sigma(j, t, i) >= -1e-9,
                    "sigma({j},{t},{i}) = {} is negative",
                    table.sigma(j, t, i)
                );
                for l in 0..terms {
                    assert!(
                        table.kappa(j, t, i, l) >= 0.0,
                        "kappa({j},{t},{i},{l}) = {} is negative",
                        table.kappa(j, t, i, l)
                    );
                }
            }
        }
    }
}
