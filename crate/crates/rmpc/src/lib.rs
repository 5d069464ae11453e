//! Robust model predictive control for discrete-time linear systems whose
//! additive disturbance scales with the norms of the current state and input.
//!
//! The crate is organised as a pipeline.  `dynamics` discretizes the plant and
//! caches its impulse responses, `uncertainty` describes the disturbance set,
//! `tightening` precomputes the constraint margins implied by that set,
//! `controller` assembles and certifies the receding-horizon program, and
//! `sim` closes the loop for Monte Carlo studies.  `conic` and `polytope`
//! supply the optimization and set-arithmetic substrate, and `satellite` bolts
//! the pieces together for an in-orbit relative position keeping problem.

pub mod conic;
pub mod controller;
pub mod dynamics;
pub mod polytope;
pub mod satellite;
pub mod sim;
pub mod tightening;
pub mod uncertainty;
