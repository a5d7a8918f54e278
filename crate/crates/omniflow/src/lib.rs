//! Construction and verification of omni-potential flows.
//!
//! A flow is omni-potential when the particle-position mapping between any
//! two times is the gradient of a convex potential. This crate builds the
//! explicit polynomial families with that property in exact rational
//! arithmetic, verifies omni-potentiality numerically through Hessian
//! commutation, bi-potentiality, and eigenframe invariants, constructs 2-D
//! short-wavelength (WKB) omni-potential flows for arbitrary smooth initial
//! potentials, and demonstrates exact Lagrangian-map recovery by discrete
//! quadratic-cost optimal transport.

pub mod flow;
pub mod grid;
pub mod mak;
pub mod polynomials;
pub mod sampling;
pub mod symmat;
pub mod wkb2d;
