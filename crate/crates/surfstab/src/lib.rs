//! Discrete stability analysis for closed surfaces inside three ambient
//! geometries that carry a global orthonormal Killing frame: Euclidean
//! 3-space, the round 3-sphere realized as the unit quaternions, and flat
//! 3-tori.
//!
//! The crate discretizes the second-variation (Jacobi) operator of minimal
//! and constant-mean-curvature surfaces, counts Morse index and nullity,
//! extracts discrete harmonic 1-forms, and assembles the frame-based test
//! functions `w_i = <xi, E_i>`, `wbar_i = <*xi, E_i>` that certify the
//! genus lower bound `index + nullity >= ceil(genus / 3)` (and, in the CMC
//! case, `index >= ceil(genus / 3 - 1)`).
//!
//! Sign convention, fixed once for the whole crate: the stability form is
//!
//! ```text
//! Q(u) = int |grad u|^2 - (|A|^2 + Ric(N,N)) u^2  dv
//! ```
//!
//! so the discrete pencil is `(K - diag(V) M, M)` with `K` the cotangent
//! stiffness matrix, `M` the lumped mass, and `V` the per-vertex potential.
//! Negative eigenvalues count the index, eigenvalues in `[-tol, tol]` the
//! nullity.

pub use nalgebra;

pub mod ambient;
pub mod fem;
pub mod generators;
pub mod geometry;
pub mod hodge;
pub mod killing;
pub mod linalg;
pub mod mesh;

#[cfg(test)]
pub(crate) mod test_fixtures;
