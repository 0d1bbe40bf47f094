//! Numerical laboratory for anisotropic Musielak-Orlicz machinery.
//!
//! The crate stress-tests the constructive side of an existence theory for
//! `u_t - div A = f` with a maximal monotone relation `(grad u, A)` and
//! growth prescribed by an x-dependent anisotropic N-function:
//!
//! - [`nfunc`]: N-function kinds, axiom verification, doubling and
//!   log-Hoelder-type condition classifiers.
//! - [`conjugate`]: numerical Legendre-Fenchel conjugation and the
//!   Fenchel-Young gap.
//! - [`modular`]: modulars, Luxemburg norms, Hoelder pairings, and
//!   modular-convergence diagnostics on space-time grids.
//! - [`graph`]: maximal monotone graphs, selections, and the two
//!   mollification routes with coercivity transfer.
//! - [`mollify`]: truncation, the scale-and-mollify operator on star-shaped
//!   boxes, temporal mollification, and the density experiment.
//! - [`solver`]: sine-eigenbasis Galerkin systems, implicit Euler with
//!   damped Picard steps, energy and inclusion diagnostics.
//! - [`scenario`]: config-driven runner behind the CLI.

pub mod conjugate;
pub mod domain;
pub mod error;
pub mod expr;
pub mod graph;
pub mod grid;
pub mod modular;
pub mod mollify;
pub mod nfunc;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
