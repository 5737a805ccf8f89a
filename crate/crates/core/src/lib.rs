//! Numerical toolkit for slowly driven finite-dimensional quantum systems.
//!
//! The crate propagates the rescaled Schrödinger equation `iε U̇ = H(t) U`
//! for Hermitian matrix families `H_α(t)` with an isolated spectral cluster,
//! builds the associated Riesz spectral projectors and Kato parallel
//! transport, forms first- and second-order (superadiabatic) approximants of
//! the evolution, and evaluates the pumped-charge operator both exactly and
//! through its leading-order dynamical + geometric decomposition (Berry phase
//! in the simple case, a non-abelian holonomy in the degenerate case).
//!
//! Modules mirror the pipeline:
//!
//! - [`model`]: Hermitian matrix families with derivatives and gap
//!   certification.
//! - [`spectral`]: contour-integral projectors, the Kato generator, reduced
//!   resolvents and superadiabatic projectors.
//! - [`evolve`]: unitary propagation (exact, transport, phase), adiabatic
//!   residuals and the two exact charge-operator routes.
//! - [`holonomy`]: Berry phase, non-abelian holonomy and the leading-order
//!   charge formulas.
//! - [`examplefam`]: the bordered rank-two family with permanently degenerate
//!   kernel, its closed-form holonomies and the solid-angle identity.
//! - [`registry`]: named construction of the built-in families.

pub mod error;
pub mod evolve;
pub mod examplefam;
pub mod holonomy;
pub mod linalg;
pub mod model;
pub mod registry;
pub mod spectral;

pub use error::{CoreError, Result};
pub use linalg::{CMat, CVec};
