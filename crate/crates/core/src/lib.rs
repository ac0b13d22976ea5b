//! Quantum trajectories of an ultracold lattice gas probed through a cavity.
//!
//! Photodetection of light scattered into the cavity conditions the atomic
//! state. Three engines produce trajectories of the photocount number `m`
//! against the dimensionless time `τ = 2|C|²κt`:
//!
//! * [`exact`] evolves the discrete conditional atom-number distribution
//!   `p(z, m, τ) ∝ z^{2m} e^{-z²τ} p₀(z)` in the log domain;
//! * [`gaussian`] uses closed-form next-count probabilities for a
//!   macroscopic superfluid with a Gaussian initial distribution and never
//!   materializes a distribution;
//! * [`full`] enumerates every lattice configuration with its coherent light
//!   amplitude and serves as the small-lattice reference.
//!
//! [`purity`] covers the two-branch superposition left after tracing out the
//! light, and [`runner`] drives seeded ensembles, verification and
//! plot-ready output.

pub mod distribution;
pub mod error;
pub mod exact;
pub mod full;
pub mod gaussian;
pub mod model;
pub mod purity;
pub mod quadrature;
pub mod runner;
pub mod special;
pub mod trajectory;
pub mod verify;

pub use distribution::{AtomNumberDistribution, GaussianSpec};
pub use error::{Error, Result};
pub use model::{CavityParams, DiffractionMode, LatticeGeometry, ModeFunctions, ScatteringScales};
pub use trajectory::TrajectoryRecord;
