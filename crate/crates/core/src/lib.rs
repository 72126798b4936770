//! Cooperative (super- and subradiant) photon emission of hard-core dipolar
//! excitons on deep-subwavelength triangular moire lattices.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`] builds site geometry and initial exciton / electron fillings.
//! * [`couplings`] evaluates photon-mediated hopping `J`, collective decay
//!   `Gamma` and the static dipolar repulsion `V`.
//! * [`exact`] integrates the full Lindblad master equation and diagonalises
//!   the collective decay operator sector by sector.
//! * [`cumulant`] solves the same dynamics in a second- or third-order
//!   cumulant closure for lattices beyond exact reach.
//! * [`analysis`] turns moment time series into emission rates, peak rates,
//!   enhancement ratios and finite-size extrapolations.
//!
//! Units throughout: `hbar = 1`, the optical wavelength `lambda = 1`
//! (so `k = 2 pi`), and rates in units of the one-body decay rate `gamma`.

pub mod analysis;
pub mod couplings;
pub mod cumulant;
pub mod error;
pub mod exact;
pub mod lattice;
pub mod ode;

pub use analysis::{EmissionTrace, FitResult, SolverKind, TraceMetadata};
pub use couplings::{CouplingMatrices, ModelParameters};
pub use error::{Error, Result};
pub use lattice::{Doping, LatticeConfiguration, Pattern};
