//! Exact work statistics and fluctuation relations for quenched Dicke models
//! with conserved charges.
//!
//! The crate builds the N-particle Dicke Hamiltonian at finite Fock
//! truncation, diagonalizes it exactly (split over parity blocks in the
//! chaotic regime, over excitation-number sectors in the integrable
//! Tavis-Cummings limits), equips spectra with integer charge labels, and
//! runs two-projection-measurement quench protocols whose work and
//! generalized-work distributions come out as exact discrete PDFs. On top of
//! those it verifies the standard and generalized Tasaki-Crooks and
//! Jarzynski relations pointwise and in exponential average, fits Gibbs and
//! generalized-Gibbs reference ensembles to dephased post-quench states, and
//! compares occupations against both.
//!
//! Layering, bottom up:
//!
//! - [`hilbert`]: truncated ladder and collective-spin operators, tensor
//!   products, commutator norms.
//! - [`model`]: the Dicke Hamiltonian, the excitation-number charge, parity,
//!   and the charge-sector partition.
//! - [`spectra`]: dense Hermitian eigendecomposition with charge-aware
//!   sector labeling.
//! - [`ensembles`]: (generalized) Gibbs weights, expectations, free
//!   energies, and inverse-temperature fits.
//! - [`tpm`]: propagators, transition matrices, and exact work PDFs for
//!   forward and backward protocols.
//! - [`qfr`]: fluctuation-relation checks and occupation comparisons.
//! - [`config`] / [`runner`]: declarative experiment configs and the
//!   end-to-end runner behind the CLI.
//!
//! Runnable walkthroughs of each layer live in `examples/`.

pub mod cache;
pub mod config;
pub mod ensembles;
pub mod error;
pub mod hilbert;
pub mod model;
pub mod numeric;
pub mod qfr;
pub mod runner;
pub mod spectra;
pub mod tpm;

pub use error::{Error, Result};
