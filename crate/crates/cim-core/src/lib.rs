//! Simulator for measurement-feedback coherent Ising machines built from
//! degenerate optical parametric oscillator pulses.
//!
//! Conditional pulse states are real density matrices in the in-phase
//! amplitude basis. Each cavity round trip applies phase-sensitive
//! amplification with two-photon loss, a background-loss coupler, a homodyne
//! measurement coupler, and an Ising-coupled feedback displacement. A
//! truncated photon-number implementation of every channel serves as an
//! independent oracle, and the analysis layer derives success probabilities,
//! Wigner functions, and contour exports from trajectory ensembles.

pub mod analysis;
pub mod channels;
pub mod config;
pub mod engine;
pub mod error;
pub mod fock;
pub mod grid;
mod interp;

pub use error::{CimError, Result};
pub use grid::{DensityMatrixX, Moments, XGrid};
