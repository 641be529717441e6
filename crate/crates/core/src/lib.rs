//! Simulator and diagnostics for the isotropic wave kinetic equation of a
//! finite-temperature Bose gas thermal cloud.
//!
//! The evolved object is the measure `F(t, w) = f(t, w) * Gamma(w)` on the
//! frequency half-line, represented as non-negative cell masses on a
//! truncated grid together with two passive accumulators: a condensate at
//! `w = 0` and an overflow ledger standing in for `w = infinity`.
//!
//! Three collision operators act on the spectrum: the 3-wave `C12` and the
//! two 4-wave operators `C22` and `C31`, each realized from its weak form.

pub mod cascade;
pub mod collision;
pub mod error;
pub mod evolve;
pub mod kernelmodel;
pub mod spectrum;
pub mod sum;

pub use error::{Error, Result};
