//! Long-range random walks on `Z_q^d` and the objects built from their
//! spectra: killed-walk Green functions, multivariate Krawtchouk expansions,
//! de Finetti point-process moments, Gaussian fields with Green covariance,
//! their `d -> infinity` limits, and Hamiltonian / partition-function
//! quantities.
//!
//! Every lattice-valued array is indexed by the little-endian rank
//! `rank(x) = sum_k x[k] q^k`, and the Fourier transform is unitary (see
//! [`zqd`]).

pub mod asymptotics;
pub mod combinatorics;
pub mod error;
pub mod field;
pub mod green;
pub mod hamiltonian;
pub mod krawtchouk;
pub mod mc;
pub mod pointproc;
pub mod walk;
pub mod zqd;

pub use error::{Error, Result};
