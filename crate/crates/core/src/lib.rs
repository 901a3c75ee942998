//! Verification-grade numerics for basic (q-)hypergeometric series, q-Borel
//! resummation, and the connection/Stokes data of confluent q-difference
//! equations and their rank-one irregular matrix systems, together with the
//! q -> 1 degeneration to classical Gamma-function Stokes data.
//!
//! Layering, bottom to top:
//! - [`qcore`]: contexts, branched points, Pochhammer/theta/q-Gamma kernel.
//! - [`qseries`]: basic and classical hypergeometric series, formal solution
//!   bases of the confluent equation, q-difference residual oracles.
//! - [`resummation`]: q-Borel transform, q-Laplace sums along discrete
//!   spirals, the resummed divergent series and its q-Gevrey diagnostics.
//! - [`connection`]: Fuchsian and confluent connection coefficients and the
//!   checks tying the resummed bases together.
//! - [`qsystem`]: the matrix system with one irregular slot, its fundamental
//!   solutions, connection matrix and q-Stokes matrix in closed form.
//! - [`classical`]: Gamma-function connection/Stokes data of the limiting
//!   differential equation and the q -> 1 degeneration checks.
//! - [`report`] / [`verify`]: deterministic JSON reports and the named
//!   verification suites the command line exposes.

pub mod classical;
pub mod connection;
pub mod error;
pub mod linalg;
pub mod qcore;
pub mod qseries;
pub mod qsystem;
pub mod report;
pub mod resummation;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
pub use qcore::{BranchedPoint, QContext};
