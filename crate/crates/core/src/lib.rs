//! Primal-dual interior-point solver for convex quadratically-constrained
//! quadratic programs.
//!
//! Two problem types are supported: a dense QCQP ([`DenseQcqp`]) and a
//! multi-stage optimal-control QCQP ([`OcpQcqp`]). Both are solved by the same
//! delta-formulation Mehrotra iteration in [`ipm`]; the linear algebra is
//! delegated to a backend that eliminates inequality slacks and multipliers
//! and factorizes the resulting augmented system, either densely
//! ([`kkt_dense`]) or with a Riccati recursion over the stages ([`kkt_ocp`]).
//! [`condensing`] turns OCPs into dense or shorter-horizon problems and maps
//! solutions back. [`bench`] generates the mass-spring benchmark family.

pub mod bench;
pub mod condensing;
mod error;
pub mod ipm;
pub mod kkt_dense;
pub mod kkt_ocp;
pub mod linalg;
pub mod model;

pub use error::QcqpError;
pub use ipm::{ExitStatus, IpmSettings, IpmStats, Mode};
pub use kkt_dense::{solve_dense, DenseSolution};
pub use kkt_ocp::{solve_ocp, OcpSolution};
pub use linalg::Mat;
pub use model::{DenseDims, DenseQcqp, OcpDims, OcpQcqp, ValidationReport, X0Mode};
