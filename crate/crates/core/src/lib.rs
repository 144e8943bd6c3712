//! Fair allocation of indivisible goods: maximin-share approximations
//! combined with EFX and EF1, exact verifiers, and brute-force oracles.
//!
//! All valuations are non-negative integers and every fairness comparison is
//! exact integer cross-multiplication.

pub mod envy;
pub mod gen;
pub mod matching;
pub mod mms;
pub mod model;
pub mod ratio;
pub mod solvers;
pub mod verify;

pub use model::{validate_allocation, Bundle, Instance, PartialAllocation};
pub use ratio::{Ratio, Share};
pub use solvers::{approx_mms, approx_mms_ef1, approx_mms_efx, audit_potential, solve, Goal, SolveReport, SolverConfig};
