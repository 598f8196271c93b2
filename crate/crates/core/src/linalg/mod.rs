//! Sparse storage and the linear solvers used by the time stepper.

mod banded;
mod csr;
mod krylov;

pub use banded::BandedLu;
pub use csr::{dot, norm2, CsrMatrix, TripletBuilder};
pub use krylov::{bicgstab, cg, SolveStats};
