//! Learning polynomial surrogates of partially unknown control-affine systems
//! and synthesizing controllers with Lyapunov and barrier certificates by
//! sum-of-squares programming.

// Links the system OpenBLAS/LAPACK used by the conic solver's PSD cone.
extern crate openblas_src;

pub mod approx;
pub mod dynamics;
pub mod learn;
pub mod poly;
pub mod sim;
pub mod sosprog;
pub mod synthesis;
