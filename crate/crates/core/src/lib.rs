//! Resonances and trace invariants of 1-D semiclassical Schrödinger
//! operators −h²u″ + Vu = λ²u, the moment invariants they determine, and the
//! reconstruction of a radial monotone potential from those moments.
//!
//! Kernels are generic over [`scalar::Real`]. The aliases below name the
//! instantiations the pipeline uses: double precision everywhere, quad
//! precision for the λ → ∞ moment extraction.

pub mod error;
pub mod inversion;
pub mod linalg;
pub mod moments;
pub mod ode;
pub mod potentials;
pub mod quadrature;
pub mod resonances;
pub mod scalar;
pub mod special;
pub mod testfns;
pub mod trace;

pub use error::{Error, Result};

/// IEEE quad precision.
pub type Quad = f128::f128;

pub type Field = potentials::PotentialField<f64>;
pub type QuadField = potentials::PotentialField<Quad>;
pub type Profile = potentials::RadialProfile<f64>;
pub type Pair = testfns::TestFunctionPair<f64>;
pub type QuadPair = testfns::TestFunctionPair<Quad>;
pub type Problem = resonances::SpectralProblem<f64>;
pub type QuadEvaluator = moments::MomentumReducedEvaluator<Quad>;
