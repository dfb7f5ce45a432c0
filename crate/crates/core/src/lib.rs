//! Simulation and verification engine for Markovian quantum-classical
//! hybrid dynamics.
//!
//! A hybrid state is a lattice of unnormalized conditional density matrices
//! `rho_n`, one per classical site. The engine builds the generators of the
//! four basic quantum-classical coupling mechanisms, validates complete
//! positivity of their rate matrices, integrates the resulting master
//! equations, constructs diffusive and quantum-Fokker-Planck approximations
//! on the same lattice, and checks everything against exact Bessel/Gaussian
//! closed forms and positivity thresholds.

pub mod analytic;
pub mod diagnostics;
pub mod diffusive;
pub mod evolution;
pub mod generator;
pub mod linalg;
pub mod mechanisms;
pub mod state;

pub use num_complex::Complex64;

/// Complex dense matrix used throughout (conditional states, operators,
/// rate matrices, superoperators).
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Complex dense vector.
pub type CVector = nalgebra::DVector<Complex64>;
