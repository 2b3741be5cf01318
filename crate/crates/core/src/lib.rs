//! Numerical toolkit for the weighted Caffarelli–Kohn–Nirenberg interpolation
//! inequality: best constants, Barenblatt profiles, linearized spectra, the
//! weighted fast-diffusion flow and the selection integrals of the `γ → 0` limit.

pub mod entropy_flow;
mod linalg;
pub mod minimizer;
pub mod params;
pub mod profiles;
pub mod quadrature;
pub mod radial_solver;
pub mod selection;
pub mod spectral;
