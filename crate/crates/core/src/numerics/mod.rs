//! Dense symmetric linear algebra, fixed-step integrators, path quadrature and
//! seeded sampling.

pub mod eigen;
pub mod integrate;
pub mod matrix;
pub mod quadrature;
pub mod rng;

pub use eigen::{
    eigenvalues_sym, inverse, is_definite, max_eig_sym, min_eig_sym, spd_inverse, spectral_norm,
    sym_eigen, Definiteness, SymEigen,
};
pub use integrate::{integrate_ode, integrate_sde, rk4_step, em_step, Trajectory, DEFAULT_DT};
pub use matrix::{dot, norm, outer, sym, Mat};
pub use quadrature::path_quadrature;
pub use rng::{sample_unit_sphere, streams, RngStream};
