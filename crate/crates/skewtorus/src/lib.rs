//! Simulation and verification laboratory for a partially hyperbolic
//! skew product on the 4-torus.
//!
//! The system couples a twist family on the (x, y) plane with a toral
//! automorphism acting on the (z, w) fiber. The crate provides the map,
//! its inverse and derivatives, Lyapunov-exponent estimators, hyperbolic
//! time detection with density bounds, cone-field checks, expanding-curve
//! subdivision with distortion and integral bookkeeping, and ergodicity
//! diagnostics, together with a batch runner that writes CSV/JSON
//! artifacts for offline inspection.

pub mod cones;
pub mod config;
pub mod ergodic;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod maps;
pub mod pliss;
pub mod runner;
pub mod scales;
pub mod torus;
pub mod ucurves;

pub use error::{Error, Result};
pub use linalg::{eigendata, HyperbolicData, IntMat2, Mat2, Mat4, Vec2, Vec4};
pub use maps::{standard_map, standard_map_inverse, Point2, Point4, Shear, SkewProduct, System};
pub use torus::{
    apply_int_mat, apply_mat_power, circle_dist, from_lattice, reduce_mod_2pi, to_lattice,
    torus_dist2, torus_dist4, DEFAULT_MAX_POWER, LATTICE_BITS, LATTICE_SIZE, TAU,
};
