//! Diffuse-interface generalized antiferromagnetic energy on periodic tori.
//!
//! The energy of a phase field `u: [0,L)^d -> [0,1]` is
//! `F = L^-d [ (C_tau - 1) M_alpha(u) - sum_x sum_z |u(x) - u(x+z)|^2 K_tau(z) ]`
//! with the Modica-Mortola term `M_alpha`, the kernel
//! `K_tau(z) = (|z|_1 + tau^(1/beta))^-p` and its first marginal moment `C_tau`.
//!
//! Everything is generic over the scalar type through [`Real`]; `f64`
//! aliases are exported at the crate root.

pub mod decompose;
pub mod energy;
mod error;
pub mod field;
pub mod io;
pub mod kernel;
pub mod minimize;
pub mod onedim;
pub mod params;
mod par;
mod real;
pub mod stripes;
pub mod verify;

pub use error::{Error, Result};
pub use field::{make_random_field, make_stripe_field, ScalarField};
pub use params::Params;
pub use real::Real;

pub type Params64 = params::Params<f64>;
pub type Params32 = params::Params<f32>;
pub type Field64 = field::ScalarField<f64>;
pub type Field32 = field::ScalarField<f32>;
pub type KernelTable64 = kernel::KernelTable<f64>;
pub type KernelTable32 = kernel::KernelTable<f32>;
pub type Profile64 = onedim::Profile1D<f64>;
