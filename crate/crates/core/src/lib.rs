//! Numerical laboratory for space-time periodic homogenization of nonlinear
//! diffusion equations of porous-medium / fast-diffusion type.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] – structured simplicial grids on the macro box `Ω×I` and the
//!   periodic cell `□×J`, fields, norms, discrete gradient and dual norm.
//! * [`coeff`] – the periodic coefficient field `a(y,s)`.
//! * [`linalg`] – CSR storage and preconditioned conjugate gradients.
//! * [`diffusion`] – backward-Euler/Newton solver for the oscillating and the
//!   homogenized problem.
//! * [`cell`] – cell problems for every `(p, r)` regime and the homogenized
//!   tensor.
//! * [`unfold`] – discrete space-time unfolding and averaging operators.
//! * [`corrector`] – corrector functionals and the ε-sweep study driver.

pub mod cell;
pub mod coeff;
pub mod corrector;
pub mod diffusion;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod tensor;
pub mod unfold;

pub use error::{Error, Result};
pub use tensor::Tensor;
