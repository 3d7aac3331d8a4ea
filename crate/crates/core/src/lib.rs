//! Truncated thermofield laboratory for spin–boson and toy-atom models in the
//! glued Araki–Woods representation.
//!
//! The Hilbert space is `ℂ^d ⊗ ℂ^d ⊗ F`, with `F` a total-occupation
//! truncation of the bosonic Fock space over a symmetric frequency grid.
//! Basis index of `φ_i ⊗ φ_j ⊗ |n⟩` is `(i·d + j)·dim F + n`.

pub mod cli;
pub mod dynamics;
pub mod dyson;
pub mod error;
pub mod fock;
pub mod jet;
pub mod kms;
pub mod krylov;
pub mod liouvillian;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod quad;
pub mod spectral;

pub use error::{Error, Result};
pub use operator::{OperatorMatrix, C64};
