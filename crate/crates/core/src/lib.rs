//! Probabilistic learning on manifolds: learn new realizations of a random vector from a
//! small dataset by sampling a reduced-order dissipative Hamiltonian diffusion whose
//! invariant measure is a kernel density estimate, projected onto a diffusion-maps basis.
//!
//! Pipeline: [`dataset_io`] scaling, [`pca`] whitening, [`kde`] target density,
//! [`diffusion_maps`] reduced basis, [`isde`] sampling, [`diagnostics`] concentration
//! curves. [`mixture_oracle`] evaluates the exact mixture law for tiny datasets.

pub mod dataset_io;
pub mod diagnostics;
pub mod diffusion_maps;
pub mod error;
pub mod isde;
pub mod kde;
pub mod mixture_oracle;
pub mod numeric;
pub mod pca;
pub mod synthetic;

pub use error::{ErrorKind, PlomError, Result};
