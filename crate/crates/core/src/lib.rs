//! Pseudo-spectral laboratory for the damped Euler system with nonlocal pressure.

pub mod asymptotics;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod hydro;
pub mod initial_data;
pub mod io;
pub mod kernels;
pub mod linear_modes;
pub mod littlewood_paley;
pub mod particles;
pub mod runner;
pub mod spectral;

pub use error::{Error, Result};
pub use kernels::{FrequencyClass, KernelFamily, KernelKind};
pub use spectral::{GridSpec, SpectralField};
