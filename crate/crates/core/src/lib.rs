//! Pseudospectral simulation and verification toolkit for the short-pulse
//! equation `u_tx = u + (u^3)_xx`.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: periodic grids, continuum-normalised transforms, Fourier
//!   multipliers and the exact free propagator.
//! * [`lp`]: scaled dyadic Littlewood–Paley projections and the
//!   hyperbolic/elliptic split of the positive-frequency part.
//! * [`evolution`]: integrating-factor time stepping of
//!   `u_t = ∂ₓ⁻¹u + ∂ₓ(u^p)` with dealiasing and runtime monitors.
//! * [`diagnostics`]: the weighted norms and vector fields used to track
//!   dispersive decay, plus log-log fitting.
//! * [`probe`]: wave-packet testing, the amplitude `γ(t,v)`, its limit ODE
//!   and the modified final state.
//! * [`appendix`]: Fourier-side evaluation of a counterexample family for a
//!   dispersive interpolation inequality.
//! * [`harness`]: experiment configuration, persistence and the commands
//!   driven by the CLI.
//!
//! Data-parallel loops (probes, bands, scan cases) go through [`exec`]; with
//! the default `parallel` feature they run on rayon, otherwise sequentially.

pub mod appendix;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod harness;
pub mod io;
pub mod lp;
pub mod probe;
pub mod selftest;
pub mod smooth;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
