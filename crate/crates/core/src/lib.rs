//! Quantum-trajectory simulation of geometric phases in a cyclically driven,
//! dissipative two-level system.
//!
//! The crate is organised bottom-up: [`types`] and [`model`] define the
//! physics, [`trajectory`] samples monitored evolutions, [`gp`] turns state
//! histories into geometric phases, [`lindblad`] integrates the averaged
//! dynamics, [`echo`] runs the spin-echo protocol, [`analytic`] holds the
//! rotating-frame closed forms, [`topology`] maps the winding of the no-jump
//! phase and [`stats`] bins circular samples.

pub mod analytic;
pub mod echo;
pub mod error;
pub mod gp;
pub mod lindblad;
pub mod model;
pub mod stats;
pub mod topology;
pub mod trajectory;
pub mod types;

pub use error::{Error, Result};
pub use types::{arg_overlap, wrap_phase, Matrix2c, ModelParams, Phase, PureState, C64};
