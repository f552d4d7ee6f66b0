//! Isogeometric (NURBS Galerkin) solvers for nonlinear option-pricing PDEs.

pub mod assembly;
pub mod basis;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod error;
pub mod greeks;
pub mod linsolve;
pub mod quadrature;

pub use error::{Error, Result};
pub mod models;
pub mod reference;
pub mod stepper;
pub mod validation;
