//! Conditional neural processes on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod selftest;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
