//! Core algorithms for cautious learning-based model predictive contouring
//! control of a miniature race car.
//!
//! The crate is `no_std` (it needs `alloc`). IO, configuration files and the
//! closed-loop simulator live in the `gpmpcc` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod controller;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod math;
pub mod mpcc;
pub mod propagation;
pub mod solver;
pub mod sparse;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
