//! Operator-valued dyadic harmonic analysis on matrix-valued step functions.
//!
//! Fields live on the dyadic grid of `[0,1)^d` (`d` = 1 or 2) and take values
//! in `n x n` complex matrices with the ordinary trace. The crate provides
//! dyadic averages and ball averages, the square-function operators built from
//! them, Cuculescu's projections, the noncommutative Calderón-Zygmund
//! decomposition and a harness of numerical checks.

#![no_std]

extern crate alloc;

pub mod algebra;
pub mod corpus;
pub mod czd;
pub mod error;
pub mod field;
pub mod grid;
pub mod norms;
pub mod operators;
pub mod verify;

pub use error::{Error, Result};
