//! Numerical laboratory for complex Hénon maps: Green functions, the equilibrium
//! measure as a discrete Monge–Ampère product, p.s.h. test gadgets and
//! correlation-decay experiments.

pub mod cli;
pub mod config;
pub mod error;
pub mod field;
pub mod green;
pub mod grid;
pub mod io;
pub mod map;
pub mod measure;
pub mod mixing;
pub mod observable;
pub mod periodic;
pub mod pipeline;
pub mod product;
pub mod render;
pub mod verify;

pub use error::{Error, Result};
