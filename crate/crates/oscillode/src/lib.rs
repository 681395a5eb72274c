//! Solver toolkit for highly oscillatory ODEs of the form
//! `y'(t) = f(t/eps, y)` with `f` 2pi-periodic in its phase argument.
//!
//! The toolkit learns the slow-fast decomposition of such systems with
//! small structured neural networks and integrates them with three
//! schemes: plain slow-fast reconstruction, micro-macro correction
//! (uniformly accurate in `eps`), and an alternative flow-map method for
//! autonomous systems.

pub mod averaging;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod integrators;
pub mod linalg;
pub mod micromacro;
pub mod neuralnet;
pub mod problems;
pub mod training;

pub use error::Error;
