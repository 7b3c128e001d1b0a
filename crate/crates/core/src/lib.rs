//! Orthogonal nonnegative matrix tri-factorization `A ~ B S C` with
//! multiplicative, additive and convergent solvers, KKT diagnostics and
//! co-clustering evaluation.

pub mod matrix;
pub mod cli;
pub mod clustering;
pub mod io;
pub mod model;
pub mod solvers;
