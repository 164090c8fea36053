//! Numerical building blocks shared by the simulation modules.

pub mod normal;
pub mod quadrature;
pub mod stats;
