//! Numerical toolkit for divergence-form diffusion operators with
//! anti-symmetric and divergence-free drift parts.

pub mod coeff;
pub mod criteria;
pub mod mc;
pub mod pde;
pub mod scenarios;
pub mod testfn;
