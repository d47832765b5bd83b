//! Rydberg-state entangling gates for donors in silicon.
//!
//! Single-valley envelope states from a compressed-coordinate finite element
//! solver are combined into multivalley donor wavefunctions, donor-donor
//! interactions are integrated by Monte Carlo, and the resulting interaction
//! strength drives Lindblad simulations of three blockade gate protocols.

pub mod catalog;
pub mod fem;
pub mod gates;
pub mod interaction;
pub mod lindblad;
pub mod montecarlo;
pub mod multivalley;
pub mod optimize;
pub mod stark;
pub mod units;
