//! Semiclassical propagation of n-mode bosonic systems with fixed particle
//! number, in the SU(n) coherent-state representation.
//!
//! Three routes to the same dynamics:
//!
//! * [`fock`] — exact quantum propagation of the model Hamiltonian over the
//!   number basis (the in-crate reference),
//! * [`ivr`] + [`dynamics`] — the semiclassical propagator rebuilt from a
//!   filtered ensemble of initial-valued trajectories in the doubled phase
//!   space, with tangent blocks, action and correction term integrated
//!   alongside each trajectory,
//! * the classical approximation — normal symbols evaluated along the single
//!   principal trajectory.
//!
//! [`coherent`] supplies the coherent-state algebra and Husimi grids,
//! [`model`] the effective classical Hamiltonians with analytic derivatives,
//! [`observables`] the cross-approach time series, and [`scenario`] the
//! batch runner behind the `sunivr` CLI.

pub mod coherent;
pub mod dynamics;
pub mod fock;
pub mod ivr;
pub mod model;
pub mod observables;
pub mod scenario;
pub mod util;
