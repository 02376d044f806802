//! Benchmark-driven pilot provisioning on a simulated grid fabric.
//!
//! A [`factory::Factory`] submits pilots to entries under pressure from
//! frontends; the [`runner::Runner`] launches benchmark campaigns through the
//! same factory; benchmark pilots print checksummed result blocks that the
//! [`collector`] parses and aggregates; [`decision`] turns fresh scores into a
//! provisioning plan. [`sim::Simulation`] drives all of it on one simulated
//! clock.

pub mod benchharness;
pub mod collector;
pub mod decision;
pub mod domain;
pub mod fabricsim;
pub mod factory;
pub mod pilot;
pub mod runner;
pub mod scenario;
pub mod sim;
