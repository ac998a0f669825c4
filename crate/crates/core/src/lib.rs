//! Stochastic cellular-automata simulation of grain growth with second-phase
//! particle pinning.
//!
//! The pipeline is: [`seeding`] builds a periodic Voronoi polycrystal and
//! drops circular particles into it, [`engine`] advances the lattice with a
//! thermally activated, lowest-energy update rule, [`metrics`] labels grains
//! and reduces them to size statistics, and [`zener`] sweeps particle radius
//! and fraction, fits `d_lim / r = k / f^n`, and maps steps to minutes
//! against measured holding-time data.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod seeding;
pub mod zener;

pub use engine::{Engine, EngineParams, StepReport, SweepMode};
pub use error::{Error, Result};
pub use lattice::{CellState, Lattice, NeighborSet, Orientation};
pub use seeding::{ParticleSpec, SeedConfig};
