//! Seed -> place particles -> evolve, shared by the sweep, the staged
//! calibration runs and the command-line front end.

use crate::engine::{Engine, EngineParams, SweepMode};
use crate::error::Result;
use crate::lattice::Lattice;
use crate::metrics::{KineticsPoint, KineticsSeries};
use crate::rng::derive_seed;
use crate::seeding::{place_particles, voronoi_init, ParticleSpec, Placement, SeedConfig};

/// Grid and initial-structure settings common to every run.
#[derive(Debug, Clone, PartialEq)]
pub struct Microstructure {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub n_grains: usize,
}

/// The three independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub voronoi: u64,
    pub particles: u64,
    pub engine: u64,
}

impl RunSeeds {
    /// Streams for replicate `index` of a study seeded with `base`.
    pub fn replicate(base: u64, index: u64) -> Self {
        let root = derive_seed(base, index);
        RunSeeds {
            voronoi: root,
            particles: derive_seed(root, 1),
            engine: derive_seed(root, 2),
        }
    }
}

/// Builds the starting lattice. A zero volume fraction (or `None`) leaves
/// the polycrystal particle-free.
pub fn initial_lattice(
    micro: &Microstructure,
    particles: Option<&ParticleSpec>,
    seeds: &RunSeeds,
) -> Result<(Lattice, Option<Placement>)> {
    let lat = voronoi_init(&SeedConfig {
        width: micro.width,
        height: micro.height,
        cell_size: micro.cell_size,
        n_grains: micro.n_grains,
        rng_seed: seeds.voronoi,
    })?;
    match particles {
        Some(spec) => {
            let (lat, placement) = place_particles(lat, spec, seeds.particles)?;
            Ok((lat, Some(placement)))
        }
        None => Ok((lat, None)),
    }
}

/// Evolves `lattice` for `n_cas` steps, measuring kinetics at every record
/// point. `on_record` also sees each recorded lattice.
pub fn evolve<F>(
    lattice: Lattice,
    params: EngineParams,
    mode: SweepMode,
    n_cas: u64,
    record_every: u64,
    mut on_record: F,
) -> Result<(Lattice, KineticsSeries)>
where
    F: FnMut(u64, &Lattice),
{
    let mut engine = Engine::with_mode(lattice, params, mode)?;
    let mut series = KineticsSeries::default();
    engine.run(n_cas, record_every, |cas, lat| {
        series
            .push(KineticsPoint::measure(cas, lat))
            .expect("engine records strictly increasing steps");
        on_record(cas, lat);
    });
    Ok((engine.into_lattice(), series))
}
