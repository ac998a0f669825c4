use grainca::config::{OutputFormat, RunConfig};
use grainca::engine::{AcceptanceRule, SweepMode};
use proptest::prelude::*;

fn fraction() -> impl Strategy<Value = f64> {
    (1u32..999_999).prop_map(|x| f64::from(x) / 1e6)
}

prop_compose! {
    fn any_config()(
        width in 3usize..2000,
        height in 3usize..2000,
        cell in 0.01f64..10.0,
        seeds in any::<[u64; 5]>(),
        radius in 0.01f64..20.0,
        f in fraction(),
        q in 0.0f64..20_000.0,
        strict in any::<bool>(),
        full in any::<bool>(),
        n_cas in 0u64..1_000_000,
        record in 0u64..10_000,
        formats in proptest::sample::subsequence(
            vec![OutputFormat::Csv, OutputFormat::Lattice, OutputFormat::Ppm], 0..=3),
        radii in proptest::collection::vec(0.01f64..10.0, 1..5),
        fractions in proptest::collection::vec(fraction(), 1..6),
        tolerance in 0.0f64..1.0,
        dir in "[a-z][a-z0-9_/]{0,12}",
    ) -> RunConfig {
        let mut c = RunConfig::default();
        c.grid.width = width;
        c.grid.height = height;
        c.grid.cell_size_um = cell;
        c.seeding.n_grains = 1 + (seeds[0] as usize) % (width * height);
        c.seeding.rng_seed = seeds[1];
        c.particles.radius_um = radius;
        c.particles.volume_fraction = f;
        c.particles.rng_seed = seeds[2];
        c.engine.q = q;
        c.engine.acceptance = if strict { AcceptanceRule::Strict } else { AcceptanceRule::NonIncreasing };
        c.engine.sweep_mode = if full { SweepMode::Full } else { SweepMode::ActiveSet };
        c.engine.rng_seed = seeds[3];
        c.schedule.n_cas = n_cas;
        c.schedule.record_every = record;
        c.outputs.formats = formats;
        c.outputs.directory = dir.into();
        c.sweep.radii_um = radii;
        c.sweep.fractions = fractions;
        c.sweep.base_seed = seeds[4];
        c.calibrate.tolerance = tolerance;
        c
    }
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_identity(cfg in any_config()) {
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
