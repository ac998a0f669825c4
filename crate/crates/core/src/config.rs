//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys take their defaults. Unknown keys, malformed
//! values and out-of-range values are all reported together.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::engine::{AcceptanceRule, EngineParams, SweepMode};
use crate::error::{Error, Result};
use crate::lattice::{DEFAULT_CELL_SIZE_UM, DEFAULT_EDGE};
use crate::metrics::DEFAULT_BIN_WIDTH_UM;
use crate::pipeline::Microstructure;
use crate::zener::{
    StagedSettings, SweepSettings, DEFAULT_FRACTIONS, DEFAULT_RADII_UM, DEFAULT_SWEEP_CAS,
};

/// Initial grain count giving a mean equivalent diameter near 7.6 um on the
/// default 120 um square.
pub const DEFAULT_N_GRAINS: usize = 296;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedingConfig {
    pub n_grains: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticlesConfig {
    pub radius_um: f64,
    pub volume_fraction: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub c: f64,
    pub q: f64,
    pub temperature_k: f64,
    pub j_energy: f64,
    pub acceptance: AcceptanceRule,
    pub sweep_mode: SweepMode,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub n_cas: u64,
    pub record_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputFormat {
    Csv,
    Lattice,
    Ppm,
}

impl Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Lattice => "lattice",
            OutputFormat::Ppm => "ppm",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "lattice" => Ok(OutputFormat::Lattice),
            "ppm" => Ok(OutputFormat::Ppm),
            _ => Err(format!("unknown format {s:?} (expected csv, lattice or ppm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputsConfig {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub histogram_bin_um: f64,
    /// Images are written at recorded steps that are multiples of this, and
    /// at the final step. 0 keeps only the final image.
    pub image_every: u64,
}

impl OutputsConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub radii_um: Vec<f64>,
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Plateau window in recorded points; 0 uses the final tenth.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub initial_cas_per_minute: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub overrun: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub seeding: SeedingConfig,
    pub particles: ParticlesConfig,
    pub engine: EngineConfig,
    pub schedule: ScheduleConfig,
    pub outputs: OutputsConfig,
    pub sweep: SweepConfig,
    pub calibrate: CalibrateConfig,
    pub runtime: RuntimeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let engine = EngineParams::default();
        RunConfig {
            grid: GridConfig {
                width: DEFAULT_EDGE,
                height: DEFAULT_EDGE,
                cell_size_um: DEFAULT_CELL_SIZE_UM,
            },
            seeding: SeedingConfig {
                n_grains: DEFAULT_N_GRAINS,
                rng_seed: 1,
            },
            particles: ParticlesConfig {
                radius_um: 1.2,
                volume_fraction: 0.05,
                rng_seed: 2,
            },
            engine: EngineConfig {
                c: engine.c,
                q: engine.q,
                temperature_k: engine.temperature,
                j_energy: engine.j_energy,
                acceptance: engine.acceptance,
                sweep_mode: SweepMode::default(),
                rng_seed: 3,
            },
            schedule: ScheduleConfig {
                n_cas: DEFAULT_SWEEP_CAS,
                record_every: 1000,
            },
            outputs: OutputsConfig {
                directory: PathBuf::from("out"),
                formats: vec![OutputFormat::Csv, OutputFormat::Lattice, OutputFormat::Ppm],
                histogram_bin_um: DEFAULT_BIN_WIDTH_UM,
                image_every: 10_000,
            },
            sweep: SweepConfig {
                radii_um: DEFAULT_RADII_UM.to_vec(),
                fractions: DEFAULT_FRACTIONS.to_vec(),
                seeds: 5,
                base_seed: 7,
                window: 0,
            },
            calibrate: CalibrateConfig {
                seeds: 3,
                base_seed: 11,
                initial_cas_per_minute: 700.0,
                tolerance: 0.02,
                max_iterations: 6,
                overrun: 0.0,
            },
            runtime: RuntimeConfig { threads: 0 },
        }
    }
}

/// Values that serialize losslessly to one config token.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, AcceptanceRule, SweepMode);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("not a number: {s:?}"))
    }
    fn format_value(&self) -> String {
        // Debug output round-trips exactly.
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("path is empty".into());
        }
        Ok(PathBuf::from(s))
    }
    fn format_value(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn format_value(&self) -> String {
        self.iter().map(T::format_value).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for OutputFormat {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

/// Walks every field in a fixed order, either reading or writing it.
trait Visitor {
    fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T);
}

impl RunConfig {
    fn visit<V: Visitor>(&mut self, v: &mut V) {
        let g = &mut self.grid;
        v.field("grid.width", &mut g.width);
        v.field("grid.height", &mut g.height);
        v.field("grid.cell_size_um", &mut g.cell_size_um);
        let s = &mut self.seeding;
        v.field("seeding.n_grains", &mut s.n_grains);
        v.field("seeding.rng_seed", &mut s.rng_seed);
        let p = &mut self.particles;
        v.field("particles.radius_um", &mut p.radius_um);
        v.field("particles.volume_fraction", &mut p.volume_fraction);
        v.field("particles.rng_seed", &mut p.rng_seed);
        let e = &mut self.engine;
        v.field("engine.c", &mut e.c);
        v.field("engine.Q", &mut e.q);
        v.field("engine.T", &mut e.temperature_k);
        v.field("engine.J_energy", &mut e.j_energy);
        v.field("engine.acceptance", &mut e.acceptance);
        v.field("engine.sweep_mode", &mut e.sweep_mode);
        v.field("engine.rng_seed", &mut e.rng_seed);
        let sc = &mut self.schedule;
        v.field("schedule.n_cas", &mut sc.n_cas);
        v.field("schedule.record_every", &mut sc.record_every);
        let o = &mut self.outputs;
        v.field("outputs.directory", &mut o.directory);
        v.field("outputs.formats", &mut o.formats);
        v.field("outputs.histogram_bin_um", &mut o.histogram_bin_um);
        v.field("outputs.image_every", &mut o.image_every);
        let sw = &mut self.sweep;
        v.field("sweep.radii_um", &mut sw.radii_um);
        v.field("sweep.fractions", &mut sw.fractions);
        v.field("sweep.seeds", &mut sw.seeds);
        v.field("sweep.base_seed", &mut sw.base_seed);
        v.field("sweep.window", &mut sw.window);
        let c = &mut self.calibrate;
        v.field("calibrate.seeds", &mut c.seeds);
        v.field("calibrate.base_seed", &mut c.base_seed);
        v.field("calibrate.initial_cas_per_minute", &mut c.initial_cas_per_minute);
        v.field("calibrate.tolerance", &mut c.tolerance);
        v.field("calibrate.max_iterations", &mut c.max_iterations);
        v.field("calibrate.overrun", &mut c.overrun);
        v.field("runtime.threads", &mut self.runtime.threads);
    }

    /// All keys in serialization order.
    pub fn keys() -> Vec<String> {
        struct Keys(Vec<String>);
        impl Visitor for Keys {
            fn field<T: ConfigValue>(&mut self, key: &str, _: &mut T) {
                self.0.push(key.to_string());
            }
        }
        let mut k = Keys(Vec::new());
        RunConfig::default().visit(&mut k);
        k.0
    }

    /// Parses config text, then applies `overrides` (`section.key=value`).
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, String)> = BTreeMap::new();
        let mut problems = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("line {}", n + 1);
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if entries.contains_key(&k) {
                        problems.push(format!("{k}: duplicate key ({origin})"));
                    }
                    entries.insert(k, (v.trim().to_string(), origin));
                }
                None => problems.push(format!("{origin}: expected `section.key = value`")),
            }
        }
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) => {
                    entries.insert(k.trim().to_string(), (v.trim().to_string(), "--set".into()));
                }
                None => problems.push(format!("--set {o:?}: expected section.key=value")),
            }
        }

        struct Reader<'a> {
            entries: &'a mut BTreeMap<String, (String, String)>,
            problems: &'a mut Vec<String>,
        }
        impl Visitor for Reader<'_> {
            fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T) {
                if let Some((raw, origin)) = self.entries.remove(key) {
                    match T::parse_value(&raw) {
                        Ok(v) => *value = v,
                        Err(e) => self.problems.push(format!("{key}: {e} ({origin})")),
                    }
                }
            }
        }

        let mut cfg = RunConfig::default();
        cfg.visit(&mut Reader {
            entries: &mut entries,
            problems: &mut problems,
        });
        for (k, (_, origin)) in &entries {
            problems.push(format!("{k}: unknown key ({origin})"));
        }
        problems.extend(cfg.range_problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with(&text, overrides)
    }

    /// Every key with its value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        struct Writer(String);
        impl Visitor for Writer {
            fn field<T: ConfigValue>(&mut self, key: &str, value: &mut T) {
                self.0.push_str(&format!("{key} = {}\n", value.format_value()));
            }
        }
        let mut w = Writer(String::new());
        self.clone().visit(&mut w);
        w.0
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.range_problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("\n")))
        }
    }

    fn range_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, key: &str, why: &str| {
            if !ok {
                p.push(format!("{key}: {why}"));
            }
        };
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let g = &self.grid;
        check(g.width >= 3, "grid.width", "must be at least 3");
        check(g.height >= 3, "grid.height", "must be at least 3");
        check(positive(g.cell_size_um), "grid.cell_size_um", "must be positive");
        let cells = g.width.saturating_mul(g.height);
        check(
            self.seeding.n_grains >= 1 && self.seeding.n_grains <= cells,
            "seeding.n_grains",
            "must be between 1 and the cell count",
        );
        check(positive(self.particles.radius_um), "particles.radius_um", "must be positive");
        let f = self.particles.volume_fraction;
        check((0.0..1.0).contains(&f), "particles.volume_fraction", "must be in [0, 1)");
        let e = &self.engine;
        check(e.c.is_finite() && e.c > 0.0, "engine.c", "must be positive");
        check(e.q.is_finite() && e.q >= 0.0, "engine.Q", "must be non-negative");
        check(positive(e.temperature_k), "engine.T", "must be positive");
        check(positive(e.j_energy), "engine.J_energy", "must be positive");
        if e.c.is_finite() && e.q.is_finite() && positive(e.temperature_k) {
            check(
                crate::engine::attempt_probability(&self.engine_params()).is_ok(),
                "engine.c",
                "c*exp(-Q/RT) must lie in (0, 1]",
            );
        }
        check(self.outputs.formats.iter().collect::<std::collections::BTreeSet<_>>().len()
            == self.outputs.formats.len(), "outputs.formats", "lists a format twice");
        check(positive(self.outputs.histogram_bin_um), "outputs.histogram_bin_um", "must be positive");
        check(!self.sweep.radii_um.is_empty(), "sweep.radii_um", "needs at least one radius");
        check(self.sweep.radii_um.iter().all(|&r| positive(r)), "sweep.radii_um", "radii must be positive");
        check(!self.sweep.fractions.is_empty(), "sweep.fractions", "needs at least one fraction");
        check(
            self.sweep.fractions.iter().all(|&f| f > 0.0 && f < 1.0),
            "sweep.fractions",
            "fractions must lie in (0, 1)",
        );
        check(self.sweep.seeds >= 1, "sweep.seeds", "must be at least 1");
        let c = &self.calibrate;
        check(c.seeds >= 1, "calibrate.seeds", "must be at least 1");
        check(positive(c.initial_cas_per_minute), "calibrate.initial_cas_per_minute", "must be positive");
        check(c.tolerance.is_finite() && c.tolerance >= 0.0, "calibrate.tolerance", "must be non-negative");
        check(c.max_iterations >= 1, "calibrate.max_iterations", "must be at least 1");
        check(c.overrun.is_finite() && c.overrun >= 0.0, "calibrate.overrun", "must be non-negative");
        p
    }

    pub fn micro(&self) -> Microstructure {
        Microstructure {
            width: self.grid.width,
            height: self.grid.height,
            cell_size: self.grid.cell_size_um,
            n_grains: self.seeding.n_grains,
        }
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            c: self.engine.c,
            q: self.engine.q,
            temperature: self.engine.temperature_k,
            j_energy: self.engine.j_energy,
            acceptance: self.engine.acceptance,
            rng_seed: self.engine.rng_seed,
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            micro: self.micro(),
            engine: self.engine_params(),
            mode: self.engine.sweep_mode,
            n_cas: self.schedule.n_cas,
            record_every: self.schedule.record_every,
            window: (self.sweep.window > 0).then_some(self.sweep.window),
            base_seed: self.sweep.base_seed,
            seeds: self.sweep.seeds,
        }
    }

    pub fn staged_settings(&self) -> StagedSettings {
        StagedSettings {
            micro: self.micro(),
            engine: self.engine_params(),
            mode: self.engine.sweep_mode,
            record_every: self.schedule.record_every,
            overrun: self.calibrate.overrun,
            base_seed: self.calibrate.base_seed,
            seeds: self.calibrate.seeds,
        }
    }
}
