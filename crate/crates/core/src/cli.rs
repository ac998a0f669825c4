//! Command-line front end. The binary only forwards to [`run`].

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{OutputFormat, RunConfig};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::metrics::{grain_stats, label_grains, write_histogram_csv};
use crate::pipeline::{evolve, initial_lattice, RunSeeds};
use crate::render::render;
use crate::seeding::ParticleSpec;
use crate::zener::{
    calibrate_staged, sweep, write_fit_csv, ExperimentalTable, SweepTable, ZenerFit,
};

#[derive(Debug, Parser)]
#[command(name = "grainca", version, about = "Grain growth with particle pinning on a cellular automaton")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seed, place particles and evolve one microstructure.
    Simulate(ConfigArgs),
    /// Limiting sizes over the radius x fraction grid, plus per-radius fits.
    Sweep(ConfigArgs),
    /// Fit d_lim / r = k / f^n to a sweep table.
    Fit {
        /// Sweep CSV to fit.
        input: PathBuf,
        /// Fit CSV to write; defaults to fit.csv beside the input.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit steps-per-minute against the measured holding-time series.
    Calibrate(ConfigArgs),
    /// Render a lattice text file as a PPM image.
    Render {
        lattice: PathBuf,
        output: PathBuf,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set schedule.n_cas=5000`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides),
            None => RunConfig::parse_with("", &self.overrides),
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        Error::Config(_) => 3,
        Error::Placement { .. } => 4,
        Error::Parse { .. } => 5,
        Error::Io { .. } => 6,
        Error::Fit(_) | Error::Calibration(_) => 7,
    }
}

/// Runs a parsed command, printing a summary to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a.load()?, out),
        Command::Sweep(a) => cmd_sweep(&a.load()?, out),
        Command::Fit { input, output } => {
            let output = output.unwrap_or_else(|| input.with_file_name("fit.csv"));
            cmd_fit(&input, &output, out)
        }
        Command::Calibrate(a) => cmd_calibrate(&a.load()?, out),
        Command::Render { lattice, output } => render(&Lattice::load(&lattice)?, &output),
        Command::Defaults => {
            write!(out, "{}", RunConfig::default().to_text()).map_err(stdout_err)
        }
    }
}

fn stdout_err(e: io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn thread_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.runtime.threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))
}

/// The expanded config, which reproduces the run when passed back with
/// `--config`, followed by commented run facts.
fn write_manifest(cfg: &RunConfig, extra: &[String], workers: usize) -> Result<()> {
    let path = cfg.outputs.directory.join("manifest.txt");
    write_file(&path, |w| {
        w.write_all(cfg.to_text().as_bytes())?;
        writeln!(w, "# workers = {workers}")?;
        for line in extra {
            writeln!(w, "# {line}")?;
        }
        Ok(())
    })
}

fn frame_name(cas: u64, n_cas: u64) -> String {
    let digits = n_cas.max(1).to_string().len();
    format!("cas_{cas:0digits$}.ppm")
}

pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.outputs.directory;
    prepare_dir(dir)?;
    let seeds = RunSeeds {
        voronoi: cfg.seeding.rng_seed,
        particles: cfg.particles.rng_seed,
        engine: cfg.engine.rng_seed,
    };
    write_manifest(
        cfg,
        &[format!(
            "seeds voronoi = {} particles = {} engine = {}",
            seeds.voronoi, seeds.particles, seeds.engine
        )],
        1,
    )?;

    let spec = (cfg.particles.volume_fraction > 0.0)
        .then(|| ParticleSpec::new(cfg.particles.radius_um, cfg.particles.volume_fraction))
        .transpose()?;
    let (lattice, placement) = initial_lattice(&cfg.micro(), spec.as_ref(), &seeds)?;

    let n_cas = cfg.schedule.n_cas;
    let every = cfg.outputs.image_every;
    let frames = dir.join("frames");
    let want_ppm = cfg.outputs.wants(OutputFormat::Ppm);
    if want_ppm {
        prepare_dir(&frames)?;
    }
    let mut frame_error = None;
    let (last, kinetics) = evolve(
        lattice,
        cfg.engine_params(),
        cfg.engine.sweep_mode,
        n_cas,
        cfg.schedule.record_every,
        |cas, lat| {
            let due = cas == n_cas || (every > 0 && cas % every == 0);
            if want_ppm && due && frame_error.is_none() {
                frame_error = render(lat, &frames.join(frame_name(cas, n_cas))).err();
            }
        },
    )?;
    if let Some(e) = frame_error {
        return Err(e);
    }

    let stats = grain_stats(&label_grains(&last), &last, cfg.outputs.histogram_bin_um)?;
    if cfg.outputs.wants(OutputFormat::Csv) {
        write_file(&dir.join("kinetics.csv"), |w| kinetics.write_csv(w))?;
        write_file(&dir.join("histogram.csv"), |w| write_histogram_csv(&stats, w))?;
    }
    if cfg.outputs.wants(OutputFormat::Lattice) {
        last.save(dir.join("final.lattice"))?;
    }

    let achieved = placement.map_or(0.0, |p| p.achieved_fraction);
    writeln!(
        out,
        "cas = {n_cas}\nmean_diameter_um = {}\ngrain_count = {}\nparticle_fraction = {achieved:.5}",
        stats.mean_diameter.map_or("NaN".into(), |d| format!("{d:.4}")),
        stats.grain_count,
    )
    .map_err(stdout_err)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.outputs.directory;
    prepare_dir(dir)?;
    let pool = thread_pool(cfg)?;
    let settings = cfg.sweep_settings();
    let seed_lines: Vec<String> = (0..settings.seeds as u64)
        .map(|i| {
            let s = RunSeeds::replicate(settings.base_seed, i);
            format!(
                "replicate {i} seeds voronoi = {} particles = {} engine = {}",
                s.voronoi, s.particles, s.engine
            )
        })
        .collect();
    write_manifest(cfg, &seed_lines, pool.current_num_threads())?;

    let table = pool.install(|| sweep(&cfg.sweep.radii_um, &cfg.sweep.fractions, &settings))?;
    write_file(&dir.join("sweep.csv"), |w| table.write_csv(w))?;
    if cfg.outputs.wants(OutputFormat::Csv) {
        let kin = dir.join("kinetics");
        prepare_dir(&kin)?;
        for run in &table.runs {
            if let Ok(r) = &run.outcome {
                let name = format!("r{}_f{}_s{}.csv", run.r_um, run.f, run.seed);
                write_file(&kin.join(name), |w| r.kinetics.write_csv(w))?;
            }
        }
    }
    let fits = report_fits(&table, out)?;
    write_file(&dir.join("fit.csv"), |w| write_fit_csv(&fits, w))?;

    let failures: Vec<String> = table
        .runs
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| format!("r = {} f = {} seed {}: {e}", r.r_um, r.f, r.seed))
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::usage(format!("{} sweep run(s) failed:\n{}", failures.len(), failures.join("\n"))))
    }
}

/// Prints one `r k n` line per successful fit and returns those fits.
fn report_fits(table: &SweepTable, out: &mut dyn Write) -> Result<Vec<ZenerFit>> {
    let mut fits = Vec::new();
    for (r, fit) in table.fits() {
        match fit {
            Ok(f) => {
                writeln!(out, "r = {r} um: k = {:.6} n = {:.6} rms = {:.6}", f.k, f.n, f.rms_log_residual)
                    .map_err(stdout_err)?;
                fits.push(f);
            }
            Err(e) => writeln!(out, "r = {r} um: {e}").map_err(stdout_err)?,
        }
    }
    Ok(fits)
}

pub fn cmd_fit(input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let table = SweepTable::read_csv(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", input.display()),
        },
        other => other,
    })?;
    let fits = report_fits(&table, out)?;
    write_file(output, |w| write_fit_csv(&fits, w))?;
    if fits.is_empty() {
        return Err(Error::Fit("no radius had enough data to fit".into()));
    }
    Ok(())
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.outputs.directory;
    prepare_dir(dir)?;
    let pool = thread_pool(cfg)?;
    let settings = cfg.staged_settings();
    let table = ExperimentalTable::default();
    let c = &cfg.calibrate;
    let result = pool.install(|| {
        calibrate_staged(&settings, &table, c.initial_cas_per_minute, c.tolerance, c.max_iterations)
    })?;

    let cal = &result.calibration;
    let mut extra: Vec<String> = (0..settings.seeds as u64)
        .map(|i| {
            let s = RunSeeds::replicate(settings.base_seed, i);
            format!("replicate {i} seeds voronoi = {} particles = {} engine = {}", s.voronoi, s.particles, s.engine)
        })
        .collect();
    extra.push(format!(
        "cas_per_minute iterations = {}",
        result.iterations.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    ));
    extra.push(format!("cas_per_minute = {:?}", cal.cas_per_minute));
    write_manifest(cfg, &extra, pool.current_num_threads())?;
    write_file(&dir.join("calibration.csv"), |w| cal.write_csv(w))?;
    write_file(&dir.join("kinetics.csv"), |w| result.series.write_csv(w))?;

    writeln!(
        out,
        "cas_per_minute = {:.3}\nanchor = {} min at {} um\nmax_rel_error = {:.4}",
        cal.cas_per_minute,
        cal.anchor.0,
        cal.anchor.1,
        cal.max_rel_error()
    )
    .map_err(stdout_err)
}
