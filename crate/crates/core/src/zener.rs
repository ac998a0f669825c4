//! Radius/fraction sweeps, Zener fits and time calibration.
//!
//! The limiting grain size follows `d_lim / r = k / f^n`. Fits are linear
//! least squares on `ln(d_lim / r) = ln k - n ln f`.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;

use crate::engine::{EngineParams, SweepMode};
use crate::error::{Error, Result};
use crate::metrics::{KineticsPoint, KineticsSeries};
use crate::pipeline::{evolve, initial_lattice, Microstructure, RunSeeds};
use crate::seeding::{dissolve_particles, place_particles, ParticleSpec};

pub const SWEEP_CSV_HEADER: &str = "r_um,f,seed,d_lim_um";
pub const FIT_CSV_HEADER: &str = "r_um,k,n,rms_log_residual";
pub const CALIBRATION_CSV_HEADER: &str = "time_min,sim_um,exp_um,rel_error";

/// Particle radii of the default sweep, um.
pub const DEFAULT_RADII_UM: [f64; 3] = [1.2, 2.0, 2.8];
/// Particle fractions of the default sweep.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.01, 0.025, 0.05, 0.10];
/// CAS budget of a sweep run.
pub const DEFAULT_SWEEP_CAS: u64 = 100_000;

/// One holding-time measurement. Missing values are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentalRow {
    pub holding_time_min: f64,
    pub gamma_radius_um: Option<f64>,
    pub gamma_fraction: Option<f64>,
    pub mean_grain_size_um: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentalTable {
    pub rows: Vec<ExperimentalRow>,
}

impl Default for ExperimentalTable {
    /// Solution treatment at 1433 K: primary gamma-prime radius and area
    /// fraction, and mean grain size, per holding time. The 45 min sample
    /// has no quoted values.
    fn default() -> Self {
        let row = |t, r, f, d| ExperimentalRow {
            holding_time_min: t,
            gamma_radius_um: Some(r),
            gamma_fraction: Some(f),
            mean_grain_size_um: Some(d),
        };
        ExperimentalTable {
            rows: vec![
                row(30.0, 1.4, 0.15, 7.6),
                ExperimentalRow {
                    holding_time_min: 45.0,
                    gamma_radius_um: None,
                    gamma_fraction: None,
                    mean_grain_size_um: None,
                },
                row(60.0, 1.1, 0.092, 11.2),
                row(75.0, 1.0, 0.052, 22.6),
                row(100.0, 0.85, 0.03, 31.0),
            ],
        }
    }
}

impl ExperimentalTable {
    /// `(time, size)` pairs with a measured grain size, by time.
    pub fn grain_sizes(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.mean_grain_size_um.map(|d| (r.holding_time_min, d)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Particle stages: the interval ending at each time with both radius
    /// and fraction measured uses that time's particles.
    pub fn stages(&self) -> Result<Vec<Stage>> {
        let mut v = Vec::new();
        for r in &self.rows {
            if let (Some(radius), Some(fraction)) = (r.gamma_radius_um, r.gamma_fraction) {
                v.push(Stage {
                    until_min: r.holding_time_min,
                    particles: ParticleSpec::new(radius, fraction)?,
                });
            }
        }
        v.sort_by(|a, b| a.until_min.total_cmp(&b.until_min));
        Ok(v)
    }
}

/// Mean of the final `window` mean diameters.
pub fn limiting_size(series: &KineticsSeries, window: usize) -> Result<f64> {
    if window == 0 || series.len() < window {
        return Err(Error::usage(format!(
            "limiting size needs 1 <= window <= series length, got window {window} for {} points",
            series.len()
        )));
    }
    let tail = &series.points[series.len() - window..];
    Ok(tail.iter().map(|p| p.mean_diameter).sum::<f64>() / window as f64)
}

/// Final tenth of the recorded points, at least one.
pub fn default_window(len: usize) -> usize {
    len.div_ceil(10).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenerFit {
    pub radius_um: f64,
    /// `(f, d_lim)` pairs the fit used.
    pub points: Vec<(f64, f64)>,
    pub k: f64,
    pub n: f64,
    /// RMS of `ln(d_lim / r) - (ln k - n ln f)`.
    pub rms_log_residual: f64,
}

impl ZenerFit {
    pub fn predict(&self, f: f64) -> f64 {
        self.radius_um * self.k / f.powf(self.n)
    }
}

pub fn fit_zener(points: &[(f64, f64)], radius_um: f64) -> Result<ZenerFit> {
    if !(radius_um.is_finite() && radius_um > 0.0) {
        return Err(Error::usage(format!("radius must be positive, got {radius_um}")));
    }
    for &(f, d) in points {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::usage(format!("volume fraction {f} is outside (0, 1)")));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::usage(format!("limiting size {d} must be positive")));
        }
    }
    let first = points.first().map(|p| p.0);
    if points.len() < 2 || points.iter().all(|p| Some(p.0) == first) {
        return Err(Error::Fit(format!(
            "need at least two distinct volume fractions, got {} point(s)",
            points.len()
        )));
    }

    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.1 / radius_um).ln()).collect();
    let m = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();

    Ok(ZenerFit {
        radius_um,
        points: points.to_vec(),
        k: intercept.exp(),
        n: -slope,
        rms_log_residual: (sse / m).sqrt(),
    })
}

/// Everything a sweep replicate needs besides `(r, f)` and its seed index.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub micro: Microstructure,
    pub engine: EngineParams,
    pub mode: SweepMode,
    pub n_cas: u64,
    pub record_every: u64,
    /// Plateau window in recorded points; `None` uses the final tenth.
    pub window: Option<usize>,
    pub base_seed: u64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub d_lim: f64,
    pub achieved_fraction: f64,
    pub kinetics: KineticsSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub r_um: f64,
    pub f: f64,
    /// Replicate index.
    pub seed: u64,
    /// Failures (e.g. placement) are kept per run; the sweep goes on.
    pub outcome: std::result::Result<ReplicateResult, String>,
}

/// Aggregate of one `(r, f)` cell over its replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub r_um: f64,
    pub f: f64,
    pub mean_d_lim: f64,
    /// Sample standard deviation; 0 for a single replicate.
    pub std_d_lim: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    /// Ordered by `(r, f, seed)` as given to [`sweep`].
    pub runs: Vec<SweepRun>,
}

pub fn run_replicate(
    settings: &SweepSettings,
    spec: &ParticleSpec,
    index: u64,
) -> Result<ReplicateResult> {
    let seeds = RunSeeds::replicate(settings.base_seed, index);
    let (lattice, placement) = initial_lattice(&settings.micro, Some(spec), &seeds)?;
    let params = EngineParams {
        rng_seed: seeds.engine,
        ..settings.engine
    };
    let (_, kinetics) = evolve(
        lattice,
        params,
        settings.mode,
        settings.n_cas,
        settings.record_every,
        |_, _| {},
    )?;
    let window = settings.window.unwrap_or_else(|| default_window(kinetics.len()));
    Ok(ReplicateResult {
        d_lim: limiting_size(&kinetics, window)?,
        achieved_fraction: placement.map_or(0.0, |p| p.achieved_fraction),
        kinetics,
    })
}

/// Runs every `(r, f, replicate)` combination. Runs execute in parallel;
/// the table order and contents do not depend on scheduling.
pub fn sweep(radii: &[f64], fractions: &[f64], settings: &SweepSettings) -> Result<SweepTable> {
    if radii.is_empty() || fractions.is_empty() {
        return Err(Error::usage("sweep needs at least one radius and one fraction"));
    }
    if settings.seeds == 0 {
        return Err(Error::usage("sweep needs at least one seed"));
    }
    let mut tasks = Vec::new();
    for &r in radii {
        for &f in fractions {
            ParticleSpec::new(r, f)?;
            for s in 0..settings.seeds as u64 {
                tasks.push((r, f, s));
            }
        }
    }
    let runs = tasks
        .par_iter()
        .map(|&(r, f, s)| {
            let spec = ParticleSpec::new(r, f).expect("validated above");
            SweepRun {
                r_um: r,
                f,
                seed: s,
                outcome: run_replicate(settings, &spec, s).map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepTable { runs })
}

impl SweepTable {
    /// Cells in first-appearance order.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut order: Vec<(u64, u64)> = Vec::new();
        let mut groups: BTreeMap<(u64, u64), Vec<&SweepRun>> = BTreeMap::new();
        for run in &self.runs {
            let key = (run.r_um.to_bits(), run.f.to_bits());
            if !groups.contains_key(&key) {
                order.push(key);
            }
            groups.entry(key).or_default().push(run);
        }
        order
            .into_iter()
            .map(|key| {
                let runs = &groups[&key];
                let ok: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.d_lim))
                    .collect();
                let (mean, std) = mean_std(&ok);
                SweepCell {
                    r_um: runs[0].r_um,
                    f: runs[0].f,
                    mean_d_lim: mean,
                    std_d_lim: std,
                    replicates: ok.len(),
                    failures: runs.len() - ok.len(),
                }
            })
            .collect()
    }

    /// One fit per radius over the cell means, in first-appearance order.
    pub fn fits(&self) -> Vec<(f64, Result<ZenerFit>)> {
        let mut by_radius: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
        for c in self.cells() {
            if c.replicates == 0 {
                continue;
            }
            match by_radius.iter_mut().find(|(r, _)| *r == c.r_um) {
                Some((_, pts)) => pts.push((c.f, c.mean_d_lim)),
                None => by_radius.push((c.r_um, vec![(c.f, c.mean_d_lim)])),
            }
        }
        by_radius
            .into_iter()
            .map(|(r, pts)| (r, fit_zener(&pts, r)))
            .collect()
    }

    /// Failed runs are written with `NaN` as their limiting size.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        for run in &self.runs {
            let d = run.outcome.as_ref().map_or(f64::NAN, |o| o.d_lim);
            writeln!(out, "{},{},{},{}", run.r_um, run.f, run.seed, d)?;
        }
        Ok(())
    }

    /// Reads a sweep CSV. Kinetics are not stored in the file, so runs carry
    /// empty series; `NaN` sizes become failed runs.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut runs = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, 1, e.to_string()))?;
            if lineno == 1 {
                if line.trim() != SWEEP_CSV_HEADER {
                    return Err(Error::parse(1, 1, format!("expected header {SWEEP_CSV_HEADER:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    lineno,
                    fields.len().min(4) + 1,
                    format!("expected 4 columns, got {}", fields.len()),
                ));
            }
            let num = |col: usize| -> Result<f64> {
                fields[col].trim().parse::<f64>().map_err(|_| {
                    Error::parse(lineno, col + 1, format!("bad number {:?}", fields[col]))
                })
            };
            let r_um = num(0)?;
            let f = num(1)?;
            let seed = fields[2]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::parse(lineno, 3, format!("bad seed {:?}", fields[2])))?;
            let d = num(3)?;
            let outcome = if d.is_nan() {
                Err("failed run".to_string())
            } else {
                Ok(ReplicateResult {
                    d_lim: d,
                    achieved_fraction: f,
                    kinetics: KineticsSeries::default(),
                })
            };
            runs.push(SweepRun { r_um, f, seed, outcome });
        }
        Ok(SweepTable { runs })
    }
}

pub fn write_fit_csv<W: Write>(fits: &[ZenerFit], mut out: W) -> io::Result<()> {
    writeln!(out, "{FIT_CSV_HEADER}")?;
    for fit in fits {
        writeln!(
            out,
            "{},{},{},{}",
            report_number(fit.radius_um),
            report_number(fit.k),
            report_number(fit.n),
            report_number(fit.rms_log_residual)
        )?;
    }
    Ok(())
}

/// Report formatting: 12 significant digits, always with a decimal point,
/// and magnitudes below 1e-12 shown as zero.
pub fn report_number(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x.abs() < 1e-12 {
        return "0.0".to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded:?}")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Particles present up to `until_min` minutes of holding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub until_min: f64,
    pub particles: ParticleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub time_min: f64,
    pub sim_um: f64,
    pub exp_um: f64,
    /// `|sim - exp| / exp`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeCalibration {
    pub cas_per_minute: f64,
    /// Measurement the calibrated curve matches most closely.
    pub anchor: (f64, f64),
    pub points: Vec<CalibrationPoint>,
}

impl TimeCalibration {
    pub fn max_rel_error(&self) -> f64 {
        self.points.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CALIBRATION_CSV_HEADER}")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                report_number(p.time_min),
                report_number(p.sim_um),
                report_number(p.exp_um),
                report_number(p.rel_error)
            )?;
        }
        Ok(())
    }
}

/// Mean diameter at (possibly fractional) step `cas`, linearly interpolated
/// between recorded points. `None` outside the recorded range.
pub fn interpolate_size(series: &KineticsSeries, cas: f64) -> Option<f64> {
    let pts = &series.points;
    let first = pts.first()?;
    let last = pts.last()?;
    if cas < first.cas as f64 || cas > last.cas as f64 {
        return None;
    }
    let hi = pts.partition_point(|p| (p.cas as f64) < cas);
    if hi == 0 {
        return Some(first.mean_diameter);
    }
    let (a, b) = (&pts[hi - 1], &pts[hi]);
    let t = (cas - a.cas as f64) / (b.cas - a.cas) as f64;
    Some(a.mean_diameter + t * (b.mean_diameter - a.mean_diameter))
}

/// Chooses the single steps-per-minute factor minimising the largest
/// relative error between simulated and measured mean sizes.
///
/// The search evaluates every factor at which the interpolated simulation
/// exactly meets a measurement, a log-spaced grid, and a golden-section
/// refinement around the best grid point.
pub fn calibrate_time(sim: &KineticsSeries, table: &ExperimentalTable) -> Result<TimeCalibration> {
    let targets = table.grain_sizes();
    if targets.is_empty() {
        return Err(Error::Calibration("no measured grain sizes".into()));
    }
    let (Some(first), Some(last)) = (sim.points.first(), sim.points.last()) else {
        return Err(Error::Calibration("empty simulation series".into()));
    };
    let t_min = targets[0].0;
    let t_max = targets[targets.len() - 1].0;
    if t_min <= 0.0 {
        return Err(Error::Calibration("holding times must be positive".into()));
    }
    // Factors for which every target time falls inside the recorded range.
    let lo = (first.cas as f64 / t_min).max(f64::MIN_POSITIVE);
    let hi = last.cas as f64 / t_max;
    if !(hi > 0.0 && hi >= lo) {
        return Err(Error::Calibration(format!(
            "simulated range {}..{} CAS cannot cover {t_min}..{t_max} min",
            first.cas, last.cas
        )));
    }
    let lo = if lo > 0.0 && first.cas > 0 { lo } else { hi * 1e-6 };

    let objective = |cpm: f64| -> f64 {
        targets
            .iter()
            .map(|&(t, d)| match interpolate_size(sim, t * cpm) {
                Some(s) => (s - d).abs() / d,
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    };

    let mut candidates = vec![lo, hi];
    for &(t, d) in &targets {
        for w in sim.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (da, db) = (a.mean_diameter - d, b.mean_diameter - d);
            if da == 0.0 {
                candidates.push(a.cas as f64 / t);
            } else if da * db < 0.0 {
                let c = a.cas as f64 + (b.cas - a.cas) as f64 * da / (da - db);
                candidates.push(c / t);
            }
        }
        if let Some(l) = sim.points.last() {
            if l.mean_diameter == d {
                candidates.push(l.cas as f64 / t);
            }
        }
    }
    const GRID: usize = 2000;
    let (llo, lhi) = (lo.ln(), hi.ln());
    for i in 0..=GRID {
        candidates.push((llo + (lhi - llo) * i as f64 / GRID as f64).exp());
    }
    candidates.retain(|c| *c >= lo && *c <= hi);

    let mut best = (f64::INFINITY, hi);
    for &c in &candidates {
        let v = objective(c);
        if v < best.0 {
            best = (v, c);
        }
    }
    // Golden-section polish in log space around the winner.
    let step = (lhi - llo) / GRID as f64;
    let (mut a, mut b) = ((best.1.ln() - step).max(llo), (best.1.ln() + step).min(lhi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if objective(x1.exp()) <= objective(x2.exp()) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let polished = (0.5 * (a + b)).exp();
    if objective(polished) < best.0 {
        best = (objective(polished), polished);
    }

    let cpm = best.1;
    let points: Vec<CalibrationPoint> = targets
        .iter()
        .map(|&(t, d)| {
            let s = interpolate_size(sim, t * cpm).expect("factor keeps targets in range");
            CalibrationPoint {
                time_min: t,
                sim_um: s,
                exp_um: d,
                rel_error: (s - d).abs() / d,
            }
        })
        .collect();
    let anchor = points
        .iter()
        .min_by(|x, y| x.rel_error.total_cmp(&y.rel_error))
        .map(|p| (p.time_min, p.exp_um))
        .expect("at least one target");
    Ok(TimeCalibration {
        cas_per_minute: cpm,
        anchor,
        points,
    })
}

/// Settings for holding-time-matched runs whose particles change at the
/// measured times.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedSettings {
    pub micro: Microstructure,
    pub engine: EngineParams,
    pub mode: SweepMode,
    pub record_every: u64,
    /// Simulated span beyond the last stage, as a fraction of its end time.
    pub overrun: f64,
    pub base_seed: u64,
    pub seeds: usize,
}

/// One replicate of a staged run at `cas_per_minute`.
///
/// Stage `i` covers `(t[i-1], t[i]]` minutes with that stage's particles;
/// at each boundary the old particles dissolve into their neighbouring
/// grains and a fresh population is placed. The final stage's particles
/// stay for the overrun. The state is recorded at every stage end, before
/// particles are exchanged.
pub fn staged_run(
    settings: &StagedSettings,
    stages: &[Stage],
    cas_per_minute: f64,
    index: u64,
) -> Result<KineticsSeries> {
    if stages.is_empty() {
        return Err(Error::usage("staged run needs at least one stage"));
    }
    if !(cas_per_minute.is_finite() && cas_per_minute > 0.0) {
        return Err(Error::usage(format!(
            "steps per minute must be positive, got {cas_per_minute}"
        )));
    }
    let seeds = RunSeeds::replicate(settings.base_seed, index);
    let (mut lattice, _) = initial_lattice(&settings.micro, None, &seeds)?;
    let t_end = stages[stages.len() - 1].until_min * (1.0 + settings.overrun.max(0.0));
    let mut boundaries: Vec<u64> = stages
        .iter()
        .map(|s| (s.until_min * cas_per_minute).round() as u64)
        .collect();
    *boundaries.last_mut().expect("non-empty") = (t_end * cas_per_minute).round() as u64;

    let mut series = KineticsSeries::default();
    let mut cas = 0u64;
    for (i, (stage, &end)) in stages.iter().zip(&boundaries).enumerate() {
        if i > 0 {
            lattice = dissolve_particles(lattice);
        }
        let particle_seed = crate::rng::derive_seed(seeds.particles, i as u64);
        lattice = place_particles(lattice, &stage.particles, particle_seed)?.0;
        let span = end.saturating_sub(cas);
        let params = EngineParams {
            rng_seed: crate::rng::derive_seed(seeds.engine, i as u64),
            ..settings.engine
        };
        let offset = cas;
        let (next, part) = evolve(lattice, params, settings.mode, span, settings.record_every, |_, _| {})?;
        lattice = next;
        for p in part.points {
            let shifted = KineticsPoint {
                cas: p.cas + offset,
                ..p
            };
            if series.points.last().is_some_and(|l| l.cas >= shifted.cas) {
                continue;
            }
            series.push(shifted)?;
        }
        cas = end.max(cas);
    }
    Ok(series)
}

/// Pointwise mean of series that share one record schedule.
pub fn mean_series(all: &[KineticsSeries]) -> Result<KineticsSeries> {
    let Some(first) = all.first() else {
        return Err(Error::usage("no series to average"));
    };
    let mut out = KineticsSeries::default();
    for (i, p) in first.points.iter().enumerate() {
        let mut sum_d = 0.0;
        let mut sum_n = 0usize;
        for s in all {
            let q = s.points.get(i).filter(|q| q.cas == p.cas).ok_or_else(|| {
                Error::usage("series do not share a record schedule")
            })?;
            sum_d += q.mean_diameter;
            sum_n += q.grain_count;
        }
        out.push(KineticsPoint {
            cas: p.cas,
            mean_diameter: sum_d / all.len() as f64,
            grain_count: (sum_n as f64 / all.len() as f64).round() as usize,
        })?;
    }
    Ok(out)
}

/// Result of the self-consistent staged calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedCalibration {
    pub calibration: TimeCalibration,
    /// Replicate-averaged kinetics of the final iteration.
    pub series: KineticsSeries,
    /// Steps per minute used to place the stage boundaries, per iteration.
    pub iterations: Vec<f64>,
}

/// Calibrates steps-per-minute against `table` with staged particles.
///
/// Stage boundaries depend on the factor being fitted, so the staged runs
/// are repeated with the newly fitted factor until it moves by less than
/// `tolerance` (relative) or `max_iterations` is reached.
pub fn calibrate_staged(
    settings: &StagedSettings,
    table: &ExperimentalTable,
    initial_cas_per_minute: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<StagedCalibration> {
    if settings.seeds == 0 {
        return Err(Error::usage("calibration needs at least one seed"));
    }
    let stages = table.stages()?;
    let mut cpm = initial_cas_per_minute;
    let mut iterations = Vec::new();
    loop {
        iterations.push(cpm);
        let runs: Vec<KineticsSeries> = (0..settings.seeds as u64)
            .into_par_iter()
            .map(|s| staged_run(settings, &stages, cpm, s))
            .collect::<Result<_>>()?;
        let series = mean_series(&runs)?;
        let calibration = calibrate_time(&series, table)?;
        let next = calibration.cas_per_minute;
        let converged = ((next - cpm) / cpm).abs() <= tolerance;
        if converged || iterations.len() >= max_iterations.max(1) {
            return Ok(StagedCalibration {
                calibration,
                series,
                iterations,
            });
        }
        cpm = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: &[(u64, f64)]) -> KineticsSeries {
        let mut s = KineticsSeries::default();
        for &(cas, d) in points {
            s.push(KineticsPoint { cas, mean_diameter: d, grain_count: 1 }).unwrap();
        }
        s
    }

    #[test]
    fn embedded_measurements() {
        let t = ExperimentalTable::default();
        assert_eq!(t.rows.len(), 5);
        assert_eq!(
            t.grain_sizes(),
            vec![(30.0, 7.6), (60.0, 11.2), (75.0, 22.6), (100.0, 31.0)]
        );
        let r45 = t.rows.iter().find(|r| r.holding_time_min == 45.0).unwrap();
        assert!(r45.gamma_radius_um.is_none() && r45.mean_grain_size_um.is_none());
        let stages = t.stages().unwrap();
        assert_eq!(stages.len(), 4);
        assert_eq!(stages[0].particles, ParticleSpec::new(1.4, 0.15).unwrap());
        assert_eq!(stages[3].particles, ParticleSpec::new(0.85, 0.03).unwrap());
    }

    #[test]
    fn limiting_size_cases() {
        assert_eq!(limiting_size(&series(&[(0, 4.0), (1, 4.0), (2, 4.0)]), 2).unwrap(), 4.0);
        assert_eq!(limiting_size(&series(&[(0, 1.0), (1, 2.0), (2, 3.0)]), 1).unwrap(), 3.0);
        let s = series(&[(0, 5.0), (1, 10.0), (2, 10.2), (3, 9.8)]);
        assert!((limiting_size(&s, 3).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(limiting_size(&s, 5), Err(Error::Usage(_))));
        assert!(matches!(limiting_size(&s, 0), Err(Error::Usage(_))));
        assert_eq!(default_window(101), 11);
        assert_eq!(default_window(3), 1);
    }

    #[test]
    fn fit_recovers_power_law() {
        let (k, n, r) = (2.0, 0.5, 1.2);
        let pts: Vec<(f64, f64)> = [0.01, 0.025, 0.05, 0.1]
            .iter()
            .map(|&f| (f, r * k / f64::powf(f, n)))
            .collect();
        let fit = fit_zener(&pts, r).unwrap();
        assert!((fit.k - k).abs() < 1e-9);
        assert!((fit.n - n).abs() < 1e-9);
        assert!(fit.rms_log_residual < 1e-12);
        assert!((fit.predict(0.04) - r * k / 0.04f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let fit = fit_zener(&[(0.02, 9.0), (0.08, 5.0)], 2.0).unwrap();
        assert!(fit.rms_log_residual < 1e-12);
        assert!((fit.predict(0.02) - 9.0).abs() < 1e-9);
        assert!((fit.predict(0.08) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn log_residuals_are_orthogonal() {
        let pts = [(0.01, 20.0), (0.025, 12.0), (0.05, 9.5), (0.1, 6.0)];
        let fit = fit_zener(&pts, 1.2).unwrap();
        let res: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(f, d)| (f.ln(), (d / 1.2).ln() - fit.k.ln() + fit.n * f.ln()))
            .collect();
        assert!(res.iter().map(|r| r.1).sum::<f64>().abs() < 1e-12);
        assert!(res.iter().map(|r| r.0 * r.1).sum::<f64>().abs() < 1e-12);
        assert!(fit.rms_log_residual > 0.0);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_zener(&[(0.05, 3.0)], 1.0), Err(Error::Fit(_))));
        assert!(matches!(fit_zener(&[(0.05, 3.0), (0.05, 4.0)], 1.0), Err(Error::Fit(_))));
        assert!(matches!(fit_zener(&[(0.0, 3.0), (0.05, 4.0)], 1.0), Err(Error::Usage(_))));
        assert!(matches!(fit_zener(&[(0.01, -3.0), (0.05, 4.0)], 1.0), Err(Error::Usage(_))));
        assert!(matches!(fit_zener(&[(0.01, 3.0), (0.05, 4.0)], 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn report_numbers() {
        assert_eq!(report_number(2.0000000000000004), "2.0");
        assert_eq!(report_number(0.49999999999999994), "0.5");
        assert_eq!(report_number(3e-17), "0.0");
        assert_eq!(report_number(1.2), "1.2");
        assert_eq!(report_number(0.123456789012345), "0.123456789012");
    }

    #[test]
    fn calibration_recovers_constructed_scale() {
        let s = series(&[(0, 5.0), (30_000, 7.6), (60_000, 11.2), (75_000, 22.6), (100_000, 31.0)]);
        let cal = calibrate_time(&s, &ExperimentalTable::default()).unwrap();
        assert!((cal.cas_per_minute - 1000.0).abs() < 1e-9);
        assert!(cal.max_rel_error() < 1e-12);
        assert_eq!(cal.points.len(), 4);
    }

    #[test]
    fn calibration_interpolates_between_records() {
        let s = series(&[(0, 0.0), (10, 10.0), (20, 30.0)]);
        assert_eq!(interpolate_size(&s, 5.0), Some(5.0));
        assert_eq!(interpolate_size(&s, 15.0), Some(20.0));
        assert_eq!(interpolate_size(&s, 20.0), Some(30.0));
        assert_eq!(interpolate_size(&s, 21.0), None);
        let table = ExperimentalTable {
            rows: vec![ExperimentalRow {
                holding_time_min: 10.0,
                gamma_radius_um: None,
                gamma_fraction: None,
                mean_grain_size_um: Some(20.0),
            }],
        };
        let cal = calibrate_time(&s, &table).unwrap();
        assert!((cal.cas_per_minute - 1.5).abs() < 1e-9);
        assert_eq!(cal.anchor, (10.0, 20.0));
    }

    #[test]
    fn calibration_needs_overlap() {
        let s = series(&[(0, 5.0)]);
        assert!(matches!(
            calibrate_time(&s, &ExperimentalTable::default()),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            calibrate_time(&KineticsSeries::default(), &ExperimentalTable::default()),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn sweep_csv_round_trip_and_errors() {
        let csv = "r_um,f,seed,d_lim_um\n1.2,0.01,0,20.5\n1.2,0.05,0,NaN\n";
        let t = SweepTable::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.runs.len(), 2);
        assert!(t.runs[1].outcome.is_err());
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);

        let bad = "r_um,f,seed,d_lim_um\n1.2,0.01,0,20.5\n1.2,zero,0,3\n";
        match SweepTable::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SweepTable::read_csv("r,f\n".as_bytes()).is_err());
        assert!(SweepTable::read_csv("r_um,f,seed,d_lim_um\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn cells_and_fits_from_table() {
        let csv = "r_um,f,seed,d_lim_um\n\
                   1.2,0.01,0,20\n1.2,0.01,1,22\n1.2,0.1,0,6\n1.2,0.1,1,6\n\
                   2.8,0.01,0,40\n2.8,0.1,0,NaN\n";
        let t = SweepTable::read_csv(csv.as_bytes()).unwrap();
        let cells = t.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].mean_d_lim, 21.0);
        assert!((cells[0].std_d_lim - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!((cells[3].replicates, cells[3].failures), (0, 1));
        let fits = t.fits();
        assert_eq!(fits.len(), 2);
        let n = fits[0].1.as_ref().unwrap().n;
        assert!((n - (21.0f64 / 6.0).ln() / 10f64.ln()).abs() < 1e-12);
        assert!(matches!(fits[1].1, Err(Error::Fit(_))));
    }
}
