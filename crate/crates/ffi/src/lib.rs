//! C ABI over the grainca simulator.
//!
//! Lattices and engines are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`GcaStatus`]; on failure the
//! message is available from [`gca_last_error`] on the same thread until
//! the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use grainca::engine::{AcceptanceRule, Engine, EngineParams, SweepMode};
use grainca::lattice::{CellState, Lattice};
use grainca::metrics::{grain_stats, label_grains, DEFAULT_BIN_WIDTH_UM};
use grainca::seeding::{place_particles, voronoi_init, ParticleSpec, SeedConfig};
use grainca::zener::fit_zener;
use grainca::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcaStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Config = 3,
    Placement = 4,
    Parse = 5,
    Io = 6,
    Fit = 7,
    Calibration = 8,
    Panic = 9,
}

/// Opaque lattice handle.
pub struct GcaLattice(Lattice);

/// Opaque engine handle. Owns its lattice.
pub struct GcaEngine(Engine);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GcaEngineParams {
    pub c: f64,
    /// J/mol.
    pub q: f64,
    /// K.
    pub temperature: f64,
    pub j_energy: f64,
    /// Nonzero accepts only strictly negative energy changes.
    pub strict: i32,
    /// Nonzero sweeps every grain cell instead of the mobile set.
    pub full_sweep: i32,
    pub rng_seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GcaStepReport {
    pub cas: u64,
    pub attempts: u64,
    pub accepted: u64,
    pub boundary_cells: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GcaGrainStats {
    pub grain_count: u64,
    /// Number-averaged equivalent diameter, um; NaN without grains.
    pub mean_diameter_um: f64,
    pub particle_fraction: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GcaZenerFit {
    pub k: f64,
    pub n: f64,
    pub rms_log_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GcaStatus {
    match e {
        Error::Usage(_) => GcaStatus::Usage,
        Error::Config(_) => GcaStatus::Config,
        Error::Placement { .. } => GcaStatus::Placement,
        Error::Parse { .. } => GcaStatus::Parse,
        Error::Io { .. } => GcaStatus::Io,
        Error::Fit(_) => GcaStatus::Fit,
        Error::Calibration(_) => GcaStatus::Calibration,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GcaStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GcaStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GcaStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn gca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Defaults: c = 1, P1 = 0.5 at 1433 K, J = 1, non-strict, mobile-set sweep.
#[no_mangle]
pub extern "C" fn gca_engine_params_default() -> GcaEngineParams {
    let p = EngineParams::default();
    GcaEngineParams {
        c: p.c,
        q: p.q,
        temperature: p.temperature,
        j_energy: p.j_energy,
        strict: 0,
        full_sweep: 0,
        rng_seed: p.rng_seed,
    }
}

/// Uniform lattice of one orientation (0 fills with particles).
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_new(
    width: usize,
    height: usize,
    cell_size_um: f64,
    orientation: u32,
    out: *mut *mut GcaLattice,
) -> GcaStatus {
    guard(|| {
        let fill = if orientation == 0 {
            CellState::Particle
        } else {
            CellState::Grain(orientation)
        };
        put(out, GcaLattice(Lattice::filled(width, height, cell_size_um, fill)?))
    })
}

/// Periodic Voronoi polycrystal with `n_grains` orientations.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_voronoi(
    width: usize,
    height: usize,
    cell_size_um: f64,
    n_grains: usize,
    rng_seed: u64,
    out: *mut *mut GcaLattice,
) -> GcaStatus {
    guard(|| {
        let lat = voronoi_init(&SeedConfig {
            width,
            height,
            cell_size: cell_size_um,
            n_grains,
            rng_seed,
        })?;
        put(out, GcaLattice(lat))
    })
}

/// Reads a lattice text file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_load(path: *const c_char, out: *mut *mut GcaLattice) -> GcaStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path).to_string_lossy().into_owned();
        put(out, GcaLattice(Lattice::load(p)?))
    })
}

/// # Safety
/// `lat` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_save(lat: *const GcaLattice, path: *const c_char) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let p = CStr::from_ptr(path).to_string_lossy().into_owned();
        lat.0.save(p)?;
        Ok(())
    })
}

/// Places non-overlapping disk particles in place.
///
/// # Safety
/// `lat` must be a live handle; `achieved` may be null.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_place_particles(
    lat: *mut GcaLattice,
    radius_um: f64,
    volume_fraction: f64,
    rng_seed: u64,
    achieved: *mut f64,
) -> GcaStatus {
    guard(|| {
        let lat = get_mut(lat, "lattice")?;
        let spec = ParticleSpec::new(radius_um, volume_fraction)?;
        let (next, placement) = place_particles(lat.0.clone(), &spec, rng_seed)?;
        lat.0 = next;
        if let Some(a) = achieved.as_mut() {
            *a = placement.achieved_fraction;
        }
        Ok(())
    })
}

/// # Safety
/// `lat` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_clone(lat: *const GcaLattice, out: *mut *mut GcaLattice) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        put(out, GcaLattice(lat.0.clone()))
    })
}

/// # Safety
/// `lat` must be a handle from this library, or null; it is invalid after.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_free(lat: *mut GcaLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// # Safety
/// `lat` must be a live handle; `width`/`height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_dims(
    lat: *const GcaLattice,
    width: *mut usize,
    height: *mut usize,
) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        *get_mut(width, "width")? = lat.0.width();
        *get_mut(height, "height")? = lat.0.height();
        Ok(())
    })
}

/// Raw cell value at row-major `index`: 0 is a particle, otherwise the
/// orientation.
///
/// # Safety
/// `lat` must be a live handle; `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_get(lat: *const GcaLattice, index: usize, value: *mut u32) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        if index >= lat.0.len() {
            return Err(Fail::Core(Error::Usage(format!("index {index} out of range"))));
        }
        *get_mut(value, "value")? = lat.0.raw()[index];
        Ok(())
    })
}

/// Sets a cell; 0 makes it a particle.
///
/// # Safety
/// `lat` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_set(lat: *mut GcaLattice, index: usize, value: u32) -> GcaStatus {
    guard(|| {
        let lat = get_mut(lat, "lattice")?;
        let state = if value == 0 {
            CellState::Particle
        } else {
            CellState::Grain(value)
        };
        lat.0.set(index, state)?;
        Ok(())
    })
}

/// Copies all cells row-major into `buf`, which must hold `len` values.
///
/// # Safety
/// `lat` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_copy_cells(lat: *const GcaLattice, buf: *mut u32, len: usize) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let raw = lat.0.raw();
        if len != raw.len() {
            return Err(Fail::Core(Error::Usage(format!(
                "buffer holds {len} cells, lattice has {}",
                raw.len()
            ))));
        }
        ptr::copy_nonoverlapping(raw.as_ptr(), buf, len);
        Ok(())
    })
}

/// Energy of grain cell `core` if it held `orientation`.
///
/// # Safety
/// `lat` must be a live handle; `energy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_cell_energy(
    lat: *const GcaLattice,
    core: usize,
    orientation: u32,
    j_energy: f64,
    energy: *mut f64,
) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        *get_mut(energy, "energy")? = grainca::engine::cell_energy(&lat.0, core, orientation, j_energy)?;
        Ok(())
    })
}

/// Energy change if grain cell `core` switched to `trial`.
///
/// # Safety
/// `lat` must be a live handle; `delta` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_delta_energy(
    lat: *const GcaLattice,
    core: usize,
    trial: u32,
    j_energy: f64,
    delta: *mut f64,
) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        *get_mut(delta, "delta")? = grainca::engine::delta_energy(&lat.0, core, trial, j_energy)?;
        Ok(())
    })
}

/// Whether particle cell `particle` pins when `core` holds `trial`.
/// Writes 1 or 0.
///
/// # Safety
/// `lat` must be a live handle; `pinned` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_pins(
    lat: *const GcaLattice,
    particle: usize,
    core: usize,
    trial: u32,
    pinned: *mut i32,
) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        *get_mut(pinned, "pinned")? = i32::from(grainca::engine::pins(&lat.0, particle, core, trial)?);
        Ok(())
    })
}

/// Grain count, mean equivalent diameter and particle fraction.
///
/// # Safety
/// `lat` must be a live handle; `stats` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_lattice_stats(lat: *const GcaLattice, stats: *mut GcaGrainStats) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        let s = grain_stats(&label_grains(&lat.0), &lat.0, DEFAULT_BIN_WIDTH_UM)?;
        *get_mut(stats, "stats")? = GcaGrainStats {
            grain_count: s.grain_count as u64,
            mean_diameter_um: s.mean_diameter.unwrap_or(f64::NAN),
            particle_fraction: lat.0.particle_fraction(),
        };
        Ok(())
    })
}

/// Builds an engine over a copy of `lat`.
///
/// # Safety
/// `lat` and `params` must be valid; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_engine_new(
    lat: *const GcaLattice,
    params: *const GcaEngineParams,
    out: *mut *mut GcaEngine,
) -> GcaStatus {
    guard(|| {
        let lat = get(lat, "lattice")?;
        let p = get(params, "params")?;
        let engine_params = EngineParams {
            c: p.c,
            q: p.q,
            temperature: p.temperature,
            j_energy: p.j_energy,
            acceptance: if p.strict != 0 {
                AcceptanceRule::Strict
            } else {
                AcceptanceRule::NonIncreasing
            },
            rng_seed: p.rng_seed,
        };
        let mode = if p.full_sweep != 0 {
            SweepMode::Full
        } else {
            SweepMode::ActiveSet
        };
        put(out, GcaEngine(Engine::with_mode(lat.0.clone(), engine_params, mode)?))
    })
}

/// Advances `n_cas` steps; `report` (may be null) receives the last one.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gca_engine_step(
    engine: *mut GcaEngine,
    n_cas: u64,
    report: *mut GcaStepReport,
) -> GcaStatus {
    guard(|| {
        let engine = get_mut(engine, "engine")?;
        let mut last = GcaStepReport {
            cas: engine.0.cas(),
            ..Default::default()
        };
        for _ in 0..n_cas {
            let r = engine.0.step();
            last = GcaStepReport {
                cas: r.cas,
                attempts: r.attempts,
                accepted: r.accepted,
                boundary_cells: r.boundary_cells,
            };
        }
        if let Some(out) = report.as_mut() {
            *out = last;
        }
        Ok(())
    })
}

/// Copies the engine's current lattice into a new handle.
///
/// # Safety
/// `engine` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gca_engine_lattice(engine: *const GcaEngine, out: *mut *mut GcaLattice) -> GcaStatus {
    guard(|| {
        let engine = get(engine, "engine")?;
        put(out, GcaLattice(engine.0.lattice().clone()))
    })
}

/// # Safety
/// `engine` must be a handle from this library, or null.
#[no_mangle]
pub unsafe extern "C" fn gca_engine_free(engine: *mut GcaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Fits `d_lim / r = k / f^n` to `len` pairs.
///
/// # Safety
/// `fractions` and `sizes` must be valid for `len` reads; `fit` writable.
#[no_mangle]
pub unsafe extern "C" fn gca_fit_zener(
    fractions: *const f64,
    sizes_um: *const f64,
    len: usize,
    radius_um: f64,
    fit: *mut GcaZenerFit,
) -> GcaStatus {
    guard(|| {
        if fractions.is_null() || sizes_um.is_null() {
            return Err(Fail::Null("data"));
        }
        let f = std::slice::from_raw_parts(fractions, len);
        let d = std::slice::from_raw_parts(sizes_um, len);
        let pts: Vec<(f64, f64)> = f.iter().copied().zip(d.iter().copied()).collect();
        let z = fit_zener(&pts, radius_um)?;
        *get_mut(fit, "fit")? = GcaZenerFit {
            k: z.k,
            n: z.n,
            rms_log_residual: z.rms_log_residual,
        };
        Ok(())
    })
}
