//! Cellular-automaton update rule.
//!
//! A boundary cell attempts a reorientation with the thermally activated
//! probability `P1 = c * exp(-Q / (R T))`. An attempt copies the orientation
//! of one uniformly chosen Moore neighbour and is accepted according to the
//! lowest-energy principle on the cell's boundary energy
//!
//! ```text
//! E_i = J * sum_k (1 - delta(C_i, C_k)) * (1 - f(k))
//! ```
//!
//! where `f(k) = 1` for a particle neighbour that pins a boundary (see
//! [`pins`]) and `0` otherwise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Orientation, PARTICLE};
use crate::rng::{self, SimRng};

/// Molar gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314;
/// Solution-treatment temperature, K.
pub const DEFAULT_TEMPERATURE_K: f64 = 1433.0;
/// Attempt probability the default `Q` produces at the default temperature.
pub const DEFAULT_ATTEMPT_PROBABILITY: f64 = 0.5;

/// When a proposal with energy change `dE` is adopted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptanceRule {
    /// `dE < 0` only. Straight boundaries of any orientation are stable
    /// under this rule, so a polygonal microstructure stops evolving after a
    /// few steps.
    Strict,
    /// `dE <= 0`: energy-neutral moves let boundaries wander, so curvature
    /// can drive coarsening.
    #[default]
    NonIncreasing,
}

impl AcceptanceRule {
    #[inline]
    pub fn accepts(self, delta: i32) -> bool {
        match self {
            AcceptanceRule::Strict => delta < 0,
            AcceptanceRule::NonIncreasing => delta <= 0,
        }
    }
}

impl fmt::Display for AcceptanceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcceptanceRule::Strict => "strict",
            AcceptanceRule::NonIncreasing => "non-increasing",
        })
    }
}

impl FromStr for AcceptanceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(AcceptanceRule::Strict),
            "non-increasing" => Ok(AcceptanceRule::NonIncreasing),
            other => Err(Error::config(format!(
                "unknown acceptance rule {other:?} (expected strict or non-increasing)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    /// Attempt prefactor `c`.
    pub c: f64,
    /// Boundary migration energy `Q`, J/mol.
    pub q: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Boundary energy unit `J`.
    pub j_energy: f64,
    pub acceptance: AcceptanceRule,
    pub rng_seed: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            c: 1.0,
            q: activation_energy_for(DEFAULT_ATTEMPT_PROBABILITY, 1.0, DEFAULT_TEMPERATURE_K),
            temperature: DEFAULT_TEMPERATURE_K,
            j_energy: 1.0,
            acceptance: AcceptanceRule::default(),
            rng_seed: 0,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::config(format!("Q must be non-negative, got {}", self.q)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::config(format!("c must be positive, got {}", self.c)));
        }
        if !(self.j_energy.is_finite() && self.j_energy > 0.0) {
            return Err(Error::config(format!(
                "J must be positive, got {}",
                self.j_energy
            )));
        }
        attempt_probability(self).map(|_| ())
    }
}

/// `Q` that yields attempt probability `p1` for prefactor `c` at `temperature`.
pub fn activation_energy_for(p1: f64, c: f64, temperature: f64) -> f64 {
    GAS_CONSTANT * temperature * (c / p1).ln()
}

/// `P1 = c * exp(-Q / (R T))`; must lie in `(0, 1]`.
pub fn attempt_probability(p: &EngineParams) -> Result<f64> {
    let p1 = p.c * (-p.q / (GAS_CONSTANT * p.temperature)).exp();
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(Error::config(format!(
            "attempt probability c*exp(-Q/RT) = {p1} is outside (0, 1]"
        )));
    }
    Ok(p1)
}

/// Whether the particle at `particle_idx` sits on a grain boundary once the
/// core cell holds `trial`: its Moore neighbourhood, with the core's state
/// substituted, contains at least two distinct grain orientations.
pub fn pins(lat: &Lattice, particle_idx: usize, core_idx: usize, trial: Orientation) -> Result<bool> {
    lat.check_index(particle_idx)?;
    lat.check_index(core_idx)?;
    if lat.raw_at(particle_idx) != PARTICLE {
        return Err(Error::usage(format!("cell {particle_idx} is not a particle")));
    }
    if lat.raw_at(core_idx) == PARTICLE {
        return Err(Error::usage(format!("core cell {core_idx} is a particle")));
    }
    check_orientation(trial)?;
    Ok(pins_raw(lat, particle_idx, core_idx, trial))
}

/// Boundary energy of the core cell as if it held `orientation`.
pub fn cell_energy(lat: &Lattice, core_idx: usize, orientation: Orientation, j_energy: f64) -> Result<f64> {
    check_core(lat, core_idx)?;
    check_orientation(orientation)?;
    Ok(j_energy * f64::from(energy_count(lat, core_idx, orientation)))
}

/// `E(trial) - E(current)` for the core cell.
pub fn delta_energy(lat: &Lattice, core_idx: usize, trial: Orientation, j_energy: f64) -> Result<f64> {
    check_core(lat, core_idx)?;
    check_orientation(trial)?;
    if lat.raw_at(core_idx) == trial {
        return Err(Error::usage(format!(
            "trial orientation {trial} equals the current orientation of cell {core_idx}"
        )));
    }
    Ok(j_energy * f64::from(delta_count(lat, core_idx, trial)))
}

fn check_core(lat: &Lattice, core_idx: usize) -> Result<()> {
    lat.check_index(core_idx)?;
    if lat.raw_at(core_idx) == PARTICLE {
        return Err(Error::usage(format!("core cell {core_idx} is a particle")));
    }
    Ok(())
}

fn check_orientation(o: Orientation) -> Result<()> {
    if o == PARTICLE {
        return Err(Error::usage("orientation ID 0 is reserved"));
    }
    Ok(())
}

#[inline]
pub(crate) fn pins_raw(lat: &Lattice, particle_idx: usize, core_idx: usize, trial: u32) -> bool {
    let mut seen = PARTICLE;
    for k in lat.neighbor_indices(particle_idx) {
        let s = if k == core_idx { trial } else { lat.raw_at(k) };
        if s == PARTICLE {
            continue;
        }
        if seen == PARTICLE {
            seen = s;
        } else if s != seen {
            return true;
        }
    }
    false
}

/// Energy in units of `J`.
#[inline]
pub(crate) fn energy_count(lat: &Lattice, core_idx: usize, orientation: u32) -> i32 {
    let mut e = 0;
    for k in lat.neighbor_indices(core_idx) {
        let s = lat.raw_at(k);
        if s == PARTICLE {
            if !pins_raw(lat, k, core_idx, orientation) {
                e += 1;
            }
        } else if s != orientation {
            e += 1;
        }
    }
    e
}

#[inline]
pub(crate) fn delta_count(lat: &Lattice, core_idx: usize, trial: u32) -> i32 {
    energy_count(lat, core_idx, trial) - energy_count(lat, core_idx, lat.raw_at(core_idx))
}

/// Whether some neighbour orientation would be accepted at `idx` right now.
pub(crate) fn is_mobile(lat: &Lattice, idx: usize, rule: AcceptanceRule) -> bool {
    let own = lat.raw_at(idx);
    if own == PARTICLE {
        return false;
    }
    let mut tried = [PARTICLE; 8];
    let mut n_tried = 0;
    let mut current: Option<i32> = None;
    for k in lat.neighbor_indices(idx) {
        let s = lat.raw_at(k);
        if s == PARTICLE || s == own || tried[..n_tried].contains(&s) {
            continue;
        }
        tried[n_tried] = s;
        n_tried += 1;
        let e_now = *current.get_or_insert_with(|| energy_count(lat, idx, own));
        if rule.accepts(energy_count(lat, idx, s) - e_now) {
            return true;
        }
    }
    false
}

/// Counters for one cellular-automaton step (CAS).
///
/// In [`SweepMode::ActiveSet`] only cells that could change are considered,
/// so `boundary_cells` and `attempts` cover that subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub cas: u64,
    pub attempts: u64,
    pub accepted: u64,
    pub boundary_cells: u64,
}

/// One evaluated reorientation proposal, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub cas: u64,
    pub core: usize,
    pub from: Orientation,
    pub to: Orientation,
    /// `E(to) - E(from)` in units of `J`.
    pub delta: i32,
    pub accepted: bool,
}

/// How each CAS visits the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Visit every grain cell in a fresh random permutation.
    Full,
    /// Visit only cells that can currently change, in an order distributed
    /// exactly as the full permutation restricted to those cells. Produces
    /// the same lattice-state process as [`SweepMode::Full`] but consumes the
    /// random stream differently.
    #[default]
    ActiveSet,
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Full => "full",
            SweepMode::ActiveSet => "active-set",
        })
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SweepMode::Full),
            "active-set" => Ok(SweepMode::ActiveSet),
            other => Err(Error::config(format!(
                "unknown sweep mode {other:?} (expected full or active-set)"
            ))),
        }
    }
}

/// Owns a lattice and advances it one CAS at a time.
pub struct Engine {
    lattice: Lattice,
    params: EngineParams,
    p1: f64,
    rng: SimRng,
    cas: u64,
    mode: SweepMode,
    order: Vec<usize>,
    active: Option<ActiveSet>,
}

/// Bookkeeping for [`SweepMode::ActiveSet`].
///
/// `mobile` flags are exact at the start of every sweep. A flip marks its
/// 5x5 block dirty; dirty cells are re-evaluated before the next sweep, so
/// during a sweep `mobile[i]` still describes the sweep's starting state.
struct ActiveSet {
    mobile: Vec<bool>,
    list: Vec<usize>,
    pos: Vec<usize>,
    dirty: Vec<bool>,
    dirty_list: Vec<usize>,
    /// Sweep in which a cell's turn was last drawn.
    stamp: Vec<u64>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
}

const NOT_LISTED: usize = usize::MAX;

impl ActiveSet {
    fn new(lat: &Lattice, rule: AcceptanceRule) -> Self {
        let n = lat.len();
        let mut set = ActiveSet {
            mobile: vec![false; n],
            list: Vec::new(),
            pos: vec![NOT_LISTED; n],
            dirty: vec![false; n],
            dirty_list: Vec::new(),
            stamp: vec![0; n],
            heap: BinaryHeap::new(),
        };
        for i in 0..n {
            if is_mobile(lat, i, rule) {
                set.insert(i);
            }
        }
        set
    }

    fn insert(&mut self, i: usize) {
        self.mobile[i] = true;
        self.pos[i] = self.list.len();
        self.list.push(i);
    }

    fn remove(&mut self, i: usize) {
        self.mobile[i] = false;
        let p = self.pos[i];
        let last = self.list.pop().expect("listed cell");
        if last != i {
            self.list[p] = last;
            self.pos[last] = p;
        }
        self.pos[i] = NOT_LISTED;
    }

    fn refresh_dirty(&mut self, lat: &Lattice, rule: AcceptanceRule) {
        for n in 0..self.dirty_list.len() {
            let i = self.dirty_list[n];
            self.dirty[i] = false;
            let now = is_mobile(lat, i, rule);
            if now != self.mobile[i] {
                if now {
                    self.insert(i);
                } else {
                    self.remove(i);
                }
            }
        }
        self.dirty_list.clear();
    }
}

impl Engine {
    pub fn new(lattice: Lattice, params: EngineParams) -> Result<Self> {
        Engine::with_mode(lattice, params, SweepMode::default())
    }

    pub fn with_mode(lattice: Lattice, params: EngineParams, mode: SweepMode) -> Result<Self> {
        params.validate()?;
        let p1 = attempt_probability(&params)?;
        let (order, active) = match mode {
            SweepMode::Full => (lattice.grain_cells(), None),
            SweepMode::ActiveSet => (Vec::new(), Some(ActiveSet::new(&lattice, params.acceptance))),
        };
        Ok(Engine {
            rng: rng::seeded(params.rng_seed),
            lattice,
            params,
            p1,
            cas: 0,
            mode,
            order,
            active,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn into_lattice(self) -> Lattice {
        self.lattice
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn attempt_probability(&self) -> f64 {
        self.p1
    }

    /// Completed steps.
    pub fn cas(&self) -> u64 {
        self.cas
    }

    pub fn mode(&self) -> SweepMode {
        self.mode
    }

    /// True when no cell can ever change again. Only tracked in
    /// [`SweepMode::ActiveSet`]; always false for full sweeps.
    pub fn is_frozen(&self) -> bool {
        self.active
            .as_ref()
            .is_some_and(|a| a.list.is_empty() && a.dirty_list.is_empty())
    }

    pub fn step(&mut self) -> StepReport {
        self.step_observed(&mut |_| {})
    }

    /// Advances one CAS, reporting every evaluated proposal to `observe`.
    pub fn step_observed(&mut self, observe: &mut dyn FnMut(&Proposal)) -> StepReport {
        self.cas += 1;
        let mut report = StepReport {
            cas: self.cas,
            ..StepReport::default()
        };
        match self.mode {
            SweepMode::Full => self.full_sweep(&mut report, observe),
            SweepMode::ActiveSet => self.active_sweep(&mut report, observe),
        }
        report
    }

    fn full_sweep(&mut self, report: &mut StepReport, observe: &mut dyn FnMut(&Proposal)) {
        self.order.shuffle(&mut self.rng);
        let rule = self.params.acceptance;
        for n in 0..self.order.len() {
            let idx = self.order[n];
            if !self.lattice.is_boundary_raw(idx) {
                continue;
            }
            report.boundary_cells += 1;
            if self.rng.gen::<f64>() >= self.p1 {
                continue;
            }
            report.attempts += 1;
            propose(&mut self.lattice, &mut self.rng, rule, idx, self.cas, report, observe);
        }
    }

    fn active_sweep(&mut self, report: &mut StepReport, observe: &mut dyn FnMut(&Proposal)) {
        let sweep = self.cas;
        let rule = self.params.acceptance;
        let p1 = self.p1;
        let Engine {
            lattice,
            rng,
            active,
            ..
        } = self;
        let act = active.as_mut().expect("active-set state");
        act.refresh_dirty(lattice, rule);
        if act.list.is_empty() {
            return;
        }

        // Every grain cell gets an independent uniform key, and ascending key
        // order is the sweep's random permutation. Only cells that draw an
        // attempt (probability P1) and could change need their key
        // materialised. Cells mobile at the start decide up front; cells that
        // only become mobile after a nearby flip decide lazily, and if their
        // key is already in the past their turn was a no-op.
        act.heap.clear();
        report.boundary_cells += act.list.len() as u64;
        let ln_skip = (1.0 - p1).ln();
        let mut n = 0;
        while n < act.list.len() {
            if p1 < 1.0 {
                let u: f64 = rng.gen();
                let gap = ((1.0 - u).ln() / ln_skip).floor();
                if gap >= (act.list.len() - n) as f64 {
                    break;
                }
                n += gap as usize;
            }
            let i = act.list[n];
            act.stamp[i] = sweep;
            act.heap.push(Reverse((rng.next_u64(), i)));
            n += 1;
        }

        let (w, h) = (lattice.width(), lattice.height());
        while let Some(Reverse((now, idx))) = act.heap.pop() {
            if !lattice.is_boundary_raw(idx) {
                continue;
            }
            report.attempts += 1;
            if !propose(lattice, rng, rule, idx, sweep, report, observe) {
                continue;
            }
            // A flip can change the mobility of every cell within Chebyshev
            // distance 2 (neighbours, and neighbours of particle neighbours).
            let (x, y) = lattice.coords(idx);
            for dy in 0..5 {
                let yy = (y + h + dy - 2) % h;
                for dx in 0..5 {
                    let xx = (x + w + dx - 2) % w;
                    let j = yy * w + xx;
                    if lattice.raw_at(j) == PARTICLE {
                        continue;
                    }
                    if !act.dirty[j] {
                        act.dirty[j] = true;
                        act.dirty_list.push(j);
                    }
                    if act.mobile[j] || act.stamp[j] == sweep {
                        // Its turn was already drawn this sweep.
                        continue;
                    }
                    act.stamp[j] = sweep;
                    let key = rng.next_u64();
                    if (key, j) > (now, idx) && rng.gen::<f64>() < p1 {
                        report.boundary_cells += 1;
                        act.heap.push(Reverse((key, j)));
                    }
                }
            }
        }
    }

    /// Runs `n_cas` steps, calling `record` on the initial state, every
    /// `record_every` steps, and on the final state. `record_every == 0`
    /// records only the initial and final states.
    pub fn run<F>(&mut self, n_cas: u64, record_every: u64, mut record: F)
    where
        F: FnMut(u64, &Lattice),
    {
        let start = self.cas;
        record(self.cas, &self.lattice);
        let end = start + n_cas;
        while self.cas < end {
            if self.is_frozen() {
                // Nothing can change again: emit the remaining records.
                if let Some(done) = (self.cas - start).checked_div(record_every) {
                    let mut next = start + (done + 1) * record_every;
                    while next < end {
                        self.cas = next;
                        record(self.cas, &self.lattice);
                        next += record_every;
                    }
                }
                self.cas = end;
                record(self.cas, &self.lattice);
                return;
            }
            self.step();
            let offset = self.cas - start;
            if (record_every > 0 && offset.is_multiple_of(record_every)) || self.cas == end {
                record(self.cas, &self.lattice);
            }
        }
    }

    /// Runs `n_cas` steps and collects lattice snapshots.
    pub fn run_trajectory(&mut self, n_cas: u64, record_every: u64) -> Trajectory {
        let mut frames = Vec::new();
        self.run(n_cas, record_every, |cas, lat| {
            frames.push(Frame {
                cas,
                lattice: lat.clone(),
            })
        });
        Trajectory { frames }
    }
}

/// Proposes a random neighbour's orientation for `idx`; returns whether the
/// cell flipped. Particle or same-orientation picks are no-ops.
#[inline]
fn propose(
    lat: &mut Lattice,
    rng: &mut SimRng,
    rule: AcceptanceRule,
    idx: usize,
    cas: u64,
    report: &mut StepReport,
    observe: &mut dyn FnMut(&Proposal),
) -> bool {
    let j = lat.neighbor_indices(idx)[rng.gen_range(0..8)];
    let own = lat.raw_at(idx);
    let trial = lat.raw_at(j);
    if trial == PARTICLE || trial == own {
        return false;
    }
    let delta = delta_count(lat, idx, trial);
    let accepted = rule.accepts(delta);
    if accepted {
        lat.set_raw(idx, trial);
        report.accepted += 1;
    }
    observe(&Proposal {
        cas,
        core: idx,
        from: own,
        to: trial,
        delta,
        accepted,
    });
    accepted
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cas: u64,
    pub lattice: Lattice,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
}
