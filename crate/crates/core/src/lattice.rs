//! Periodic square lattice of grain orientations and pinning particles.
//!
//! Cells are stored row-major as one `u32` each. Orientation IDs are positive;
//! the value `0` is reserved for particle cells, both in memory and in the
//! plain-text grid format.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Raw encoding of a particle cell.
pub(crate) const PARTICLE: u32 = 0;

/// Default grid edge in cells.
pub const DEFAULT_EDGE: usize = 300;
/// Default cell edge in micrometres (120 um over 300 cells).
pub const DEFAULT_CELL_SIZE_UM: f64 = 0.4;

/// Positive grain orientation ID.
pub type Orientation = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Grain(Orientation),
    Particle,
}

impl CellState {
    #[inline]
    pub(crate) fn from_raw(raw: u32) -> Self {
        if raw == PARTICLE {
            CellState::Particle
        } else {
            CellState::Grain(raw)
        }
    }

    #[inline]
    pub(crate) fn to_raw(self) -> u32 {
        match self {
            CellState::Grain(o) => o,
            CellState::Particle => PARTICLE,
        }
    }

    pub fn is_particle(self) -> bool {
        matches!(self, CellState::Particle)
    }

    pub fn orientation(self) -> Option<Orientation> {
        match self {
            CellState::Grain(o) => Some(o),
            CellState::Particle => None,
        }
    }
}

/// Moore neighbourhood of a core cell.
///
/// Order is the row-major scan of the 3x3 block with the centre removed:
/// NW, N, NE, W, E, SW, S, SE. The engine picks "a random neighbour" by
/// position in this order, so it is part of the replay contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborSet {
    pub indices: [usize; 8],
}

impl NeighborSet {
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<u32>,
}

impl Lattice {
    /// A lattice with every cell set to `fill`.
    pub fn filled(width: usize, height: usize, cell_size: f64, fill: CellState) -> Result<Self> {
        check_geometry(width, height, cell_size)?;
        if fill == CellState::Grain(0) {
            return Err(Error::usage("orientation ID 0 is reserved"));
        }
        Ok(Lattice {
            width,
            height,
            cell_size,
            cells: vec![fill.to_raw(); width * height],
        })
    }

    /// Builds a lattice from raw cell values (`0` = particle).
    pub fn from_raw(width: usize, height: usize, cell_size: f64, cells: Vec<u32>) -> Result<Self> {
        check_geometry(width, height, cell_size)?;
        if cells.len() != width * height {
            return Err(Error::usage(format!(
                "expected {} cells for a {width}x{height} grid, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Lattice {
            width,
            height,
            cell_size,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Micrometres per cell edge.
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Raw cell values, row-major, `0` for particles.
    pub fn raw(&self) -> &[u32] {
        &self.cells
    }

    #[inline]
    pub(crate) fn raw_at(&self, idx: usize) -> u32 {
        self.cells[idx]
    }

    #[inline]
    pub(crate) fn set_raw(&mut self, idx: usize, value: u32) {
        self.cells[idx] = value;
    }

    pub fn get(&self, idx: usize) -> CellState {
        CellState::from_raw(self.cells[idx])
    }

    pub fn set(&mut self, idx: usize, state: CellState) -> Result<()> {
        self.check_index(idx)?;
        if state == CellState::Grain(0) {
            return Err(Error::usage("orientation ID 0 is reserved"));
        }
        self.cells[idx] = state.to_raw();
        Ok(())
    }

    /// Row-major index of column `x`, row `y`.
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// `(x, y)` = (column, row) of `idx`.
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub(crate) fn check_index(&self, idx: usize) -> Result<()> {
        if idx >= self.cells.len() {
            return Err(Error::usage(format!(
                "cell index {idx} out of range for {} cells",
                self.cells.len()
            )));
        }
        Ok(())
    }

    /// The 8 Moore neighbours of `idx` with periodic wraparound.
    pub fn neighbors(&self, idx: usize) -> Result<NeighborSet> {
        self.check_index(idx)?;
        Ok(NeighborSet {
            indices: self.neighbor_indices(idx),
        })
    }

    #[inline]
    pub(crate) fn neighbor_indices(&self, idx: usize) -> [usize; 8] {
        let w = self.width;
        let h = self.height;
        let x = idx % w;
        let y = idx / w;
        let xm = if x == 0 { w - 1 } else { x - 1 };
        let xp = if x + 1 == w { 0 } else { x + 1 };
        let rm = if y == 0 { h - 1 } else { y - 1 } * w;
        let r0 = y * w;
        let rp = if y + 1 == h { 0 } else { y + 1 } * w;
        [
            rm + xm,
            rm + x,
            rm + xp,
            r0 + xm,
            r0 + xp,
            rp + xm,
            rp + x,
            rp + xp,
        ]
    }

    /// Whether a grain cell has at least one grain neighbour of a different
    /// orientation. Particle neighbours do not count.
    pub fn is_boundary_cell(&self, idx: usize) -> Result<bool> {
        self.check_index(idx)?;
        if self.cells[idx] == PARTICLE {
            return Err(Error::usage(format!(
                "cell {idx} is a particle; boundary status is defined for grain cells"
            )));
        }
        Ok(self.is_boundary_raw(idx))
    }

    #[inline]
    pub(crate) fn is_boundary_raw(&self, idx: usize) -> bool {
        let own = self.cells[idx];
        self.neighbor_indices(idx).iter().any(|&k| {
            let s = self.cells[k];
            s != PARTICLE && s != own
        })
    }

    /// Area of `area_cells` cells in square micrometres.
    pub fn to_microns(&self, area_cells: usize) -> f64 {
        area_cells as f64 * self.cell_size * self.cell_size
    }

    pub fn particle_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == PARTICLE).count()
    }

    pub fn particle_fraction(&self) -> f64 {
        self.particle_count() as f64 / self.cells.len() as f64
    }

    /// Distinct orientation IDs present, ascending.
    pub fn orientations(&self) -> BTreeSet<Orientation> {
        self.cells.iter().copied().filter(|&c| c != PARTICLE).collect()
    }

    /// Indices of all grain cells in ascending order.
    pub fn grain_cells(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] != PARTICLE)
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {} {}", self.width, self.height, self.cell_size)?;
        let mut line = String::with_capacity(self.width * 4);
        for row in self.cells.chunks(self.width) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, 1, "empty lattice file"))?;
        let header = header.map_err(|e| Error::parse(1, 1, e.to_string()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                1,
                1,
                "header must be \"width height cell_size_um\"",
            ));
        }
        let width: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(1, 1, format!("bad width {:?}", fields[0])))?;
        let height: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(1, 2, format!("bad height {:?}", fields[1])))?;
        let cell_size: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(1, 3, format!("bad cell size {:?}", fields[2])))?;
        check_geometry(width, height, cell_size).map_err(|e| Error::parse(1, 1, e.to_string()))?;

        let mut cells = Vec::with_capacity(width * height);
        for (n, line) in lines {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::parse(lineno, 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if cells.len() == width * height {
                return Err(Error::parse(lineno, 1, "more rows than the header declares"));
            }
            let before = cells.len();
            for (col, tok) in line.split_whitespace().enumerate() {
                let v: u32 = tok.parse().map_err(|_| {
                    Error::parse(lineno, col + 1, format!("bad cell value {tok:?}"))
                })?;
                cells.push(v);
            }
            if cells.len() - before != width {
                return Err(Error::parse(
                    lineno,
                    1,
                    format!("expected {width} values, got {}", cells.len() - before),
                ));
            }
        }
        if cells.len() != width * height {
            return Err(Error::parse(
                height + 1,
                1,
                format!("expected {height} rows, got {}", cells.len() / width),
            ));
        }
        Lattice::from_raw(width, height, cell_size, cells)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_text(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Lattice::read_text(BufReader::new(file))
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} lattice @ {} um/cell",
            self.width, self.height, self.cell_size
        )
    }
}

fn check_geometry(width: usize, height: usize, cell_size: f64) -> Result<()> {
    if width < 3 || height < 3 {
        return Err(Error::usage(format!(
            "grid must be at least 3x3, got {width}x{height}"
        )));
    }
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::usage(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    Ok(())
}
