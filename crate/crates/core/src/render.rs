//! Binary PPM (P6) snapshots, one pixel per cell.

use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, PARTICLE};

/// Colour of an orientation. Fixed for a given ID; particles are black.
pub fn orientation_color(raw: u32) -> [u8; 3] {
    if raw == PARTICLE {
        return [0, 0, 0];
    }
    // SplitMix64 finaliser, then keep channels away from black.
    let mut z = u64::from(raw).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let ch = |shift: u32| 48 + ((z >> shift) & 0xFF) as u8 % 208;
    [ch(0), ch(8), ch(16)]
}

pub fn write_ppm<W: Write>(lat: &Lattice, mut out: W) -> io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", lat.width(), lat.height())?;
    let mut buf = Vec::with_capacity(lat.len() * 3);
    for &raw in lat.raw() {
        buf.extend_from_slice(&orientation_color(raw));
    }
    out.write_all(&buf)
}

pub fn render(lat: &Lattice, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    write_ppm(lat, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
