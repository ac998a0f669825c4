//! Initial microstructures: periodic Voronoi polycrystal plus randomly placed
//! circular particles.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{CellState, Lattice, PARTICLE};
use crate::rng;

/// Relative tolerance on the achieved particle fraction.
pub const FRACTION_TOLERANCE: f64 = 0.10;
/// Rejection-sampling budget per expected particle.
pub const ATTEMPTS_PER_PARTICLE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SeedConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub n_grains: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleSpec {
    pub radius_um: f64,
    /// Target area fraction in `[0, 1)`.
    pub volume_fraction: f64,
}

impl ParticleSpec {
    pub fn new(radius_um: f64, volume_fraction: f64) -> Result<Self> {
        if !(radius_um.is_finite() && radius_um > 0.0) {
            return Err(Error::usage(format!(
                "particle radius must be positive, got {radius_um}"
            )));
        }
        if !(0.0..1.0).contains(&volume_fraction) {
            return Err(Error::usage(format!(
                "volume fraction must lie in [0, 1), got {volume_fraction}"
            )));
        }
        Ok(ParticleSpec {
            radius_um,
            volume_fraction,
        })
    }

    /// Disk radius in cells, rounded, at least 1.
    pub fn radius_cells(&self, cell_size: f64) -> usize {
        ((self.radius_um / cell_size).round() as usize).max(1)
    }
}

/// Outcome of a particle placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub radius_cells: usize,
    pub disk_cells: usize,
    pub disks: usize,
    pub attempts: usize,
    pub target_fraction: f64,
    pub achieved_fraction: f64,
}

/// Periodic Voronoi tessellation from `n_grains` distinct random seed cells.
///
/// Seed `i` carries orientation `i + 1`. Each cell takes the orientation of
/// its nearest seed under periodic Euclidean distance between cell centres;
/// ties go to the lowest seed index.
pub fn voronoi_init(cfg: &SeedConfig) -> Result<Lattice> {
    let mut lat = Lattice::filled(cfg.width, cfg.height, cfg.cell_size, CellState::Grain(1))?;
    let n_cells = lat.len();
    if cfg.n_grains == 0 || cfg.n_grains > n_cells {
        return Err(Error::usage(format!(
            "n_grains must be in 1..={n_cells}, got {}",
            cfg.n_grains
        )));
    }
    if cfg.n_grains == 1 {
        return Ok(lat);
    }
    let mut rng = rng::seeded(cfg.rng_seed);
    let seeds: Vec<(i64, i64)> = index::sample(&mut rng, n_cells, cfg.n_grains)
        .into_iter()
        .map(|i| {
            let (x, y) = lat.coords(i);
            (x as i64, y as i64)
        })
        .collect();

    let assignment = nearest_seed_map(cfg.width, cfg.height, &seeds);
    for (idx, seed) in assignment.into_iter().enumerate() {
        lat.set_raw(idx, seed as u32 + 1);
    }
    Ok(lat)
}

/// For every cell, the index of the nearest seed (lowest index on ties).
///
/// Seeds are bucketed on a coarse periodic grid and searched in growing
/// Chebyshev rings of buckets, which keeps the cost near-linear in the number
/// of cells for dense seedings.
fn nearest_seed_map(width: usize, height: usize, seeds: &[(i64, i64)]) -> Vec<usize> {
    let (w, h) = (width as i64, height as i64);
    let per_bucket_edge = ((width * height) as f64 / seeds.len() as f64).sqrt().ceil() as i64;
    let edge = per_bucket_edge.max(1);
    let bw = ((w + edge - 1) / edge).max(1);
    let bh = ((h + edge - 1) / edge).max(1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); (bw * bh) as usize];
    for (i, &(sx, sy)) in seeds.iter().enumerate() {
        buckets[((sy / edge) * bw + sx / edge) as usize].push(i);
    }
    let periodic_d2 = |x: i64, y: i64, sx: i64, sy: i64| {
        let dx = (x - sx).abs();
        let dy = (y - sy).abs();
        let dx = dx.min(w - dx);
        let dy = dy.min(h - dy);
        dx * dx + dy * dy
    };

    let max_ring = bw.max(bh);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..h {
        for x in 0..w {
            let (bx, by) = (x / edge, y / edge);
            let mut best: Option<(i64, usize)> = None;
            let mut ring = 0;
            loop {
                // Buckets in ring r are at least (r - 2) * edge cells away
                // along one axis; one step of slack covers the partial
                // bucket at the periodic seam.
                if let Some((d2, _)) = best {
                    let reach = (ring - 2).max(0) * edge;
                    if reach * reach > d2 {
                        break;
                    }
                }
                if ring > max_ring {
                    break;
                }
                let mut visit = |cx: i64, cy: i64| {
                    let b = (cy.rem_euclid(bh) * bw + cx.rem_euclid(bw)) as usize;
                    for &s in &buckets[b] {
                        let (sx, sy) = seeds[s];
                        let d2 = periodic_d2(x, y, sx, sy);
                        if best.is_none_or(|(bd, bs)| d2 < bd || (d2 == bd && s < bs)) {
                            best = Some((d2, s));
                        }
                    }
                };
                if ring == 0 {
                    visit(bx, by);
                } else if 2 * ring + 1 > bw.max(bh) {
                    // The ring wraps onto itself; scan everything once.
                    for cy in 0..bh {
                        for cx in 0..bw {
                            visit(cx, cy);
                        }
                    }
                    break;
                } else {
                    for d in -ring..=ring {
                        visit(bx + d, by - ring);
                        visit(bx + d, by + ring);
                    }
                    for d in (-ring + 1)..ring {
                        visit(bx - ring, by + d);
                        visit(bx + ring, by + d);
                    }
                }
                ring += 1;
            }
            out.push(best.expect("at least one seed").1);
        }
    }
    out
}

/// Cell offsets `(dx, dy)` of a discretised disk: every cell whose centre is
/// within `radius` of the centre cell's centre. Row-major order.
pub fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn disk_cells(lat: &Lattice, offsets: &[(i64, i64)], centre: usize, buf: &mut Vec<usize>) {
    let (w, h) = (lat.width() as i64, lat.height() as i64);
    let (cx, cy) = lat.coords(centre);
    buf.clear();
    for &(dx, dy) in offsets {
        let x = (cx as i64 + dx).rem_euclid(w) as usize;
        let y = (cy as i64 + dy).rem_euclid(h) as usize;
        buf.push(lat.index(x, y));
    }
    // Disks wider than a small grid fold onto themselves.
    buf.sort_unstable();
    buf.dedup();
}

/// Places non-overlapping particle disks at uniformly random centres until
/// the particle fraction is within half a disk of the target.
///
/// Particle cells overwrite grain cells. Disks may touch but never share
/// cells. Pre-existing particles count toward the achieved fraction.
pub fn place_particles(
    mut lat: Lattice,
    spec: &ParticleSpec,
    rng_seed: u64,
) -> Result<(Lattice, Placement)> {
    let spec = ParticleSpec::new(spec.radius_um, spec.volume_fraction)?;
    let radius_cells = spec.radius_cells(lat.cell_size());
    let offsets = disk_offsets(radius_cells);
    let mut buf = Vec::with_capacity(offsets.len());
    disk_cells(&lat, &offsets, 0, &mut buf);
    let disk_area = buf.len();
    let n = lat.len();
    let target_cells = spec.volume_fraction * n as f64;

    let mut placement = Placement {
        radius_cells,
        disk_cells: disk_area,
        disks: 0,
        attempts: 0,
        target_fraction: spec.volume_fraction,
        achieved_fraction: lat.particle_fraction(),
    };
    if spec.volume_fraction == 0.0 {
        return Ok((lat, placement));
    }
    if target_cells < disk_area as f64 {
        return Err(Error::usage(format!(
            "target of {target_cells:.1} particle cells is smaller than one disk of {disk_area} cells"
        )));
    }

    let expected = (target_cells / disk_area as f64).ceil() as usize;
    let budget = ATTEMPTS_PER_PARTICLE * expected.max(1);
    let stop_at = target_cells - disk_area as f64 / 2.0;
    let mut placed = lat.particle_count();
    let mut rng = rng::seeded(rng_seed);

    while (placed as f64) < stop_at && placement.attempts < budget {
        placement.attempts += 1;
        let centre = rng.gen_range(0..n);
        disk_cells(&lat, &offsets, centre, &mut buf);
        if buf.iter().any(|&i| lat.raw_at(i) == PARTICLE) {
            continue;
        }
        for &i in &buf {
            lat.set_raw(i, PARTICLE);
        }
        placed += buf.len();
        placement.disks += 1;
    }

    placement.achieved_fraction = placed as f64 / n as f64;
    let rel = (placement.achieved_fraction - spec.volume_fraction).abs() / spec.volume_fraction;
    if rel > FRACTION_TOLERANCE {
        return Err(Error::Placement {
            target: spec.volume_fraction,
            achieved: placement.achieved_fraction,
            attempts: placement.attempts,
        });
    }
    Ok((lat, placement))
}

/// Returns particle cells to the grain structure.
///
/// Freed cells are filled layer by layer from the outside in: each cell
/// bordering a grain takes the most common grain orientation among its
/// Moore neighbours (lowest ID on ties), computed from the previous layer.
pub fn dissolve_particles(mut lat: Lattice) -> Lattice {
    let mut pending: Vec<usize> = (0..lat.len()).filter(|&i| lat.raw_at(i) == PARTICLE).collect();
    let mut updates: Vec<(usize, u32)> = Vec::new();
    while !pending.is_empty() {
        updates.clear();
        for &i in &pending {
            let mut counts: Vec<(u32, usize)> = Vec::with_capacity(8);
            for k in lat.neighbor_indices(i) {
                let s = lat.raw_at(k);
                if s == PARTICLE {
                    continue;
                }
                match counts.iter_mut().find(|(o, _)| *o == s) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((s, 1)),
                }
            }
            if let Some(&(o, _)) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            {
                updates.push((i, o));
            }
        }
        if updates.is_empty() {
            // No grain cells at all; nothing to grow from.
            break;
        }
        for &(i, o) in &updates {
            lat.set_raw(i, o);
        }
        pending.retain(|&i| lat.raw_at(i) == PARTICLE);
    }
    lat
}
