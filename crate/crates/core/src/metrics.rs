//! Grain identification and size statistics.

use std::f64::consts::PI;
use std::io::{self, Write};

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Orientation, PARTICLE};

/// Default histogram bin width, um.
pub const DEFAULT_BIN_WIDTH_UM: f64 = 1.5;

pub const KINETICS_CSV_HEADER: &str = "cas,mean_diameter_um,grain_count";
pub const HISTOGRAM_CSV_HEADER: &str = "bin_low_um,bin_high_um,fraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrainRecord {
    pub label: u32,
    pub orientation: Orientation,
    pub area_cells: usize,
}

/// 8-connected, periodic same-orientation components.
///
/// `labels[i]` is the 1-based grain label of cell `i`, or 0 for particles.
/// Labels follow the row-major order of each grain's first cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrainLabeling {
    pub labels: Vec<u32>,
    pub grains: Vec<GrainRecord>,
}

impl GrainLabeling {
    pub fn grain_count(&self) -> usize {
        self.grains.len()
    }
}

pub fn label_grains(lat: &Lattice) -> GrainLabeling {
    let n = lat.len();
    let mut uf = UnionFind::new(n);
    // Forward half of the Moore neighbourhood; periodic wrap covers the rest.
    for i in 0..n {
        let s = lat.raw_at(i);
        if s == PARTICLE {
            continue;
        }
        let nb = lat.neighbor_indices(i);
        // E, SW, S, SE
        for &k in &nb[4..] {
            if lat.raw_at(k) == s {
                uf.union(i, k);
            }
        }
    }

    let mut root_label = vec![0u32; n];
    let mut labels = vec![0u32; n];
    let mut grains: Vec<GrainRecord> = Vec::new();
    for (i, slot) in labels.iter_mut().enumerate() {
        let s = lat.raw_at(i);
        if s == PARTICLE {
            continue;
        }
        let r = uf.find(i);
        if root_label[r] == 0 {
            grains.push(GrainRecord {
                label: grains.len() as u32 + 1,
                orientation: s,
                area_cells: 0,
            });
            root_label[r] = grains.len() as u32;
        }
        let label = root_label[r];
        *slot = label;
        grains[label as usize - 1].area_cells += 1;
    }
    GrainLabeling { labels, grains }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low_um: f64,
    pub high_um: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrainStats {
    /// Equivalent-circle diameter per grain, um, in label order.
    pub diameters: Vec<f64>,
    /// Number-averaged diameter; `None` when there are no grains.
    pub mean_diameter: Option<f64>,
    pub histogram: Vec<HistogramBin>,
    pub grain_count: usize,
}

/// `2 * sqrt(A / pi)`.
pub fn equivalent_diameter(area_um2: f64) -> f64 {
    2.0 * (area_um2 / PI).sqrt()
}

pub fn grain_stats(labeling: &GrainLabeling, lat: &Lattice, bin_width: f64) -> Result<GrainStats> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::usage(format!(
            "histogram bin width must be positive, got {bin_width}"
        )));
    }
    let diameters: Vec<f64> = labeling
        .grains
        .iter()
        .map(|g| equivalent_diameter(lat.to_microns(g.area_cells)))
        .collect();
    let grain_count = diameters.len();
    if grain_count == 0 {
        return Ok(GrainStats {
            diameters,
            mean_diameter: None,
            histogram: Vec::new(),
            grain_count,
        });
    }
    let mean = diameters.iter().sum::<f64>() / grain_count as f64;
    let max = diameters.iter().copied().fold(0.0, f64::max);
    let n_bins = ((max / bin_width).floor() as usize) + 1;
    let mut counts = vec![0usize; n_bins];
    for &d in &diameters {
        counts[((d / bin_width).floor() as usize).min(n_bins - 1)] += 1;
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| HistogramBin {
            low_um: b as f64 * bin_width,
            high_um: (b + 1) as f64 * bin_width,
            fraction: c as f64 / grain_count as f64,
        })
        .collect();
    Ok(GrainStats {
        diameters,
        mean_diameter: Some(mean),
        histogram,
        grain_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticsPoint {
    pub cas: u64,
    /// NaN when the lattice holds no grains.
    pub mean_diameter: f64,
    pub grain_count: usize,
}

impl KineticsPoint {
    pub fn measure(cas: u64, lat: &Lattice) -> Self {
        let labeling = label_grains(lat);
        // Bin width does not affect the mean.
        let stats = grain_stats(&labeling, lat, DEFAULT_BIN_WIDTH_UM).expect("valid bin width");
        KineticsPoint {
            cas,
            mean_diameter: stats.mean_diameter.unwrap_or(f64::NAN),
            grain_count: stats.grain_count,
        }
    }
}

/// Mean size and grain count over time, `cas` strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KineticsSeries {
    pub points: Vec<KineticsPoint>,
}

impl KineticsSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends a point; `cas` must exceed the last recorded step.
    pub fn push(&mut self, point: KineticsPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.cas <= last.cas {
                return Err(Error::usage(format!(
                    "kinetics steps must increase: {} after {}",
                    point.cas, last.cas
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{KINETICS_CSV_HEADER}")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.cas, p.mean_diameter, p.grain_count)?;
        }
        Ok(())
    }
}

pub fn record_kinetics(trajectory: &Trajectory) -> Result<KineticsSeries> {
    let mut series = KineticsSeries::default();
    for f in &trajectory.frames {
        series.push(KineticsPoint::measure(f.cas, &f.lattice))?;
    }
    Ok(series)
}

pub fn write_histogram_csv<W: Write>(stats: &GrainStats, mut out: W) -> io::Result<()> {
    writeln!(out, "{HISTOGRAM_CSV_HEADER}")?;
    for b in &stats.histogram {
        writeln!(out, "{},{},{}", b.low_um, b.high_um, b.fraction)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Frame;
    use crate::lattice::CellState;
    use std::collections::VecDeque;

    /// Breadth-first flood fill, independent of the union-find labeling.
    fn flood_fill_partition(lat: &Lattice) -> Vec<Vec<usize>> {
        let (w, h) = (lat.width() as i64, lat.height() as i64);
        let mut seen = vec![false; lat.len()];
        let mut comps = Vec::new();
        for start in 0..lat.len() {
            if seen[start] || lat.get(start).is_particle() {
                continue;
            }
            let o = lat.get(start);
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(c) = queue.pop_front() {
                comp.push(c);
                let (x, y) = ((c as i64) % w, (c as i64) / w);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let nx = (x + dx).rem_euclid(w);
                        let ny = (y + dy).rem_euclid(h);
                        let k = (ny * w + nx) as usize;
                        if !seen[k] && lat.get(k) == o {
                            seen[k] = true;
                            queue.push_back(k);
                        }
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    fn partition_of(l: &GrainLabeling) -> Vec<Vec<usize>> {
        let mut comps = vec![Vec::new(); l.grains.len()];
        for (i, &lab) in l.labels.iter().enumerate() {
            if lab > 0 {
                comps[lab as usize - 1].push(i);
            }
        }
        comps
    }

    #[test]
    fn uniform_lattice_is_one_grain() {
        let lat = Lattice::filled(7, 5, 0.4, CellState::Grain(4)).unwrap();
        let l = label_grains(&lat);
        assert_eq!(l.grains, vec![GrainRecord { label: 1, orientation: 4, area_cells: 35 }]);
    }

    #[test]
    fn checkerboard_connects_diagonally() {
        let cells = (0..16).map(|i| 1 + ((i % 4 + i / 4) % 2) as u32).collect();
        let lat = Lattice::from_raw(4, 4, 0.4, cells).unwrap();
        let l = label_grains(&lat);
        assert_eq!(l.grain_count(), 2);
        assert_eq!(partition_of(&l), flood_fill_partition(&lat));
    }

    #[test]
    fn same_orientation_separated_regions_are_distinct_grains() {
        #[rustfmt::skip]
        let cells = vec![
            1, 1, 2, 2, 2, 2,
            1, 1, 2, 2, 2, 2,
            2, 2, 2, 2, 2, 2,
            2, 2, 2, 1, 1, 2,
            2, 2, 2, 1, 1, 2,
            2, 2, 2, 2, 2, 2,
        ];
        let lat = Lattice::from_raw(6, 6, 0.4, cells).unwrap();
        let l = label_grains(&lat);
        assert_eq!(l.grain_count(), 3);
    }

    #[test]
    fn grains_wrapping_the_torus_count_once() {
        // A column of orientation 2 on the seam (x = 0 and x = 4).
        let mut cells = vec![1u32; 25];
        for y in 0..5 {
            cells[y * 5] = 2;
            cells[y * 5 + 4] = 2;
        }
        let lat = Lattice::from_raw(5, 5, 0.4, cells).unwrap();
        let l = label_grains(&lat);
        assert_eq!(l.grain_count(), 2);
        assert_eq!(l.grains[0].area_cells, 10);
    }

    #[test]
    fn labeling_matches_flood_fill_on_random_grids() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(17);
        for _ in 0..100 {
            let cells = (0..400).map(|_| rng.gen_range(0..4)).collect();
            let lat = Lattice::from_raw(20, 20, 0.4, cells).unwrap();
            let l = label_grains(&lat);
            assert_eq!(partition_of(&l), flood_fill_partition(&lat));
            let total: usize = l.grains.iter().map(|g| g.area_cells).sum();
            assert_eq!(total + lat.particle_count(), lat.len());
        }
    }

    #[test]
    fn full_domain_diameter() {
        let lat = Lattice::filled(300, 300, 0.4, CellState::Grain(1)).unwrap();
        let s = grain_stats(&label_grains(&lat), &lat, 1.5).unwrap();
        let expected = 2.0 * (14_400.0 / PI).sqrt();
        assert!((s.mean_diameter.unwrap() - expected).abs() < 1e-9);
        assert!((expected - 135.406).abs() < 1e-3);
    }

    #[test]
    fn single_cell_diameter() {
        assert!((equivalent_diameter(0.16) - 0.451_352_5).abs() < 1e-6);
    }

    #[test]
    fn equal_grains_mean_equals_each() {
        let mut cells = vec![1u32; 100];
        for c in cells.iter_mut().skip(50) {
            *c = 2;
        }
        let lat = Lattice::from_raw(10, 10, 0.4, cells).unwrap();
        let s = grain_stats(&label_grains(&lat), &lat, 1.5).unwrap();
        assert_eq!(s.grain_count, 2);
        assert_eq!(s.diameters[0], s.diameters[1]);
        assert!((s.mean_diameter.unwrap() - s.diameters[0]).abs() < 1e-12);
    }

    #[test]
    fn histogram_sums_to_one() {
        let lat = crate::seeding::voronoi_init(&crate::seeding::SeedConfig {
            width: 80,
            height: 80,
            cell_size: 0.4,
            n_grains: 60,
            rng_seed: 5,
        })
        .unwrap();
        let s = grain_stats(&label_grains(&lat), &lat, 1.5).unwrap();
        let total: f64 = s.histogram.iter().map(|b| b.fraction).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(s.histogram.iter().all(|b| (b.high_um - b.low_um - 1.5).abs() < 1e-12));
    }

    #[test]
    fn empty_labeling_has_no_mean() {
        let empty = GrainLabeling { labels: vec![0; 9], grains: vec![] };
        let lat = Lattice::filled(3, 3, 0.4, CellState::Particle).unwrap();
        let s = grain_stats(&empty, &lat, 1.5).unwrap();
        assert_eq!((s.grain_count, s.mean_diameter), (0, None));
        assert!(grain_stats(&empty, &lat, 0.0).is_err());
    }

    #[test]
    fn stats_ignore_grain_order() {
        let lat = crate::seeding::voronoi_init(&crate::seeding::SeedConfig {
            width: 50,
            height: 50,
            cell_size: 0.4,
            n_grains: 20,
            rng_seed: 8,
        })
        .unwrap();
        let l = label_grains(&lat);
        let mut rev = l.clone();
        rev.grains.reverse();
        let a = grain_stats(&l, &lat, 1.5).unwrap();
        let b = grain_stats(&rev, &lat, 1.5).unwrap();
        assert!((a.mean_diameter.unwrap() - b.mean_diameter.unwrap()).abs() < 1e-12);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn kinetics_from_trajectory() {
        let lat = Lattice::filled(5, 5, 0.4, CellState::Grain(1)).unwrap();
        let t = Trajectory { frames: vec![Frame { cas: 0, lattice: lat }] };
        let k = record_kinetics(&t).unwrap();
        assert_eq!(k.len(), 1);
        let mut csv = Vec::new();
        k.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("cas,mean_diameter_um,grain_count\n0,"));
        let mut series = KineticsSeries::default();
        series.push(KineticsPoint { cas: 3, mean_diameter: 1.0, grain_count: 1 }).unwrap();
        assert!(series.push(KineticsPoint { cas: 3, mean_diameter: 1.0, grain_count: 1 }).is_err());
    }
}
