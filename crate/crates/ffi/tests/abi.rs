use std::ffi::{CStr, CString};
use std::ptr;

use grainca_ffi::*;

fn last_error() -> String {
    let p = gca_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lattice_lifecycle_and_queries() {
    unsafe {
        let mut lat = ptr::null_mut();
        assert_eq!(gca_lattice_new(3, 3, 0.4, 1, &mut lat), GcaStatus::Ok);
        for (i, v) in [(0, 2), (1, 2), (2, 2), (3, 0)] {
            assert_eq!(gca_lattice_set(lat, i, v), GcaStatus::Ok);
        }
        let (mut w, mut h) = (0, 0);
        assert_eq!(gca_lattice_dims(lat, &mut w, &mut h), GcaStatus::Ok);
        assert_eq!((w, h), (3, 3));

        // Centre cell: three orientation-2 cells, four of 1, one pinning particle.
        let mut e = 0.0;
        assert_eq!(gca_cell_energy(lat, 4, 1, 1.0, &mut e), GcaStatus::Ok);
        assert_eq!(e, 3.0);
        let mut pinned = -1;
        assert_eq!(gca_pins(lat, 3, 4, 1, &mut pinned), GcaStatus::Ok);
        assert_eq!(pinned, 1);
        let mut d = 0.0;
        assert_eq!(gca_delta_energy(lat, 4, 2, 1.0, &mut d), GcaStatus::Ok);
        assert_eq!(d, 1.0);

        let mut cells = vec![0u32; 9];
        assert_eq!(gca_lattice_copy_cells(lat, cells.as_mut_ptr(), 9), GcaStatus::Ok);
        assert_eq!(cells, [2, 2, 2, 0, 1, 1, 1, 1, 1]);
        assert_eq!(gca_lattice_copy_cells(lat, cells.as_mut_ptr(), 8), GcaStatus::Usage);

        let mut stats = GcaGrainStats::default();
        assert_eq!(gca_lattice_stats(lat, &mut stats), GcaStatus::Ok);
        assert_eq!(stats.grain_count, 2);
        assert!((stats.particle_fraction - 1.0 / 9.0).abs() < 1e-12);

        let mut v = 99;
        assert_eq!(gca_lattice_get(lat, 3, &mut v), GcaStatus::Ok);
        assert_eq!(v, 0);
        assert_eq!(gca_lattice_get(lat, 9, &mut v), GcaStatus::Usage);
        assert!(last_error().contains("out of range"));

        // Energy of a particle cell is a usage error.
        assert_eq!(gca_cell_energy(lat, 3, 1, 1.0, &mut e), GcaStatus::Usage);
        gca_lattice_free(lat);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut lat = ptr::null_mut();
        assert_eq!(gca_lattice_new(2, 2, 0.4, 1, &mut lat), GcaStatus::Usage);
        assert!(lat.is_null());
        assert_eq!(gca_lattice_voronoi(10, 10, 0.4, 101, 1, &mut lat), GcaStatus::Usage);
        assert_eq!(gca_lattice_new(5, 5, 0.4, 1, ptr::null_mut()), GcaStatus::NullPointer);
        assert_eq!(gca_lattice_stats(ptr::null(), ptr::null_mut()), GcaStatus::NullPointer);
        assert!(last_error().contains("null pointer"));

        let missing = CString::new("/nonexistent/dir/x.lattice").unwrap();
        assert_eq!(gca_lattice_load(missing.as_ptr(), &mut lat), GcaStatus::Io);

        let mut params = gca_engine_params_default();
        params.c = 5.0;
        assert_eq!(gca_lattice_new(5, 5, 0.4, 1, &mut lat), GcaStatus::Ok);
        let mut eng = ptr::null_mut();
        assert_eq!(gca_engine_new(lat, &params, &mut eng), GcaStatus::Config);

        gca_lattice_free(lat);

        let mut achieved = 0.0;
        assert_eq!(gca_lattice_new(60, 60, 0.4, 1, &mut lat), GcaStatus::Ok);
        assert_eq!(gca_lattice_place_particles(lat, 1.2, 0.9, 1, &mut achieved), GcaStatus::Placement);
        assert!(last_error().contains("achieved"));
        gca_lattice_free(lat);
        gca_lattice_free(ptr::null_mut());
        gca_engine_free(ptr::null_mut());
    }
}

#[test]
fn engine_runs_deterministically() {
    unsafe {
        let mut params = gca_engine_params_default();
        params.rng_seed = 9;
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut lat = ptr::null_mut();
            assert_eq!(gca_lattice_voronoi(60, 60, 0.4, 40, 3, &mut lat), GcaStatus::Ok);
            let mut achieved = 0.0;
            assert_eq!(gca_lattice_place_particles(lat, 1.2, 0.05, 4, &mut achieved), GcaStatus::Ok);
            assert!((achieved - 0.05).abs() <= 0.005);

            let mut eng = ptr::null_mut();
            assert_eq!(gca_engine_new(lat, &params, &mut eng), GcaStatus::Ok);
            let mut report = GcaStepReport::default();
            assert_eq!(gca_engine_step(eng, 50, &mut report), GcaStatus::Ok);
            assert_eq!(report.cas, 50);

            let mut after = ptr::null_mut();
            assert_eq!(gca_engine_lattice(eng, &mut after), GcaStatus::Ok);
            let (mut before_s, mut after_s) = (GcaGrainStats::default(), GcaGrainStats::default());
            gca_lattice_stats(lat, &mut before_s);
            gca_lattice_stats(after, &mut after_s);
            assert!(after_s.grain_count < before_s.grain_count);
            assert_eq!(after_s.particle_fraction, before_s.particle_fraction);

            let mut cells = vec![0u32; 3600];
            gca_lattice_copy_cells(after, cells.as_mut_ptr(), 3600);
            runs.push(cells);
            gca_lattice_free(after);
            gca_engine_free(eng);
            gca_lattice_free(lat);
        }
        assert_eq!(runs[0], runs[1]);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.lattice").to_str().unwrap()).unwrap();
    unsafe {
        let mut lat = ptr::null_mut();
        gca_lattice_voronoi(12, 9, 0.4, 5, 1, &mut lat);
        assert_eq!(gca_lattice_save(lat, path.as_ptr()), GcaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(gca_lattice_load(path.as_ptr(), &mut back), GcaStatus::Ok);
        let (mut a, mut b) = (vec![0u32; 108], vec![0u32; 108]);
        gca_lattice_copy_cells(lat, a.as_mut_ptr(), 108);
        gca_lattice_copy_cells(back, b.as_mut_ptr(), 108);
        assert_eq!(a, b);
        let mut copy = ptr::null_mut();
        assert_eq!(gca_lattice_clone(back, &mut copy), GcaStatus::Ok);
        gca_lattice_free(copy);
        gca_lattice_free(back);
        gca_lattice_free(lat);
    }
}

#[test]
fn zener_fit_through_abi() {
    let f = [0.01, 0.025, 0.05, 0.1];
    let d: Vec<f64> = f.iter().map(|x: &f64| 2.8 * 2.0 / x.powf(0.23)).collect();
    let mut fit = GcaZenerFit::default();
    unsafe {
        assert_eq!(gca_fit_zener(f.as_ptr(), d.as_ptr(), 4, 2.8, &mut fit), GcaStatus::Ok);
        assert!((fit.k - 2.0).abs() < 1e-9 && (fit.n - 0.23).abs() < 1e-9);
        assert_eq!(gca_fit_zener(f.as_ptr(), d.as_ptr(), 1, 2.8, &mut fit), GcaStatus::Fit);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/grainca.h")).unwrap();
    for name in [
        "typedef struct GcaLattice GcaLattice;",
        "typedef struct GcaEngine GcaEngine;",
        "GCA_STATUS_OK = 0",
        "gca_last_error(void)",
        "gca_engine_params_default(void)",
        "gca_lattice_voronoi(",
        "gca_lattice_place_particles(",
        "gca_lattice_free(",
        "gca_cell_energy(",
        "gca_delta_energy(",
        "gca_pins(",
        "gca_lattice_stats(",
        "gca_engine_new(",
        "gca_engine_step(",
        "gca_engine_free(",
        "gca_fit_zener(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
