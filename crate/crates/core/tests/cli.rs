use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grainca"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn small_simulation(dir: &Path, extra: &[&str]) -> Output {
    let out = format!("outputs.directory={}", dir.display());
    let mut args = vec![
        "simulate",
        "--set", "grid.width=60",
        "--set", "grid.height=50",
        "--set", "seeding.n_grains=40",
        "--set", "schedule.n_cas=300",
        "--set", "schedule.record_every=50",
        "--set", "outputs.image_every=100",
        "--set", &out,
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "frames"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names.into_iter().filter(|p| p.is_file()) {
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            files.push((name, fs::read(&p).unwrap()));
        }
    }
    files
}

#[test]
fn simulate_emits_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = small_simulation(&a, &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = text(&out.stdout);
    assert!(summary.contains("grain_count = "));
    assert!(summary.contains("particle_fraction = 0.0"));

    let names: Vec<String> = artifacts(&a).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "final.lattice",
            "histogram.csv",
            "kinetics.csv",
            "manifest.txt",
            "frames/cas_000.ppm",
            "frames/cas_100.ppm",
            "frames/cas_200.ppm",
            "frames/cas_300.ppm",
        ]
    );
    let kinetics = fs::read_to_string(a.join("kinetics.csv")).unwrap();
    assert_eq!(kinetics.lines().count(), 1 + 7);
    assert!(kinetics.starts_with("cas,mean_diameter_um,grain_count\n0,"));

    // Rerunning from the manifest alone reproduces every file.
    let manifest = a.join("manifest.txt");
    let out = run(&[
        "simulate",
        "--config",
        manifest.to_str().unwrap(),
        "--set",
        &format!("outputs.directory={}", b.display()),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let (fa, fb) = (artifacts(&a), artifacts(&b));
    assert_eq!(fa.len(), fb.len());
    for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "manifest.txt" {
            assert!(da == db, "{na} differs");
        }
    }
}

#[test]
fn particle_free_zero_steps_reports_initial_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = small_simulation(
        tmp.path(),
        &["--set", "particles.volume_fraction=0", "--set", "schedule.n_cas=0"],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("grain_count = 40"));
    let kinetics = fs::read_to_string(tmp.path().join("kinetics.csv")).unwrap();
    assert_eq!(kinetics.lines().count(), 2);
    assert!(kinetics.lines().nth(1).unwrap().ends_with(",40"));
}

#[test]
fn default_grid_simulation_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--set",
        &format!("outputs.directory={}", tmp.path().display()),
        "--set",
        "schedule.n_cas=200",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    let f: f64 = s
        .lines()
        .find_map(|l| l.strip_prefix("particle_fraction = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((f - 0.05).abs() <= 0.005, "{s}");
    let img = fs::read(tmp.path().join("frames/cas_200.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n300 300\n255\n"));
    assert_eq!(img.len(), 15 + 300 * 300 * 3);
}

#[test]
fn placement_failure_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = small_simulation(tmp.path(), &["--set", "particles.volume_fraction=0.9"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(text(&out.stderr).contains("achieved fraction"));
}

#[test]
fn invalid_config_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "grid.width = 1\nengine.Qq = 3\nsweep.seeds = 0\n").unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = text(&out.stderr);
    for key in ["grid.width", "engine.Qq: unknown key", "sweep.seeds"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn fit_reports_synthetic_power_law() {
    let tmp = tempfile::tempdir().unwrap();
    let fit_csv = tmp.path().join("fit.csv");
    let out = run(&[
        "fit",
        fixture("synthetic_sweep.csv").to_str().unwrap(),
        "-o",
        fit_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("k = 2.000000 n = 0.500000"));
    assert_eq!(
        fs::read_to_string(&fit_csv).unwrap(),
        "r_um,k,n,rms_log_residual\n1.2,2.0,0.5,0.0\n"
    );
}

#[test]
fn fit_names_bad_row_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit",
        fixture("malformed_sweep.csv").to_str().unwrap(),
        "-o",
        tmp.path().join("fit.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    let err = text(&out.stderr);
    assert!(err.contains("line 3, column 3"), "{err}");
}

#[test]
fn single_cell_sweep_has_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--set", &format!("outputs.directory={}", tmp.path().display()),
        "--set", "grid.width=60",
        "--set", "grid.height=60",
        "--set", "seeding.n_grains=30",
        "--set", "sweep.radii_um=1.2",
        "--set", "sweep.fractions=0.05",
        "--set", "sweep.seeds=1",
        "--set", "schedule.n_cas=100",
        "--set", "schedule.record_every=10",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("1.2,0.05,0,"));
    assert!(tmp.path().join("kinetics/r1.2_f0.05_s0.csv").exists());
    // One fraction cannot be fitted; the fit file has only its header.
    assert_eq!(
        fs::read_to_string(tmp.path().join("fit.csv")).unwrap(),
        "r_um,k,n,rms_log_residual\n"
    );
}

#[test]
fn sweep_output_is_worker_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(threads);
        let out = run(&[
            "sweep",
            "--set", &format!("outputs.directory={}", dir.display()),
            "--set", "grid.width=50",
            "--set", "grid.height=50",
            "--set", "seeding.n_grains=25",
            "--set", "sweep.radii_um=0.8,1.2",
            "--set", "sweep.fractions=0.05,0.1",
            "--set", "sweep.seeds=2",
            "--set", "schedule.n_cas=60",
            "--set", "schedule.record_every=20",
            "--set", &format!("runtime.threads={threads}"),
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        tables.push((
            fs::read(dir.join("sweep.csv")).unwrap(),
            fs::read(dir.join("fit.csv")).unwrap(),
        ));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn render_lattice_file() {
    let tmp = tempfile::tempdir().unwrap();
    let lat = tmp.path().join("x.lattice");
    fs::write(&lat, "3 3 0.4\n1 1 0\n2 2 2\n1 1 1\n").unwrap();
    let img = tmp.path().join("x.ppm");
    let out = run(&["render", lat.to_str().unwrap(), img.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let bytes = fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P6\n3 3\n255\n"));
    assert_eq!(bytes.len(), 11 + 27);
    assert_eq!(&bytes[11 + 6..11 + 9], &[0, 0, 0]);

    let out = run(&["render", "/nonexistent.lattice", img.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn defaults_parse_back() {
    let out = run(&["defaults"]);
    assert!(out.status.success());
    let cfg = grainca::config::RunConfig::parse(&text(&out.stdout)).unwrap();
    assert_eq!(cfg, grainca::config::RunConfig::default());
}
