use ckam::config::{load_config, Command};
use ckam::detector::{Classification, DetectorConfig, Formulation};
use ckam::dynamics::MassRatio;
use ckam::foliation::Plane;
use ckam::output::{scan_csv, write_outputs, SCAN_CSV_HEADER};
use ckam::scan::{run_scan, PlaneSeedSpec, ScanSettings};
use proptest::prelude::*;

fn grid(plane: Plane, mu: f64, n: usize) -> PlaneSeedSpec {
    PlaneSeedSpec {
        plane,
        r_range: [0.1, 4.0],
        l_range: [-2.5, 2.5],
        n_r: n,
        n_l: n,
        mu: MassRatio::new(mu).unwrap(),
    }
}

fn settings(formulation: Formulation, t_out: f64) -> ScanSettings {
    ScanSettings {
        detector: DetectorConfig {
            t_out,
            formulation,
            ..DetectorConfig::default()
        },
        ..ScanSettings::default()
    }
}

#[test]
fn pi_plane_mirrors_zero_plane_with_swapped_masses() {
    // A half turn maps the P_pi plane for mu onto P_0 for 1 - mu.
    for formulation in [Formulation::General, Formulation::Symmetric] {
        let s = settings(formulation, 20.0);
        let a = run_scan(&grid(Plane::Pi, 0.1, 20), &s).unwrap();
        let b = run_scan(&grid(Plane::Zero, 0.9, 20), &s).unwrap();
        let agree = a
            .cells
            .iter()
            .zip(&b.cells)
            .filter(|(x, y)| x.classification == y.classification)
            .count();
        assert_eq!(agree, 400, "{formulation}");
    }
}

#[test]
fn nonexistence_grows_with_timeout() {
    let spec = grid(Plane::Zero, 0.1, 16);
    let short = run_scan(&spec, &settings(Formulation::General, 10.0)).unwrap();
    let long = run_scan(&spec, &settings(Formulation::General, 30.0)).unwrap();
    for (a, b) in short.cells.iter().zip(&long.cells) {
        if a.is_nonexistence() {
            assert!(b.is_nonexistence());
            assert_eq!(a.t_detect, b.t_detect);
        }
    }
    assert!(long.count(Classification::Nonexistence) > short.count(Classification::Nonexistence));
}

#[test]
fn both_is_never_weaker_than_either_formulation() {
    let spec = grid(Plane::Zero, 0.1, 12);
    let g = run_scan(&spec, &settings(Formulation::General, 15.0)).unwrap();
    let s = run_scan(&spec, &settings(Formulation::Symmetric, 15.0)).unwrap();
    let both = run_scan(&spec, &settings(Formulation::Both, 15.0)).unwrap();
    for k in 0..spec.len() {
        let (g, s, b) = (&g.cells[k], &s.cells[k], &both.cells[k]);
        assert_eq!(b.is_nonexistence(), g.is_nonexistence() || s.is_nonexistence(), "cell {k}");
        if b.is_nonexistence() {
            let earliest = [g.t_detect, s.t_detect].into_iter().flatten().fold(f64::INFINITY, f64::min);
            assert_eq!(b.t_detect, Some(earliest));
        }
    }
}

#[test]
fn integrable_case_has_no_detections_off_the_resonant_circles() {
    let spec = PlaneSeedSpec {
        r_range: [1.5, 3.5],
        l_range: [0.5, 1.2],
        ..grid(Plane::Zero, 0.0, 8)
    };
    let res = run_scan(&spec, &settings(Formulation::Both, 40.0)).unwrap();
    for (i, j, r, l, o) in res.iter_cells() {
        if (r - l * l).abs() > 0.3 {
            assert!(!o.is_nonexistence(), "cell ({i}, {j}) r={r} L={l}");
        }
    }
}

#[test]
fn reference_recipe_writes_all_outputs() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../recipes/mu0.1_p0_general.toml");
    let mut cfg = load_config(std::path::Path::new(path)).unwrap();
    assert_eq!(cfg.command, Command::Scan);
    let dir = tempfile::tempdir().unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    cfg.grid.n_r = 6;
    cfg.grid.n_l = 5;
    cfg.t_out = 5.0;
    let res = run_scan(&cfg.seed_spec(), &cfg.scan_settings()).unwrap();
    let written = write_outputs(&res, &cfg).unwrap();
    assert!(written.len() >= 3);
    for p in &written {
        assert!(p.exists(), "{}", p.display());
    }
    let csv = scan_csv(&res);
    assert_eq!(csv.lines().next(), Some(SCAN_CSV_HEADER));
    assert_eq!(csv.lines().count(), 31);
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 16,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn grid_index_round_trips(n_r in 1usize..50, n_l in 1usize..50, k in 0usize..2500) {
        let spec = PlaneSeedSpec { n_r, n_l, ..grid(Plane::Zero, 0.1, 1) };
        let k = k % spec.len();
        let (i, j) = spec.coords(k);
        prop_assert_eq!(spec.index(i, j), k);
        prop_assert!(spec.r_at(i) > 0.1 && spec.r_at(i) < 4.0);
        prop_assert!(spec.l_at(j) > -2.5 && spec.l_at(j) < 2.5);
    }

    #[test]
    fn worker_count_does_not_change_results(workers in 1usize..5) {
        let spec = grid(Plane::Zero, 0.1, 6);
        let mut s = settings(Formulation::Both, 5.0);
        let serial = run_scan(&spec, &ScanSettings { workers: Some(1), ..s }).unwrap();
        s.workers = Some(workers);
        let parallel = run_scan(&spec, &s).unwrap();
        prop_assert_eq!(serial.cells, parallel.cells);
    }
}
