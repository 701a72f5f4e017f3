use std::fs;
use std::path::Path;

use phaseless::interface::cli::{main_with_args, EXIT_NUMERICAL, EXIT_OK, EXIT_RESOURCE, EXIT_USAGE};
use phaseless::interface::fieldfile::{read_plane_data, read_real};
use phaseless::interface::intensity_csv::read_intensity_file;
use phaseless::interface::summary::summary_file;
use serde_json::{json, Value};

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["phaseless"];
    v.extend_from_slice(args);
    main_with_args(v)
}

/// A small geometry that runs the whole chain in seconds.
fn tiny_config(spheres: Value) -> Value {
    json!({
        "geometry": {
            "omega_min": [-1.0, -1.0, -1.5],
            "omega_max": [1.0, 1.0, 0.5],
            "plane_z": 6.0,
            "half_width": 1.0,
            "plane_counts": [16, 16]
        },
        "band": {"k_low": 4.0, "k_high": 5.0, "intervals": 4},
        "phantom": {"spheres": spheres},
        "solver": {"points_per_wavelength": 6.0},
        "pipeline": {"seed": 7}
    })
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(summary_file(command))).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["bound", "--threads", "zero"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    fs::write(&cfg, "").unwrap();
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap()]), EXIT_USAGE);
    assert_eq!(run(&["bound", "--k-scale", "3"]), EXIT_USAGE);
}

#[test]
fn bound_succeeds_and_writes_summary_on_request() {
    assert_eq!(run(&["bound"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bound", "--out", dir.path().to_str().unwrap()]), EXIT_OK);
    let s = summary(dir.path(), "bound");
    assert!((s["results"]["one_sphere"].as_f64().unwrap() - 0.0370).abs() < 5e-4);
    assert!((s["results"]["two_spheres"].as_f64().unwrap() - 0.1479).abs() < 5e-4);
}

#[test]
fn reference_scale_simulation_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--out", dir.path().to_str().unwrap()]), EXIT_RESOURCE);
}

#[test]
fn tight_iteration_cap_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(json!([{"center": [0.0, 0.0, -0.5], "radius": 0.45, "amplitude": 1.0}]));
    cfg["solver"]["max_iter"] = json!(1);
    cfg["solver"]["tol"] = json!(1e-12);
    let c = write_config(dir.path(), &cfg);
    assert_eq!(
        run(&["simulate", "--config", &c, "--out", dir.path().to_str().unwrap()]),
        EXIT_NUMERICAL
    );
}

#[test]
fn vacuum_simulation_and_export_give_unit_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let c = write_config(dir.path(), &tiny_config(json!([])));
    assert_eq!(run(&["simulate", "--config", &c, "--out", out]), EXIT_OK);
    let f = read_intensity_file(&dir.path().join("intensity.csv"), 6.0).unwrap();
    assert_eq!(f.ks().len(), 5);
    assert!(f.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));

    let field = dir.path().join("measured_field.psf");
    assert_eq!(
        run(&[
            "export",
            "--input",
            field.to_str().unwrap(),
            "--axis",
            "2",
            "--index",
            "0",
            "--out",
            out
        ]),
        EXIT_OK
    );
    let csv = fs::read_to_string(dir.path().join("measured_field_axis2_0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv
        .lines()
        .flat_map(|l| l.split(','))
        .all(|v| (v.parse::<f64>().unwrap() - 1.0).abs() < 1e-14));

    assert_eq!(
        run(&[
            "export",
            "--input",
            field.to_str().unwrap(),
            "--index",
            "0",
            "--format",
            "pgm",
            "--out",
            out
        ]),
        EXIT_OK
    );
    assert!(dir.path().join("measured_field_axis2_0.pgm.minmax.txt").exists());
    assert_eq!(
        run(&[
            "export",
            "--input",
            field.to_str().unwrap(),
            "--index",
            "9",
            "--out",
            out
        ]),
        EXIT_USAGE
    );
}

#[test]
fn chained_commands_and_pipeline_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = tiny_config(json!([{"center": [0.0, 0.0, -0.5], "radius": 0.45, "amplitude": 0.3}]));
    let c = write_config(dir.path(), &cfg);
    assert_eq!(run(&["simulate", "--config", &c, "--out", out]), EXIT_OK);
    assert_eq!(run(&["retrieve", "--config", &c, "--out", out]), EXIT_OK);
    assert_eq!(run(&["propagate", "--config", &c, "--out", out]), EXIT_OK);
    assert_eq!(run(&["reconstruct", "--config", &c, "--out", out]), EXIT_OK);
    let retrieved = read_plane_data(&dir.path().join("retrieved.psf")).unwrap();
    assert_eq!(retrieved.ks().len(), 5);
    let boundary = read_plane_data(&dir.path().join("boundary.psf")).unwrap();
    assert_eq!(boundary.plane().z, 0.5);
    let chained = read_real(&dir.path().join("c.psf")).unwrap();
    assert!(chained.values().iter().all(|&v| (1.0..=6.0).contains(&v)));
    let log = fs::read_to_string(dir.path().join("iterations.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["n"], json!(1));
    assert_eq!(first["i"], json!(1));

    let dir2 = tempfile::tempdir().unwrap();
    let out2 = dir2.path().to_str().unwrap();
    assert_eq!(run(&["pipeline", "--config", &c, "--out", out2]), EXIT_OK);
    let piped = read_real(&dir2.path().join("c.psf")).unwrap();
    // the chain rounds data through CSV and PSF1 losslessly
    assert_eq!(chained.values(), piped.values());
}

#[test]
fn writers_are_deterministic_and_config_is_echoed() {
    let cfg = tiny_config(json!([{"center": [0.2, 0.0, -0.5], "radius": 0.45, "amplitude": 0.3}]));
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let c = write_config(dir.path(), &cfg);
        assert_eq!(
            run(&[
                "pipeline",
                "--config",
                &c,
                "--out",
                dir.path().to_str().unwrap(),
                "--noise",
                "0.01"
            ]),
            EXIT_OK
        );
        dirs.push(dir);
    }
    for name in [
        "intensity.csv",
        "retrieved.psf",
        "retrieved.psf.meta.json",
        "c.psf",
        "n_rel.psf",
        "iterations.jsonl",
        &summary_file("pipeline"),
    ] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between identical runs");
    }
    let s = summary(dirs[0].path(), "pipeline");
    assert_eq!(s["config"], cfg);
    assert_eq!(s["overrides"], json!({"noise": 0.01}));
    assert_eq!(s["resolved_config"]["pipeline"]["noise"], json!(0.01));
    assert_eq!(s["resolved_config"]["pipeline"]["seed"], json!(7));
    for key in ["n_star", "n_comp", "history", "clamp_fraction", "peak_location"] {
        assert!(!s["results"][key].is_null(), "missing {key}");
    }
}
