use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cutagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutagg")).args(args).output().expect("binary runs")
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out, "--quiet"];
    args.extend_from_slice(extra);
    cutagg(&args)
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn rerun_reproduces_every_artifact() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--scenario", "popcorn2d", "--res", "20", "--steps", "4", "--dump-map", "--dump-mesh"];
    assert!(run_into(a.path(), &flags).status.success());
    assert!(run_into(b.path(), &flags).status.success());
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert!(fa.iter().any(|(n, _)| n == "metrics.csv"));
    assert!(fa.iter().any(|(n, _)| n == "mesh_step4.json"));
    assert!(fa.iter().any(|(n, _)| n == "map_step2_A.dot"));
    // config.json records the output path, which differs
    let strip = |f: Vec<(String, Vec<u8>)>| f.into_iter().filter(|(n, _)| n != "config.json").collect::<Vec<_>>();
    assert_eq!(strip(fa), strip(fb));
}

#[test]
fn rank_sweep_gives_identical_maps() {
    for scenario in ["vanishing-sphere", "colliding-spheres", "popcorn2d"] {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for ranks in ["1", "2", "4", "8"] {
            let dir = tempfile::tempdir().unwrap();
            let (res, steps) = if scenario == "colliding-spheres" { ("32x16", "12") } else { ("16", "6") };
            let out = run_into(
                dir.path(),
                &["--scenario", scenario, "--res", res, "--steps", steps, "--ranks", ranks, "--dump-map"],
            );
            assert!(out.status.success(), "{scenario} ranks {ranks}: {}", String::from_utf8_lossy(&out.stderr));
            let maps: Vec<_> = artifacts(dir.path())
                .into_iter()
                .filter(|(n, _)| n.starts_with("map_step") && n.ends_with(".json"))
                .collect();
            assert!(!maps.is_empty());
            match &reference {
                None => reference = Some(maps),
                Some(r) => assert!(r == &maps, "{scenario}: ranks {ranks} differs"),
            }
        }
    }
}

#[test]
fn invalid_parameters_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_into(dir.path(), &["--degree", "9"]).status.code(), Some(2));
    assert_eq!(run_into(dir.path(), &["--res", "4", "--ranks", "5"]).status.code(), Some(2));
    assert_eq!(run_into(dir.path(), &["--scenario", "torus", "--res", "8x8"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scenario": "plane", "colour": 3}"#).unwrap();
    assert_eq!(cutagg(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn fast_interface_trips_the_speed_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--res", "30", "--steps", "2"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            r#"{{"scenario": "plane", "res": [8, 8], "degree": 2, "alpha": 0.3, "mode": "static",
                "steps": 2, "ranks": 2, "depth": 4, "out": {:?}, "seed": 7}}"#,
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = cutagg(&["run", "--config", cfg.to_str().unwrap(), "--alpha", "0.5", "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = fs::read_to_string(out_dir.join("config.json")).unwrap();
    assert!(written.contains("\"alpha\": 0.5"));
    assert!(written.contains("\"degree\": 2"));
}

#[test]
fn compare_reports_and_asserts_trends() {
    let dir = tempfile::tempdir().unwrap();
    let (lo, hi) = (dir.path().join("lo"), dir.path().join("hi"));
    let base = ["--res", "30", "--steps", "20", "--mode", "static"];
    let mut a = base.to_vec();
    a.extend(["--alpha", "0"]);
    let mut b = base.to_vec();
    b.extend(["--alpha", "0.3"]);
    assert!(run_into(&lo, &a).status.success());
    assert!(run_into(&hi, &b).status.success());
    let (lo_csv, hi_csv) = (lo.join("metrics.csv"), hi.join("metrics.csv"));
    let (lo_csv, hi_csv) = (lo_csv.to_str().unwrap(), hi_csv.to_str().unwrap());

    let same = cutagg(&["compare", lo_csv, lo_csv, "--assert-trend", "a-ge-b"]);
    assert!(same.status.success());
    assert!(String::from_utf8_lossy(&same.stdout).contains("max ratio 1.000000e0"));

    let spread = cutagg(&["compare", lo_csv, hi_csv]);
    assert!(spread.status.success());
    let text = String::from_utf8_lossy(&spread.stdout).into_owned();
    let max: f64 = text.lines().find_map(|l| l.strip_prefix("max ratio ")).unwrap().parse().unwrap();
    assert!(max >= 1e2, "{text}");

    assert_eq!(cutagg(&["compare", lo_csv, hi_csv, "--assert-trend", "a-le-b"]).status.code(), Some(5));
}
