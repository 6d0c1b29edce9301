use std::path::Path;
use std::process::{Command, Output};

fn henon_lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_henon-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses the `g` column of each data row.
fn green_column(o: &Output) -> Vec<f64> {
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,y1,x2,y2,g_plus,g_minus,g,error_bound"));
    lines.map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect()
}

#[test]
fn green_vanishes_at_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    // (z, w) ↦ (z² − w, z) fixes the origin
    let o = henon_lab(dir.path(), &["green", "--map", "quadratic:0,0,1,0", "--point", "0,0,0,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(green_column(&o), vec![0.0]);

    // both fixed points of the reference map, plus the origin, which is not fixed
    let o = henon_lab(
        dir.path(),
        &["green", "--map", "reference", "--point", "0.5,-0.5,0.5,-0.5", "--point", "-0.5,0.5,-0.5,0.5", "--point", "0,0,0,0"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let g = green_column(&o);
    assert_eq!(&g[..2], &[0.0, 0.0]);
    assert!(g[2] > 0.0 && g[2] < 0.05, "{g:?}");
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"version": 1, "gird": {"resolution": 16}}"#).unwrap();
    let o = henon_lab(dir.path(), &["--config", "bad.json", "build-measure"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("E:config"), "{}", stderr(&o));

    std::fs::write(dir.path().join("old.json"), r#"{"version": 7}"#).unwrap();
    let o = henon_lab(dir.path(), &["--config", "old.json", "calibrate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("E:config"));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["green", "--point", "1,2,3"],
        &["--threads", "0", "calibrate"],
        &["render-julia", "--slice", "x=0"],
    ] {
        let o = henon_lab(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).starts_with("E:config"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn render_writes_binary_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let o = henon_lab(dir.path(), &["--out", "img", "render-julia", "--slice", "w=0", "--res", "512"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(dir.path().join("img/julia_plus_512.pgm")).unwrap();
    let header = b"P5 512 512 255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 512 * 512);
}

#[test]
fn cached_fields_reproduce_the_cold_measure() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = serde_json::json!({
        "version": 1,
        "grid": {"resolution": 16, "radius": 2.6},
        "output": {"dir": "out", "cache": cache},
    });
    std::fs::write(dir.path().join("c.json"), cfg.to_string()).unwrap();
    let cold = henon_lab(dir.path(), &["--config", "c.json", "--out", "cold", "build-measure"]);
    assert!(cold.status.success(), "{}", stderr(&cold));
    let cached = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(cached, 2, "one file per Green function");
    let warm = henon_lab(dir.path(), &["--config", "c.json", "--out", "warm", "build-measure"]);
    assert!(warm.status.success(), "{}", stderr(&warm));
    for f in ["measure.bin", "measure.json"] {
        let a = std::fs::read(dir.path().join("cold").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("warm").join(f)).unwrap();
        assert!(a == b, "{f} differs between cold and cached runs");
    }
}

#[test]
fn runtime_failures_are_prefixed_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // too coarse a grid for the nested sublevel sets of the extended observables
    let cfg = r#"{"version": 1, "grid": {"resolution": 16, "radius": 2.6}, "lags": [0, 2]}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let o = henon_lab(dir.path(), &["--config", "c.json", "correlate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("E:run"), "{}", stderr(&o));
}
