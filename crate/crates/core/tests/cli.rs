use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde_json::Value;

use gfmsat::scenario::{emit_scenario, fixture_names, load_scenario, parse_scenario_str};

fn gfmsat(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gfmsat"));
    cmd.args(args).env_remove("GFMSAT_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("GFMSAT_OUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn json_stdout(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn simulate_writes_reports_to_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    for (strategy, expected) in [
        ("saturation-informed", "STABLE"),
        ("conventional-with-limiter", "UNSTABLE-ANGLE-DRIFT"),
    ] {
        let o = gfmsat(&["simulate", "--scenario", "case1-single", "--strategy", strategy], Some(dir.path()));
        let v = json_stdout(&o);
        assert_eq!(v["verdict"]["classification"], expected);
        assert_eq!(v["matches_expected"], Value::Bool(true));
        let stem = format!("case1-single-{strategy}");
        let verdict: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{stem}.verdict.json"))).unwrap()).unwrap();
        assert_eq!(verdict, v);
        let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{stem}.run.json"))).unwrap()).unwrap();
        assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(meta["scenario"]["converters"][0]["strategy"], strategy);
        assert!(meta["defaults_applied"].as_array().unwrap().iter().any(|d| d["pointer"] == "/solver/settle_time"));
        let csv = fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
        assert!(csv.starts_with("t,"));
        assert_eq!(csv.lines().count(), 6001 + 1);
    }
}

#[test]
fn out_flag_takes_precedence_over_env() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = gfmsat(
        &["simulate", "--scenario", "case1-single", "--t-end", "4.5", "--dt", "5e-4", "--out", flag_dir.path().to_str().unwrap()],
        Some(env_dir.path()),
    );
    assert_eq!(code(&o), 0);
    assert!(flag_dir.path().join("case1-single.csv").exists());
    assert_eq!(fs::read_dir(env_dir.path()).unwrap().count(), 0);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = gfmsat(&["simulate", "--scenario", "case2-three-converter", "--t-end", "4.5", "--dt", "2e-4"], Some(d.path()));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn classify_reproduces_simulate_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let sim = json_stdout(&gfmsat(&["simulate", "--scenario", "case3-ieee9", "--strategy", "conventional-with-limiter"], Some(dir.path())));
    let log = dir.path().join("case3-ieee9-conventional-with-limiter.csv");
    let cls = json_stdout(&gfmsat(&["classify", "--log", log.to_str().unwrap(), "--scenario", "case3-ieee9"], None));
    // The log stores 12 significant digits.
    let (a, b) = (&cls["verdict"], &sim["verdict"]);
    for k in ["classification", "drift_time", "recovered_to_prefault"] {
        assert_eq!(a[k], b[k], "{k}");
    }
    for k in ["max_angle_excursion", "final_frequency_error"] {
        assert!((a[k].as_f64().unwrap() - b[k].as_f64().unwrap()).abs() < 1e-9, "{k}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(code(&gfmsat(&["simulate", "--scenario", "/no/such/file.json"], None)), 4);
    assert_eq!(code(&gfmsat(&["frobnicate"], None)), 2);
    assert_eq!(code(&gfmsat(&["simulate", "--scenario", "case1-single", "--dt", "-1"], None)), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut doc: Value = serde_json::from_str(gfmsat::scenario::fixture("case1-single").unwrap().source).unwrap();
    doc["converters"][0]["eta"] = Value::String("fast".into());
    fs::write(&bad, doc.to_string()).unwrap();
    let o = gfmsat(&["equilibrium", "--scenario", bad.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/converters/0/eta"));

    // Unwritable output directory: a regular file stands in its place.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let o = gfmsat(&["simulate", "--scenario", "case1-single", "--out", blocker.join("x").to_str().unwrap()], None);
    assert_eq!(code(&o), 4);
}

#[test]
fn equilibrium_without_gain_or_setpoint_reports_nonexistence() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(gfmsat::scenario::fixture("case1-single").unwrap().source).unwrap();
    let c = &mut doc["converters"][0];
    c["alpha"] = 0.0.into();
    c["p_star"] = 0.0.into();
    c["q_star"] = 0.0.into();
    c["frt_overrides"] = Value::Null;
    let path = dir.path().join("zero.json");
    fs::write(&path, doc.to_string()).unwrap();
    let v = json_stdout(&gfmsat(&["equilibrium", "--scenario", path.to_str().unwrap(), "--grid-voltage", "0.3"], None));
    assert_eq!(v["solution"]["exists"], Value::Bool(false));
}

/// Eigenvalues of a real symmetric 3×3 matrix by the trigonometric
/// closed form, ascending.
fn sym3_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [lo, 3.0 * q - hi - lo, hi]
}

#[test]
fn multi_converter_strength_matches_hand_reduction() {
    let v = json_stdout(&gfmsat(&["stability", "--scenario", "case2-three-converter", "--condition", "multi"], None));
    let spec = load_scenario("case2-three-converter").unwrap().spec;
    let z = |id: &str| spec.network.branches.iter().find(|b| b.id == id).unwrap().z;
    let y: Vec<Complex64> = ["line1", "line2", "line3"].iter().map(|l| 1.0 / z(l)).collect();
    let y_tie = 1.0 / z("tie");
    let total: Complex64 = y.iter().sum::<Complex64>() + y_tie;
    // Star network: eliminating the coupling node gives diag(y) − y·yᵀ/Σ.
    let y_c = Matrix3::from_fn(|i, j| if i == j { y[i] } else { Complex64::new(0.0, 0.0) } - y[i] * y[j] / total);
    let z_v = spec.converters[0].config.z_v;
    let aug = y_c * (Matrix3::identity().map(|x: f64| Complex64::new(x, 0.0)) + y_c * z_v).try_inverse().unwrap();
    let rot = Complex64::from_polar(1.0, spec.converters[0].config.varphi);
    let m = aug.map(|x| (rot * x).re);
    let sym = (m + m.transpose()) / 2.0;
    let gscr = sym3_eigenvalues(&sym)[0];
    let report = &v["report"];
    assert!((report["network_strength"].as_f64().unwrap() - gscr).abs() < 1e-9);
    let rho = spec
        .converters
        .iter()
        .map(|c| (rot * Complex64::new(c.config.p_star, -c.config.q_star)).re)
        .fold(f64::NEG_INFINITY, f64::max);
    let lhs = rho + spec.converters[0].config.alpha;
    assert!((report["lhs"].as_f64().unwrap() - lhs).abs() < 1e-9);
    assert!((report["margin"].as_f64().unwrap() - (gscr - lhs)).abs() < 1e-9);
}

#[test]
fn microgrid_condition_reports_connectivity() {
    let v = json_stdout(&gfmsat(
        &["stability", "--scenario", "case3-ieee9", "--condition", "microgrid", "--delta-bar", "0.4", "--mu-bar", "0.5"],
        None,
    ));
    let r = &v["report"];
    let lambda2 = r["network_strength"].as_f64().unwrap();
    assert!(lambda2 > 0.0);
    let pre = (1.0 + 0.4f64.cos()) * 0.25 / 2.0;
    assert!((r["rhs"].as_f64().unwrap() - pre * lambda2).abs() < 1e-9 * lambda2.max(1.0));
    assert_eq!(code(&gfmsat(&["stability", "--scenario", "case3-ieee9", "--condition", "microgrid"], None)), 2);
}

#[test]
fn fixtures_round_trip_through_canonical_json() {
    for name in fixture_names() {
        let a = load_scenario(name).unwrap().spec;
        let text = emit_scenario(&a);
        let b = parse_scenario_str(&text).unwrap();
        assert_eq!(a, b.spec, "{name}");
        assert!(b.provenance.is_empty(), "{name}: canonical form needs no defaults");
        assert_eq!(emit_scenario(&b.spec), text);
    }
}
