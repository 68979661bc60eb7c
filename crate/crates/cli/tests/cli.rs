//! End-to-end runs of the `interlace` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn interlace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interlace"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

fn summary_value(dir: &Path, key: &str) -> String {
    read(dir, "summary.txt")
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in summary"))
}

const CHEAP: &str = "scaling_exponents,inequalities,gf_sum";

#[test]
fn checks_are_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = interlace(a.path(), &["checks", "--only", CHEAP, "--jobs", "1", "--seed", "7"]);
    let ob = interlace(b.path(), &["checks", "--only", CHEAP, "--jobs", "2", "--seed", "7"]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(ob.status.success(), "{}", String::from_utf8_lossy(&ob.stderr));
    assert_eq!(read(a.path(), "checks.csv"), read(b.path(), "checks.csv"));
}

#[test]
fn copied_config_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = interlace(a.path(), &["capacity", "--dim", "3", "--anchors", "ball:1", "--seed", "11", "--walkers", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "seed.txt", "version.txt", "summary.txt", "capacity.csv"] {
        assert!(a.path().join(f).exists(), "missing {f}");
    }
    assert_eq!(read(a.path(), "seed.txt").trim(), "11");
    assert!(read(a.path(), "version.txt").starts_with('v'));
    let cfg = a.path().join("config.toml");
    let o = interlace(b.path(), &["capacity", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(a.path(), "capacity.csv"), read(b.path(), "capacity.csv"));
    assert_eq!(read(a.path(), "equilibrium.csv"), read(b.path(), "equilibrium.csv"));
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlace(dir.path(), &["green", "--dim", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("general.d"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[general]\nu = \"lots\"\n").unwrap();
    let o = interlace(dir.path(), &["green", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("general.u"));

    let o = interlace(dir.path(), &["green", "--set", "green.nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn unknown_check_id_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlace(dir.path(), &["checks", "--only", "no_such_check"]);
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn capacity_of_a_point_matches_one_over_g0() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlace(dir.path(), &["capacity", "--dim", "5", "--anchors", "point", "--walkers", "50000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let var: f64 = summary_value(dir.path(), "variational").parse().unwrap();
    let mc: f64 = summary_value(dir.path(), "escape_mc").parse().unwrap();
    let se: f64 = summary_value(dir.path(), "escape_mc_stderr").parse().unwrap();
    // g(0) for d = 5
    let exact = 1.0 / 1.156_308_1;
    assert!((var - exact).abs() < 1e-5, "variational {var}");
    assert!((mc - exact).abs() <= 3.0 * se, "mc {mc} +- {se}");
}

/// `E N_A = u cap(A)` is linear in `u`.
#[test]
fn sweep_over_u_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlace(
        dir.path(),
        &["sweep", "--target", "sample", "--param", "general.u", "--values", "0.5,1,2", "--dim", "5", "--anchors", "ball:1", "--window", "3", "--eps", "0.05", "--replicas", "400"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "sweep.csv");
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    let (iu, im, is, ie) = (col("general.u"), col("mean_n"), col("stderr_n"), col("expected_n"));
    let rows: Vec<[f64; 4]> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [iu, im, is, ie].map(|i| f[i].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    for dir_k in 0..3 {
        assert!(dir.path().join(format!("cell_{dir_k}")).join("config.toml").exists());
    }
    let per_u = rows[0][3] / rows[0][0];
    for [u, m, se, expected] in rows {
        assert!((expected - per_u * u).abs() <= 1e-12 * expected, "expected count not linear at u={u}");
        assert!((m - expected).abs() <= 3.0 * se, "u={u}: mean {m} vs {expected} +- {se}");
    }
}

/// The default run covers every check; a failing check makes it exit 3 and
/// name the first failing id.
#[test]
fn default_checks_emit_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = interlace(dir.path(), &["checks"]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    let reports: usize = summary_value(dir.path(), "reports").parse().unwrap();
    let passed: usize = summary_value(dir.path(), "passed").parse().unwrap();
    assert!(reports >= 10, "{reports} reports");
    let csv = read(dir.path(), "checks.csv");
    if passed == reports {
        assert!(o.status.success(), "{stderr}");
    } else {
        assert_eq!(o.status.code(), Some(3), "{stderr}");
        let id = stderr.lines().last().and_then(|l| l.strip_prefix("check failed: ")).expect("failing id on stderr");
        assert!(csv.contains(id));
    }
}
