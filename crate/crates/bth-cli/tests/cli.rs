//! End-to-end runs of the `bth` binary.

use std::path::Path;
use std::process::{Command, Output};

use bth_cli::Record;

fn bth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bth")).args(args).output().expect("bth runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(path: &Path) -> Vec<Record> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn even_lattice_is_a_config_error() {
    let o = bth(&["verify", "--P", "30", "--suite", "roots"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("parity") && e.contains("gcd(P, 2) = 2"), "{e}");
}

#[test]
fn lattice_sharing_a_factor_with_n_is_a_config_error() {
    let o = bth(&["roots", "--P", "33", "--N", "3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gcd"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_and_bad_config_file_exit_2() {
    assert_eq!(code(&bth(&["verify", "--suite", "nonsense"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"N": 2, "colour": "red"}"#).unwrap();
    assert_eq!(code(&bth(&["verify", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn gamma_suite_passes_and_reports_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.jsonl");
    let o = bth(&["verify", "--suite", "gamma-exact", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rs = records(&report);
    assert_eq!(rs.len(), 16);
    assert!(rs.iter().all(|r| r.pass && r.check == "gamma-exact"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("16 of 16 checks passed"));
}

#[test]
fn config_file_and_flag_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let report = dir.path().join("r.jsonl");
    std::fs::write(&cfg, r#"{"N": 2, "M": 1, "D": 9, "sweep": false, "report": "ignored.jsonl"}"#).unwrap();
    let o = bth(&["verify", "--config", cfg.to_str().unwrap(), "--suite", "roots", "--report", report.to_str().unwrap(), "--D", "11"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rs = records(&report);
    assert_eq!(rs.len(), 2);
    for r in &rs {
        assert_eq!((r.params["N"].as_u64(), r.params["D"].as_u64()), (Some(2), Some(11)));
    }
}

#[test]
fn seeded_reports_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let p = dir.path().join(name);
        let o = bth(&["verify", "--suite", "dressing", "--suite", "roots", "--timings", "false", "--jobs", jobs, "--report", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(p).unwrap()
    };
    let a = run("a.jsonl", "1");
    assert_eq!(a, run("b.jsonl", "1"));
    assert_eq!(a, run("c.jsonl", "3"));
}

#[test]
fn zero_fields_are_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z.csv");
    let o = bth(&[
        "evolve", "--N", "2", "--M", "1", "--flow", "1,0", "--T", "0.5", "--dt", "0.01",
        "--out", out.to_str().unwrap(), "--field_spec.amplitude", "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, "t,site,u_{-1},u_{0},u_{1}");
    let first = &rows[0][2..];
    assert!(rows.iter().all(|r| &r[2..] == first));
    assert_eq!(first, &[1.0, 0.0, 0.0]);
}

#[test]
fn toda_run_conserves_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let report = dir.path().join("r.jsonl");
    let o = bth(&[
        "evolve", "--N", "1", "--M", "1", "--flow", "1,0", "--T", "1", "--dt", "1e-3",
        "--out", out.to_str().unwrap(), "--report", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, "t,site,u_{-1},u_{0}");
    let last_t = rows.last().unwrap()[0];
    assert!((last_t - 1.0).abs() < 1e-12);
    assert_eq!(rows.iter().filter(|r| r[0] == last_t).count(), 31);
    let rs = records(&report);
    assert_eq!(rs.len(), 3);
    assert!(rs.iter().all(|r| r.pass && r.residual.unwrap() <= 1e-8));
}

#[test]
fn divergence_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = bth(&[
        "evolve", "--N", "1", "--M", "1", "--flow", "1,0", "--T", "50", "--dt", "5",
        "--out", out.to_str().unwrap(), "--field_spec.amplitude", "1",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("diverged at step"), "{}", stderr(&o));
}

#[test]
fn out_of_range_flow_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = bth(&["evolve", "--N", "1", "--M", "1", "--flow", "5,0", "--T", "1", "--dt", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn roots_dump_lists_both_roots() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("op.txt");
    let o = bth(&["roots", "--N", "2", "--M", "3", "--dump-op", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text.contains("# L^(1/2) upper") && text.contains("# L^(1/3) lower"));
    let rs: Vec<Record> = String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rs.len(), 2);
    assert!(rs.iter().all(|r| r.pass));
}
