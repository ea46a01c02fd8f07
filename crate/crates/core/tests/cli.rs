use std::path::Path;
use std::process::Command;

use nicsim::cli::{run_cli, EXIT_CONFIG, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["nicsim"];
    full.extend_from_slice(args);
    let code = run_cli(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn gen(dir: &Path, requests: u64) -> String {
    let p = dir.join("t.bin");
    let n = requests.to_string();
    let (code, _, err) = cli(&["gen-trace", "--requests", &n, "--population", "2000", "--out", p.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    p.to_str().unwrap().to_string()
}

const BUNDLE: [&str; 9] =
    ["summary.txt", "config.ini", "latency.csv", "cpi.csv", "regions.csv", "pcie.csv", "power.csv", "elections.csv", "nic.csv"];

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&[]).0, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run"]).0, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).0, EXIT_OK);
}

#[test]
fn minimal_run_writes_the_bundle() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 10);
    let cfg = d.path().join("c.ini");
    std::fs::write(&cfg, "[run]\nname = tiny\n").unwrap();
    let out = d.path().join("out");
    let (code, stdout, err) = cli(&["run", "--config", cfg.to_str().unwrap(), "--trace", &trace, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("requests_completed = 10.000"), "{stdout}");
    for f in BUNDLE {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn odd_core_counts_are_accepted() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 20);
    let out = d.path().join("o");
    let (code, _, err) = cli(&["run", "--trace", &trace, "--set", "core.cores=3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let ini = std::fs::read_to_string(out.join("config.ini")).unwrap();
    assert!(ini.contains("cores = 3"));
}

#[test]
fn bad_inputs_exit_two_without_output() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("never");
    let missing = d.path().join("missing.bin");
    let (code, _, err) = cli(&["run", "--trace", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
    assert!(!out.exists());

    let trace = gen(d.path(), 5);
    for set in ["core.cores=0", "nic.bogus=1", "core.cores=many", "nocolon"] {
        let (code, _, _) = cli(&["run", "--trace", &trace, "--set", set, "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG, "{set}");
        assert!(!out.exists());
    }

    let garbage = d.path().join("g.bin");
    std::fs::write(&garbage, b"not a trace").unwrap();
    let (code, _, _) = cli(&["run", "--trace", garbage.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 300);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for o in [&a, &b] {
        assert_eq!(cli(&["run", "--trace", &trace, "--out", o.to_str().unwrap()]).0, EXIT_OK);
    }
    for f in BUNDLE {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_labels_points_by_cores_and_threads() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 200);
    let out = d.path().join("sw");
    let (code, stdout, err) =
        cli(&["sweep", "--trace", &trace, "--set", "workload.requests=400", "--jobs", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let labels: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["1C/4T", "2C/8T", "4C/16T", "8C/32T", "16C/64T"]);
    assert!(out.join("sweep.csv").is_file());
    assert!(out.join("16C_64T").join("summary.txt").is_file());
    assert_eq!(cli(&["sweep", "--trace", &trace, "--cores", "3"]).0, EXIT_CONFIG);
}

#[test]
fn compare_prints_ratios() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 200);
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    assert_eq!(cli(&["run", "--trace", &trace, "--set", "nic.offload_enable=false", "--out", a.to_str().unwrap()]).0, EXIT_OK);
    assert_eq!(cli(&["run", "--trace", &trace, "--out", b.to_str().unwrap()]).0, EXIT_OK);
    let (code, stdout, _) = cli(&["report", "--compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("latency_mean_ns = "));
    assert!(stdout.contains("requests_completed = 1.000000"));

    // A change outside the offload switches makes the runs incomparable.
    assert_eq!(cli(&["run", "--trace", &trace, "--set", "core.cores=2", "--out", c.to_str().unwrap()]).0, EXIT_OK);
    assert_eq!(cli(&["report", "--compare", a.to_str().unwrap(), c.to_str().unwrap()]).0, EXIT_CONFIG);

    let (code, stdout, _) = cli(&["report", a.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.starts_with("trace_hash = "));
}

#[test]
fn golden_and_table_subcommands() {
    let (code, stdout, _) = cli(&["golden"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("pass"));
    let (code, stdout, _) = cli(&["table1"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("3250 (3250)"));
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_nicsim");
    let st = Command::new(exe).arg("golden").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let st = Command::new(exe).args(["run", "--trace", "/nonexistent/t.bin", "--out", "/nonexistent/o"]).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_CONFIG));
    let st = Command::new(exe).output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_USAGE));
}

#[test]
fn sim_out_is_the_fallback_directory() {
    let d = tempfile::tempdir().unwrap();
    let trace = gen(d.path(), 10);
    let target = d.path().join("env_out");
    let st = Command::new(env!("CARGO_BIN_EXE_nicsim"))
        .args(["run", "--trace", &trace])
        .env("SIM_OUT", &target)
        .current_dir(d.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(target.join("summary.txt").is_file());
}
