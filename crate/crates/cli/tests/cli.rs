//! End-to-end checks of the `conhist` binary: exit-code contract,
//! deterministic emission, and scenario-file handling.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conhist"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("scenario written");
    path.to_string_lossy().into_owned()
}

const POINTER_MEASUREMENT: &str = "\
# qubit copied onto a pointer
[spaces]
dims = 2 2

[initial]
amplitudes = 0.6 0 0.8 0

[step G]
op = controlled-flip 0 1
family = {0, 1} {2, 3}
";

// The in-state sets pin the apparatus-ready level, so the interaction
// correlates each label with exactly one pointer outcome.
const SUBSYSTEM_CHAIN: &str = "\
[spaces]
dims = 2 2

[initial]
amplitudes = 0.6 0 0.8 0

[subsystem S]
family = {0} {2}

[subsystem A]
op = controlled-flip 0 1
family = {0, 2} {1, 3}
map = 0 1 2
";

#[test]
fn structured_emission_is_byte_identical() {
    let first = run(&["born", "demo", "--m", "1,2", "--format", "structured"]);
    let second = run(&["born", "demo", "--m", "1,2", "--format", "structured"]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout, "two identical runs must emit identical bytes");
    let text = stdout(&first);
    assert!(text.contains("\"1/3\""), "{text}");
    assert!(text.contains("\"2/3\""), "{text}");
}

#[test]
fn histories_scenario_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "pointer.cfg", POINTER_MEASUREMENT);
    let out = run(&["histories", "check", "--scenario", &path, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("verdict,off-diagonal decoherence"), "{text}");
    assert!(!text.contains(",fail\n"), "{text}");
    // p = (0.36, 0.64) from the squared amplitudes.
    assert!(text.contains("3.5999999999999"), "{text}");
    assert!(text.contains("6.4000000000000"), "{text}");
}

#[test]
fn interference_fails_consistency() {
    // Two balanced rotations with a breakpoint in between and no record:
    // the intermediate alternatives interfere, so the off-diagonal terms
    // are 0.25 and the check must fail.
    let dir = tempfile::tempdir().unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rotation = format!("op = matrix [{h}, {h}; {h}, {}]\nfamily = {{0}} {{1}}\n", -h);
    let scenario = format!(
        "[spaces]\ndims = 2\n\n[initial]\nbasis = 0\n\n[step first]\n{rotation}\n[step second]\n{rotation}",
    );
    let path = write_scenario(dir.path(), "interfere.cfg", &scenario);
    let out = run(&["histories", "check", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("[FAIL] off-diagonal decoherence"), "{text}");
    assert!(stderr(&out).contains("check(s) failed"));
}

#[test]
fn unknown_key_is_positioned() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = "[spaces]\ndims = 2\n\n[initial]\n  basys = 0\n";
    let path = write_scenario(dir.path(), "typo.cfg", scenario);
    let out = run(&["histories", "check", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 5, column 3"), "{err}");
    assert!(err.contains("basys"), "{err}");
}

#[test]
fn empty_scenario_names_the_missing_section() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "empty.cfg", "");
    let out = run(&["histories", "check", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("missing required section: spaces"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn duplicate_subsystem_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = "\
[spaces]
dims = 2 2

[initial]
basis = 0

[subsystem S]
family = {0, 1} {2, 3}

[subsystem S]
op = controlled-flip 0 1
family = {0, 2} {1, 3}
";
    let path = write_scenario(dir.path(), "dup.cfg", scenario);
    let out = run(&["branches", "decompose", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("duplicate"), "{err}");
    assert!(err.contains('S'), "{err}");
}

#[test]
fn kernel_lambda_truncation_exits_three() {
    let out = run(&[
        "kernel", "verify", "--extents", "8,8", "--spacing", "0.5", "--lambda-max", "1.0",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("convergence"), "{}", stderr(&out));
}

#[test]
fn csv_propagator_table_parses_back() {
    let args = [
        "propagator", "table", "--extents", "4,4", "--spacing", "0.5", "--format", "csv",
    ];
    let first = run(&args);
    let second = run(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);

    let text = stdout(&first);
    let mut origin = None;
    let mut rows = 0usize;
    for line in text.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0] {
            "row" if fields[1] == "propagator" => {
                assert_eq!(fields.len(), 6, "coords + re + im: {line}");
                let dt: i64 = fields[2].parse().expect("dt int");
                let dx: i64 = fields[3].parse().expect("dx int");
                let re: f64 = fields[4].parse().expect("re f64");
                let im: f64 = fields[5].parse().expect("im f64");
                if dt == 0 && dx == 0 {
                    origin = Some((re, im));
                }
                rows += 1;
            }
            "scalar" | "meta" | "table" | "tolerance" | "verdict" => {}
            other => panic!("unknown record type {other} in {line}"),
        }
    }
    assert_eq!(rows, 16, "4x4 lattice rows");
    let (re, im) = origin.expect("origin row present");
    let origin_re: f64 = text
        .lines()
        .find(|l| l.starts_with("scalar,origin_re,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    let origin_im: f64 = text
        .lines()
        .find(|l| l.starts_with("scalar,origin_im,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(re, origin_re);
    assert_eq!(im, origin_im);
}

#[test]
fn closed_cat_branches_carry_no_record() {
    let out = run(&["cat", "run", "--p-yes", "0.5", "--closed", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let branch_rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("row,branches,"))
        .collect();
    assert_eq!(branch_rows.len(), 2, "{text}");
    for row in &branch_rows {
        assert!(row.contains(",closed,none,"), "{row}");
    }
}

#[test]
fn open_cat_branches_record_the_outcome() {
    let out = run(&["cat", "run", "--p-yes", "0.25", "--open", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let branch_rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("row,branches,"))
        .collect();
    assert_eq!(branch_rows.len(), 2, "{text}");
    assert!(
        branch_rows
            .iter()
            .any(|r| r.contains(",alive,open,alive,")),
        "{text}"
    );
    assert!(
        branch_rows.iter().any(|r| r.contains(",dead,open,dead,")),
        "{text}"
    );
}

#[test]
fn subsystem_chain_decomposes_into_two_branches() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "chain.cfg", SUBSYSTEM_CHAIN);
    let out = run(&["branches", "decompose", "--scenario", &path, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("row,branches,1 1,"), "{text}");
    assert!(text.contains("row,branches,2 2,"), "{text}");
    assert!(!text.contains(",fail\n"), "{text}");
}

#[test]
fn out_file_respects_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["born", "demo", "--format", "csv", "--out", "report.csv"])
        .env("CONHIST_OUT_DIR", dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty(), "report went to the file, not stdout");
    let written = std::fs::read_to_string(dir.path().join("report.csv")).expect("file created");
    assert!(written.starts_with("meta,command,born demo"), "{written}");
}

#[test]
fn conflicting_intent_flags_exit_two() {
    let out = run(&["cat", "run", "--open", "--closed"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_probability_exits_two() {
    let out = run(&["cat", "run", "--p-yes", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("[0, 1]"), "{}", stderr(&out));
}

#[test]
fn ambiguity_needs_exactly_one_link() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = "\
[spaces]
dims = 2 2 2

[initial]
basis = 0

[subsystem S]
family = {0, 1, 2, 3} {4, 5, 6, 7}

[subsystem A]
op = controlled-flip 0 1
family = {0, 1, 4, 5} {2, 3, 6, 7}
map = 0 1 2

[subsystem B]
op = controlled-flip 1 2
family = {0, 2, 4, 6} {1, 3, 5, 7}
map = 0 1 2

[mixing]
matrix = [0, 1; 1, 0]
";
    let path = write_scenario(dir.path(), "threelinks.cfg", scenario);
    let out = run(&["ambiguity", "demo", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("exactly one link"), "{}", stderr(&out));
}

#[test]
fn fock_scenario_drives_verify() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = "\
[spaces]
dims = fock

[lattice]
extents = 8 8
spacing = 0.5
mass = 1.0
epsilon = 1e-3

[fock]
types = 2
n_max = 2
sites = (0, 0) (0, 1)
coupling = 0.3
legs = +0 -0
primed = true
masks = {0} {1}
";
    let path = write_scenario(dir.path(), "pairfield.cfg", scenario);
    let out = run(&["fock", "verify", "--scenario", &path, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("verdict,pseudo-unitarity"), "{text}");
    assert!(!text.contains(",fail\n"), "{text}");
}
