//! Acceptance gate for the command-line surface: deterministic emission and
//! the exit-code contract, printed as a single pass/fail line.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_conhist"))
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn")
}

const POINTER_MEASUREMENT: &str = "\
[spaces]
dims = 2 2

[initial]
amplitudes = 0.6 0 0.8 0

[step record]
op = controlled-flip 0 1
family = {0, 1} {2, 3}
";

// Two balanced rotations interfere, so the off-diagonal terms survive.
const INTERFERING_ROTATIONS: &str = "\
[spaces]
dims = 2

[initial]
basis = 0

[step first]
op = matrix [0.70710678118654752, 0.70710678118654752; 0.70710678118654752, -0.70710678118654752]
family = {0} {1}

[step second]
op = matrix [0.70710678118654752, 0.70710678118654752; 0.70710678118654752, -0.70710678118654752]
family = {0} {1}
";

#[test]
fn a10_cli_contract() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let dir = tempfile::tempdir().expect("tempdir");
    let mut check = |name: &str, ok: bool, detail: String| {
        if !ok {
            failures.push(format!("{name}: {detail}"));
        }
    };

    // Identical invocations must emit identical bytes.
    let first = run(&["born", "demo", "--m", "3,4,5", "--format", "structured"]);
    let second = run(&["born", "demo", "--m", "3,4,5", "--format", "structured"]);
    check(
        "structured emission is reproducible",
        first.status.code() == Some(0) && first.stdout == second.stdout,
        format!("codes {:?}/{:?}", first.status.code(), second.status.code()),
    );
    check(
        "structured emission is non-trivial",
        first.stdout.len() > 100,
        format!("{} bytes", first.stdout.len()),
    );

    let passing = dir.path().join("pointer.scenario");
    std::fs::write(&passing, POINTER_MEASUREMENT).expect("write scenario");
    let ok_run = run(&["histories", "check", "--scenario", passing.to_str().unwrap()]);
    check(
        "passing run exits 0",
        ok_run.status.code() == Some(0),
        format!(
            "code {:?}, stderr: {}",
            ok_run.status.code(),
            String::from_utf8_lossy(&ok_run.stderr)
        ),
    );

    let failing = dir.path().join("interference.scenario");
    std::fs::write(&failing, INTERFERING_ROTATIONS).expect("write scenario");
    let fail_run = run(&["histories", "check", "--scenario", failing.to_str().unwrap()]);
    check(
        "violated consistency exits 1",
        fail_run.status.code() == Some(1),
        format!("code {:?}", fail_run.status.code()),
    );
    check(
        "the failing verdict is reported before exiting",
        String::from_utf8_lossy(&fail_run.stdout).contains("[FAIL]"),
        "no [FAIL] line on stdout".into(),
    );

    let malformed = dir.path().join("broken.scenario");
    std::fs::write(&malformed, "[spaces]\ndims = 2\n\n[step s]\nop = warble\n")
        .expect("write scenario");
    let parse_run = run(&["histories", "check", "--scenario", malformed.to_str().unwrap()]);
    check(
        "malformed scenario exits 2",
        parse_run.status.code() == Some(2),
        format!("code {:?}", parse_run.status.code()),
    );
    check(
        "the parse error is positioned",
        String::from_utf8_lossy(&parse_run.stderr).contains("line "),
        format!("stderr: {}", String::from_utf8_lossy(&parse_run.stderr)),
    );

    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() > 5.0 {
        failures.push(format!("runtime {elapsed:.2?} exceeds budget 5s"));
    }
    if failures.is_empty() {
        println!("[acceptance 10 command-line contract] PASS ({elapsed:.2?})");
    } else {
        println!("[acceptance 10 command-line contract] FAIL ({elapsed:.2?})");
        panic!(
            "acceptance 10 command-line contract:\n  {}",
            failures.join("\n  ")
        );
    }
}
