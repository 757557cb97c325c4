use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pmcu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmcu")).args(args).output().unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn two_task_trace_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("two-task.trace");
    let o = pmcu(&["demo", "run", "two-task", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = std::fs::read_to_string(&trace).unwrap();
    let want = std::fs::read_to_string(golden("two-task.trace")).unwrap();
    assert_eq!(got, want);
    let same = pmcu(&["trace-diff", trace.to_str().unwrap(), golden("two-task.trace").to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(same.stdout, b"identical\n");
}

#[test]
fn trace_diff_points_at_the_first_difference() {
    let dir = tempfile::tempdir().unwrap();
    let want = std::fs::read_to_string(golden("two-task.trace")).unwrap();
    let mut lines: Vec<&str> = want.lines().collect();
    lines.truncate(7);
    let short = dir.path().join("short.trace");
    std::fs::write(&short, lines.join("\n") + "\n").unwrap();
    let o = pmcu(&["trace-diff", golden("two-task.trace").to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("first difference at event 7\n"), "{text}");
    assert!(text.contains("> <end of trace>"), "{text}");
    let missing = pmcu(&["trace-diff", "/nonexistent/a", "/nonexistent/b"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn exit_codes_follow_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");

    std::fs::write(&input, b"hello").unwrap();
    let o = pmcu(&["run", "echo", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(o.stdout, b"hello");
    assert!(stderr(&o).starts_with("outcome=Halted "), "{}", stderr(&o));

    std::fs::write(&input, [0xee, 1, 0]).unwrap();
    let o = pmcu(&["run", "tlv-parser", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("class=DivByZero"), "{}", stderr(&o));

    let o = pmcu(&["demo", "run", "two-task", "--step-limit", "20"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("outcome=Timeout events=20 "), "{}", stderr(&o));

    assert_eq!(pmcu(&["run", "no-such-firmware"]).status.code(), Some(64));
    assert_eq!(pmcu(&["run", "echo", "--tick-period", "0"]).status.code(), Some(64));
    assert_eq!(pmcu(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(pmcu(&["run", "echo", "--input", "/nonexistent"]).status.code(), Some(1));
    assert_eq!(pmcu(&["--help"]).status.code(), Some(0));
}

#[test]
fn every_bug_demo_crashes_with_its_class() {
    for (demo, class) in [
        ("div-by-zero-demo", "DivByZero"),
        ("integer-overflow-demo", "IntegerOverflow"),
        ("stack-overflow-demo", "StackOverflow"),
        ("heap-overflow-demo", "HeapOverflow"),
        ("null-deref-demo", "NullDeref"),
        ("double-free-demo", "DoubleFree"),
        ("use-after-free-demo", "UseAfterFree"),
    ] {
        let o = pmcu(&["demo", "run", demo]);
        assert_eq!(o.status.code(), Some(2), "{demo}");
        assert!(stderr(&o).contains(&format!("class={class} task=1 ")), "{demo}: {}", stderr(&o));
    }
}

#[test]
fn demo_list_names_the_corpus() {
    let o = pmcu(&["demo", "list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["empty", "echo", "two-task", "tlv-parser", "heap-overflow-demo"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name} missing:\n{text}");
    }
}

fn without_eps(report: &str) -> String {
    report
        .split_whitespace()
        .filter(|w| !w.starts_with("eps="))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn fuzz_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for n in 0..2 {
        let path = dir.path().join(format!("report-{n}.txt"));
        let o = pmcu(&[
            "fuzz", "echo", "--source", "gen", "--iters", "1000", "--seed", "7", "--report",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let written = std::fs::read_to_string(&path).unwrap();
        assert_eq!(written.as_bytes(), o.stdout);
        reports.push(written);
    }
    assert!(reports[0].contains("execs=1000"), "{}", reports[0]);
    assert_eq!(without_eps(&reports[0]), without_eps(&reports[1]));
}

#[test]
fn fuzz_over_a_directory_pins_the_crashing_testcase() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5u8 {
        let body: &[u8] = if i == 3 { &[0xee, 1, 0] } else { &[1, 1, i] };
        std::fs::write(dir.path().join(format!("case-{i}")), body).unwrap();
    }
    let o = pmcu(&["fuzz", "tlv-parser", "--source", dir.path().to_str().unwrap(), "--iters", "5", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("crashes=1"), "{text}");
    assert!(text.contains("DivByZero"), "{text}");
    let o = pmcu(&["fuzz", "tlv-parser", "--source", dir.path().to_str().unwrap(), "--iters", "6"]);
    assert_ne!(o.status.code(), Some(0));
    let o = pmcu(&["fuzz", "echo", "--source", "gen", "--iters", "0"]);
    assert_eq!(o.status.code(), Some(64));
}
