use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fixture() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/two_class"))
}

fn l1ns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1ns"))
        .args(args)
        .env_remove("L1NS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = l1ns(args);
    assert!(
        out.status.success(),
        "l1ns {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn index_builds_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for out in [&a, &b] {
        ok(&["index", "--data", s(fixture()), "--r", "3", "--d", "33", "--trials", "3", "--seed", "7", "--out", s(out)]);
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(&bytes[..7], b"L1NSIDX");
}

#[test]
fn query_reports_winner_and_writes_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("idx.bin");
    ok(&["index", "--data", s(fixture()), "--r", "3", "--d", "12", "--trials", "2", "--out", s(&idx)]);
    let q = dir.path().join("q.csv");
    let first = fs::read_to_string(fixture().join("class1_test.csv")).unwrap();
    fs::write(&q, first.lines().next().unwrap()).unwrap();
    let ranked = dir.path().join("ranked.csv");
    let out = ok(&["query", "--index", s(&idx), "--query", s(&q), "--nback", "2", "--verify", "--out", s(&ranked)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("query=0 winner=1 distance="), "{stdout}");
    assert!(stdout.trim_end().ends_with("verified=true"));
    let csv = fs::read_to_string(&ranked).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "query,rank,subspace_id,distance,verified");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,1,1,"));
}

#[test]
fn fit_then_index_matches_direct_index() {
    let dir = tempfile::tempdir().unwrap();
    let col = dir.path().join("col.bin");
    ok(&["fit", "--data", s(fixture()), "--r", "3", "--out", s(&col)]);
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    ok(&["index", "--data", s(&col), "--d", "10", "--out", s(&a)]);
    ok(&["index", "--data", s(fixture()), "--r", "3", "--d", "10", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn omitted_d_is_suggested_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("idx.bin");
    let out = ok(&["index", "--data", s(fixture()), "--r", "1", "--out", s(&idx)]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    // ceil((1 · ln 2)^(1/0.9)) = 1
    assert!(stderr.contains("suggested d = 1"), "{stderr}");
}

#[test]
fn sweep_csv_is_reproducible_across_thread_counts() {
    let gen = "n=5,r=2,D=60,eta=3,queries=10";
    let one = ok(&["eval-sweep", "--gen", gen, "--d", "3,8,20", "--trials", "2", "--seed", "4", "--threads", "1"]);
    let two = ok(&["eval-sweep", "--gen", gen, "--d", "3,8,20", "--trials", "2", "--seed", "4", "--threads", "3"]);
    assert_eq!(one.stdout, two.stdout);
    let csv = String::from_utf8(one.stdout).unwrap();
    assert!(csv.starts_with("d,trials,n_back,success_rate,recall,mean_eta,wall_ms\n"));
    assert_eq!(csv.lines().count(), 4);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nback.csv");
    ok(&["eval-nback", "--gen", gen, "--d", "8", "--nback", "1,5", "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("8,1,5,"));
    assert_eq!(last.split(',').nth(4), Some("1"));
}

#[test]
fn distort_writes_psi_column() {
    let out = ok(&["distort", "--gen", "n=3,r=2,D=40,eta=3,queries=2", "--d", "10", "--matrices", "50"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("psi"));
    assert_eq!(csv.lines().count(), 51);
    assert!(String::from_utf8(out.stderr).unwrap().contains("median="));
}

#[test]
fn gen_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--gen", "n=3,r=2,D=30,eta=3,queries=6", "--format", "bin", "--out", s(&data)]);
    let (c, q) = l1ns::eval::load_external_dataset(&data, 2).unwrap();
    assert_eq!((c.len(), q.len()), (3, 6));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("idx.bin");
    // usage: missing required flag, nothing written
    let out = l1ns(&["index", "--out", s(&idx)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!idx.exists());
    // usage: --out required
    assert_eq!(l1ns(&["index", "--data", s(fixture())]).status.code(), Some(1));
    // runtime: d >= D
    let out = l1ns(&["index", "--data", s(fixture()), "--r", "3", "--d", "64", "--out", s(&idx)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!idx.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    // runtime: missing index
    let out = l1ns(&["query", "--index", s(&idx), "--query", s(&idx)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("idx.bin"));
}

#[test]
fn help_lists_flags_with_defaults() {
    let out = ok(&["eval-sweep", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--gen", "--data", "--d", "--trials", "--nback", "--verify", "--timing", "--seed", "--threads", "--out"] {
        assert!(help.contains(flag), "{flag} missing");
    }
    assert!(help.contains("[default: 1]"));
}
