use std::fs;
use std::process::{Command, Output};

fn cabinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabinet"))
        .args(args)
        .env_remove("CABINET_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_golden_header_and_rows() {
    let o = cabinet(&["run", "--n", "5", "--t", "1", "--rounds", "12", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some(
            "round,wclock,algo,commit_latency_ms,throughput_ops_per_s,quorum_replies_counted,\
cabinet_ids,leader_id,active_delay_regime,crashed_count,seed,t"
        )
    );
    let rows: Vec<&str> = lines.take_while(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split(',').count() == 12));
    assert!(text.contains("# mean_latency_ms:"));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["run", "--n", "7", "--delay", "d4", "--crash", "random:2@4", "--rounds", "20", "--seed", "11"];
    let a = cabinet(&args);
    let b = cabinet(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_cabinet"))
            .args(["run", "--n", "5", "--delay", "d1:20", "--rounds", "5"])
            .env("CABINET_SEED", seed)
            .output()
            .unwrap()
    };
    let flag = cabinet(&["run", "--n", "5", "--delay", "d1:20", "--rounds", "5", "--seed", "42"]);
    assert_eq!(run("42").stdout, flag.stdout);
    assert_ne!(run("43").stdout, flag.stdout);
}

#[test]
fn flags_override_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "n = 9\nrounds = 30\nseed = 5\nalgo = \"baseline\"\n").unwrap();
    let p = path.to_str().unwrap();
    let o = cabinet(&["run", "--scenario", p, "--rounds", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).take_while(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",baseline,")));
}

#[test]
fn trace_file_audits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let csv = dir.path().join("m.csv");
    let o = cabinet(&[
        "run", "--n", "7", "--crash", "strong:2@3", "--rounds", "10", "--seed", "2",
        "--trace", trace.to_str().unwrap(), "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(&csv).unwrap().starts_with("round,"));
    let a = cabinet(&["audit", "--trace", trace.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
}

#[test]
fn replications_write_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("run.jsonl");
    let o = cabinet(&[
        "run", "--n", "5", "--rounds", "5", "--seed", "8", "--replications", "3",
        "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for seed in 8..11 {
        assert!(dir.path().join(format!("run.{seed}.jsonl")).exists());
    }
}

#[test]
fn exit_codes() {
    assert_eq!(cabinet(&["run", "--n", "2"]).status.code(), Some(2));
    assert_eq!(cabinet(&["run", "--n", "7", "--t", "4"]).status.code(), Some(2));
    assert_eq!(cabinet(&["run", "--delay", "d9"]).status.code(), Some(2));
    let stalled = cabinet(&["run", "--n", "5", "--t", "1", "--crash", "strong:3@2", "--rounds", "6"]);
    assert_eq!(stalled.status.code(), Some(4), "{}", String::from_utf8_lossy(&stalled.stderr));
    let bad = cabinet(&["scheme", "--t", "2", "--weights", "1,2,3,4,5,6,7", "--ct", "8"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("disjoint quorums"));
    let good = cabinet(&["scheme", "--n", "10", "--t", "3"]);
    assert_eq!(good.status.code(), Some(0));
    assert!(stdout(&good).contains("valid=true"));
}

#[test]
fn compare_prints_both_algorithms() {
    let o = cabinet(&["compare", "--n", "11", "--profile", "heterogeneous", "--rounds", "20", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("cabinet") && text.contains("baseline"), "{text}");
}
