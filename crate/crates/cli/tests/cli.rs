//! End-to-end determinism contract: identical configs give bit-identical
//! CSV artifacts, independent of worker count and of interrupt/resume.

use std::path::Path;
use std::process::Command;

fn polymer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polymer"))
}

fn run_ok(args: &[&str], dir: &Path) -> String {
    let out = polymer().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "polymer {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn acceptance_13_reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "free-energy".to_string(),
            "--beta".into(),
            "1.0".into(),
            "--n".into(),
            "24".into(),
            "--samples".into(),
            "50".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let a1: Vec<String> = args("a.csv");
    run_ok(&a1.iter().map(|s| s.as_str()).collect::<Vec<_>>(), dir.path());
    let a2: Vec<String> = args("b.csv");
    run_ok(&a2.iter().map(|s| s.as_str()).collect::<Vec<_>>(), dir.path());
    assert_eq!(read(dir.path(), "a.csv"), read(dir.path(), "b.csv"));
    println!("acceptance 13a rerun determinism: PASS");
}

#[test]
fn acceptance_13_worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    for (out, workers) in [("w1.csv", "1"), ("w2.csv", "2"), ("w3.csv", "3")] {
        run_ok(
            &[
                "overlap", "--beta", "0.9", "--n", "12", "--samples", "40", "--seed", "3",
                "--workers", workers, "--out", out,
            ],
            dir.path(),
        );
    }
    assert_eq!(read(dir.path(), "w1.csv"), read(dir.path(), "w2.csv"));
    assert_eq!(read(dir.path(), "w1.csv"), read(dir.path(), "w3.csv"));
    println!("acceptance 13b worker-count independence: PASS");
}

#[test]
fn acceptance_13_interrupt_and_resume_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    // uninterrupted reference
    run_ok(
        &[
            "free-energy", "--beta", "0.8", "--n", "16", "--samples", "60", "--seed", "11",
            "--out", "ref.csv", "--summary", "ref.json",
        ],
        dir.path(),
    );
    // interrupted at 20 of 60, then resumed with a different worker count
    let stdout = run_ok(
        &[
            "free-energy", "--beta", "0.8", "--n", "16", "--samples", "60", "--seed", "11",
            "--out", "cut.csv", "--checkpoint", "cut.ck.json", "--checkpoint-interval", "20",
            "--stop-after", "20", "--workers", "1",
        ],
        dir.path(),
    );
    assert!(stdout.contains("stopped after 20/60"), "{stdout}");
    run_ok(
        &["resume", "--checkpoint", "cut.ck.json", "--workers", "2"],
        dir.path(),
    );
    assert_eq!(read(dir.path(), "ref.csv"), read(dir.path(), "cut.csv"));
    // resuming a completed run is a no-op
    let stdout = run_ok(&["resume", "--checkpoint", "cut.ck.json"], dir.path());
    assert!(stdout.contains("already complete"), "{stdout}");
    assert_eq!(read(dir.path(), "ref.csv"), read(dir.path(), "cut.csv"));
    println!("acceptance 13c interrupt/resume determinism: PASS");
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "x-statistic", "--ell", "4", "--eps", "0.05", "--order", "1", "--range", "2",
            "--samples", "30", "--seed", "2", "--out", "x.csv", "--checkpoint", "x.ck.json",
            "--checkpoint-interval", "10", "--stop-after", "10",
        ],
        dir.path(),
    );
    // flip a byte in the middle of the checkpoint
    let ck_path = dir.path().join("x.ck.json");
    let mut bytes = std::fs::read(&ck_path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] = bytes[mid].wrapping_add(1);
    std::fs::write(&ck_path, &bytes).unwrap();
    let out = polymer()
        .args(["resume", "--checkpoint", "x.ck.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("corrupt") || err.contains("hash") || err.contains("expected"),
        "unexpected diagnostic: {err}"
    );
}

#[test]
fn second_moment_mc_matches_exact_dp() {
    // cross-module consistency through the CLI surface
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "second-moment", "--beta", "0.5", "--n", "16", "--eps", "0.3", "--samples", "4000",
            "--seed", "1", "--out", "sm.csv", "--summary", "sm.json",
        ],
        dir.path(),
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&read(dir.path(), "sm.json")).unwrap();
    let exact = summary["derived"]["second_moment_exact"].as_f64().unwrap();
    let stats = summary["statistics"].as_array().unwrap();
    let mc = stats[0]["mean"].as_f64().unwrap();
    let se = stats[0]["stderr"].as_f64().unwrap();
    assert!(
        (mc - exact).abs() <= 3.0 * se,
        "MC {mc} +- {se} vs exact {exact}"
    );
}

#[test]
fn scale_table_flags_unreachable_rows() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(
        &[
            "scale-table", "--eps", "0.1", "--beta-grid", "0.3:1.2:0.3", "--cap", "100000000",
            "--out", "st.csv",
        ],
        dir.path(),
    );
    assert!(stdout.contains("unreachable"));
    let text = String::from_utf8(read(dir.path(), "st.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "beta,eps,n,reachable,required");
    assert!(lines[1].contains("false"), "{}", lines[1]); // beta = 0.3 unreachable
    assert!(lines.iter().skip(2).all(|l| l.contains("true")));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        "law = standard-gaussian\nbeta = 0.7\nn = 12\nsamples = 25\nseed = 4\nout = from_file.csv\n",
    )
    .unwrap();
    run_ok(&["free-energy", "--config", "exp.cfg"], dir.path());
    assert!(dir.path().join("from_file.csv").exists());
    // the flag wins over the file
    run_ok(
        &["free-energy", "--config", "exp.cfg", "--out", "from_flag.csv", "--samples", "10"],
        dir.path(),
    );
    let text = String::from_utf8(read(dir.path(), "from_flag.csv")).unwrap();
    assert!(text.contains("\"samples\":10"));
    // identical statistical content: the per-sample rows of the shorter run
    // are a prefix of the longer one's
    let a = String::from_utf8(read(dir.path(), "from_file.csv")).unwrap();
    let rows_a: Vec<&str> = a.lines().skip(4).take(10).collect();
    let rows_b: Vec<&str> = text.lines().skip(4).take(10).collect();
    assert_eq!(rows_a, rows_b);
}
