//! Drives the installed binary end to end: output contracts, exit codes,
//! and byte-level determinism of everything it writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rabs"))
        .args(args)
        .output()
        .expect("spawn rabs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

/// A small three-segment experiment, written fresh into `dir`.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        r#"
version = 1
model = "both"
replicates = 2
base_seed = 9

[script]
segments = [
  { profile = "normal", count = 400 },
  { profile = "dos-land-like", count = 80 },
  { profile = "normal", count = 200 },
]
"#,
    )
    .unwrap();
    path
}

#[test]
fn synth_is_deterministic_and_honors_the_script_length() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for out in [&a, &b] {
        let r = rabs(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 680);
}

#[test]
fn missing_profile_fails_usage_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "version = 1\n[script]\nsegments = [{ profile = \"no-such\", count = 5 }]\n",
    )
    .unwrap();
    let r = rabs(&["synth", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&r), 1);
    assert!(stderr(&r).contains("no-such"), "{}", stderr(&r));
}

#[test]
fn featurize_matches_hand_projected_bits() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.tsv");
    std::fs::write(
        &trace,
        "TCP\t1\t23\tSYN\tattack:x\nUDP\t5\t53\t-\tnormal\nTCP\t9\t443\tDF,ACK\tnormal\n",
    )
    .unwrap();
    let out = dir.path().join("vecs.tsv");
    let r = rabs(&[
        "featurize",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
    // Built-in schema: bits 0..=10 are the flags in declaration order
    // (SYN = 9, DF = 2, ACK = 6), then the port groups (Telnet 23 = 11,
    // DNS 53 = 21, SSL 443 = 28).
    let expected = "\
0\t000000000101000000000000000000000000000\n\
1\t000000000000000000000100000000000000000\n\
2\t001000100000000000000000000010000000000\n";
    assert_eq!(std::fs::read_to_string(&out).unwrap(), expected);
}

#[test]
fn featurize_of_an_empty_trace_is_an_empty_dump() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("empty.tsv");
    std::fs::write(&trace, "").unwrap();
    let out = dir.path().join("vecs.tsv");
    let r = rabs(&[
        "featurize",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
    assert_eq!(std::fs::read(&out).unwrap(), b"");
}

#[test]
fn run_outputs_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_a = dir.path().join("ra");
    let out_b = dir.path().join("rb");
    for out in [&out_a, &out_b] {
        let r = rabs(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
    }
    for name in ["results.csv", "report.json"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }

    // One run record per replicate plus one aggregate per group.
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_a.join("report.json")).unwrap()).unwrap();
    let groups = report["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    for g in groups {
        assert_eq!(g["runs"].as_array().unwrap().len(), 2);
        assert!(g["aggregate"].is_object());
    }
}

#[test]
fn snapshot_resume_reproduces_the_uninterrupted_verdict_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let config = config.to_str().unwrap();

    let verdicts = |dump_at: &str, tag: &str| -> String {
        let snap = dir.path().join(format!("{tag}.snapshot.json"));
        let log = dir.path().join(format!("{tag}.verdicts.tsv"));
        let r = rabs(&[
            "snapshot",
            "dump",
            "--config",
            config,
            "--packets",
            dump_at,
            "--out",
            snap.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
        let r = rabs(&[
            "snapshot",
            "resume",
            "--config",
            config,
            "--snapshot",
            snap.to_str().unwrap(),
            "--out",
            log.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
        std::fs::read_to_string(&log).unwrap()
    };

    let full = verdicts("0", "full");
    let tail = verdicts("300", "tail");
    assert_eq!(full.lines().count(), 680);
    let full_tail: Vec<&str> = full.lines().skip(300).collect();
    let resumed: Vec<&str> = tail.lines().collect();
    assert_eq!(full_tail, resumed);
}

#[test]
fn snapshot_needs_the_reactive_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("abs.toml");
    std::fs::write(
        &config,
        "version = 1\nmodel = \"abs\"\n[script]\nname = \"baseline\"\n",
    )
    .unwrap();
    let r = rabs(&[
        "snapshot",
        "dump",
        "--config",
        config.to_str().unwrap(),
        "--packets",
        "10",
    ]);
    assert_eq!(exit_code(&r), 1);
    assert!(stderr(&r).contains("reactive"), "{}", stderr(&r));
}

#[test]
fn config_mistakes_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "unknown.toml",
            "version = 1\nmodle = \"abs\"\n[script]\nname = \"baseline\"\n",
            "modle",
        ),
        (
            "version.toml",
            "version = 3\n[script]\nname = \"baseline\"\n",
            "version",
        ),
        (
            "thresholds.toml",
            "version = 1\n[script]\nname = \"baseline\"\n[energy]\nenergy_thres = 95.0\n",
            "energy_thres",
        ),
        (
            "script.toml",
            "version = 1\n[script]\nname = \"five-phase\"\n",
            "five-phase",
        ),
    ];
    for (name, text, needle) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        let r = rabs(&["run", "--config", path.to_str().unwrap()]);
        assert_eq!(exit_code(&r), 1, "{name}");
        assert!(stderr(&r).contains(needle), "{name}: {}", stderr(&r));
    }

    let r = rabs(&["run"]);
    assert_eq!(exit_code(&r), 1, "missing --config is a usage error");
    let r = rabs(&[]);
    assert_eq!(exit_code(&r), 1);
    let r = rabs(&["--help"]);
    assert_eq!(exit_code(&r), 0);
}

#[test]
fn runtime_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    // Output directory path collides with an existing file.
    let blocker = dir.path().join("blocked");
    std::fs::write(&blocker, "file").unwrap();
    let out = blocker.join("sub");
    let r = rabs(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&r), 2, "{}", stderr(&r));
}

#[test]
fn custom_profiles_extend_the_builtin_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("custom.toml");
    std::fs::write(
        &config,
        r#"
version = 1
model = "rabs"
replicates = 1

[script]
segments = [
  { profile = "normal", count = 50 },
  { profile = "echo-flood", count = 20 },
]

[profiles.echo-flood]
label = "attack:echo-flood"
transport = { tcp = 1.0 }
flags = { "SYN,F1,F2" = 1.0 }
ports = { 7 = 1.0 }
"#,
    )
    .unwrap();
    let out = dir.path().join("trace.tsv");
    let r = rabs(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&r), 0, "{}", stderr(&r));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 70);
    assert_eq!(
        text.lines()
            .filter(|l| l.ends_with("attack:echo-flood"))
            .count(),
        20
    );
}
