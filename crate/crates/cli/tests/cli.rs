use std::process::{Command, Output};

fn frd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frd")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn presets_lists_every_setting() {
    let out = frd(&["presets"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["setting1", "setting2", "setting3", "setting4", "setting5", "fig3", "fig4"] {
        assert!(text.contains(name), "{name} missing");
    }
    assert!(text.lines().any(|l| l.starts_with("setting3") && l.contains(" 50 ")));
}

#[test]
fn payload_calculator() {
    let out = frd(&["payload", "--protocol", "pd", "--local", "1000", "--global", "2000"]);
    assert!(stdout(&out).contains("uplink 24000 bytes, downlink 48000 bytes"));
    let out = frd(&["payload", "--protocol", "frl", "--width", "50", "--layers", "2", "--policy-only"]);
    assert!(stdout(&out).contains("uplink 11608 bytes"));
    let out = frd(&["payload", "--protocol", "mixfrd", "--local", "7"]);
    assert!(stdout(&out).contains("uplink 84 bytes"));
}

#[test]
fn run_writes_outputs_and_config_file_wins() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.conf");
    std::fs::write(&config, "# overrides\nbudget = 10\nseeds = 0,1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = frd(&[
        "run",
        "--preset",
        "fig3",
        "--protocol",
        "frd",
        "--width",
        "8",
        "--period",
        "5",
        "--budget",
        "4000",
        "--agents",
        "2",
        "--config",
        config.to_str().unwrap(),
        "--workers",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--prefix",
        "t",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = std::fs::read_to_string(out_dir.join("t_runs.csv")).unwrap();
    let lines: Vec<&str> = runs.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("protocol,agents,S,E,n,l,seed"));
    assert!(lines[1].starts_with("frd,2,30,5,8,2,0,10,true,"));
    assert!(out_dir.join("t_aggregate.csv").exists());
    assert!(out_dir.join("t_rounds.jsonl").exists());
}

#[test]
fn sweep_emits_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = frd(&[
        "sweep",
        "--preset",
        "setting4",
        "--protocol",
        "standalone",
        "--budget",
        "3",
        "--seeds",
        "0..2",
        "--agent-counts",
        "1,2",
        "--format",
        "jsonl",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("setting4_standalone_runs.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn bad_input_fails_cleanly() {
    assert!(!frd(&["run", "--preset", "setting9"]).status.success());
    let out = frd(&["run", "--colour", "red"]);
    assert!(!out.status.success());
    let out = frd(&["run", "--sections", "0", "--budget", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sections"));
}
