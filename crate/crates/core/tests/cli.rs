use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile-ee"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_config_prints_si_view() {
    let out = cli(&["validate-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("frame_duration = 0.0001"), "{text}");
    assert!(text.contains("# user "));
}

#[test]
fn config_errors_exit_with_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[topology]\nusers = 0\n");
    let out = cli(&["validate-config", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology.users"));

    let unknown = write(dir.path(), "unknown.toml", "[qos]\ndelay = 3\n");
    let out = cli(&["validate-config", "--config", &unknown]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delay"));

    let out = cli(&["validate-config", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mixed_qos_pooling_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[experiment]\ntargets = 0\ninclude_edge = true\nframes = 10\n",
    );
    let out = cli(&[
        "validate-bound",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn required_resources_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = cli(&[
        "required-resources",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(out_dir.join("fig4.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# tool: tactile-ee "));
    assert!(lines[1].starts_with("# config_sha256: "));
    assert_eq!(lines[2], "# seed: 3");
    assert_eq!(lines[3], "# command: required-resources");
    assert_eq!(lines[4], "eps_D,N_t,P_bound_W,W_bound_Hz");
    // default sweeps: 5 reliabilities x 5 antenna counts
    assert_eq!(lines.len(), 5 + 25);
    assert!(lines[5].starts_with("1e-3,2,"));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[qos]\nqueue_violation = 1e-3\n[experiment]\ninclude_edge = false\nmode = \"constant-rate\"\n",
    );
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(threads);
        let out = cli(&[
            "run",
            "--config",
            &cfg,
            "--frames",
            "30000",
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        files.push(std::fs::read(out_dir.join("ccdf.csv")).unwrap());
        files.push(std::fs::read(out_dir.join("power.csv")).unwrap());
    }
    assert_eq!(files[0], files[2]);
    assert_eq!(files[1], files[3]);
}
