use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hybridx(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridx"))
        .args(args)
        .env("HYBRIDX_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    root.join(name).display().to_string()
}

#[test]
fn shipped_scenarios_run_clean() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, seed) in [
        ("baseline.toml", 1),
        ("failover.toml", 1),
        ("congestion.toml", 9),
    ] {
        let out = hybridx(&["run", &scenario(name)], tmp.path());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            out.status.success(),
            "{name}: {stdout}{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!stdout.contains("FAIL"), "{stdout}");
        let stem = name.trim_end_matches(".toml");
        let dir = tmp.path().join(format!("{stem}-{seed}"));
        for f in [
            "input.log",
            "output.log",
            "ats.log",
            "net.log",
            "metrics.txt",
        ] {
            assert!(dir.join(f).is_file(), "{stem}: missing {f}");
        }
    }
}

#[test]
fn replay_check_and_report_on_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    let dir_s = dir.display().to_string();
    let run = hybridx(
        &[
            "run",
            &scenario("baseline.toml"),
            "--seed",
            "4",
            "--out",
            &dir_s,
        ],
        tmp.path(),
    );
    assert!(run.status.success());

    let ok = hybridx(&["replay-check", &dir_s], tmp.path());
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("PASS"));

    let report = hybridx(&["report", &dir_s], tmp.path());
    assert!(report.status.success());
    assert_eq!(
        String::from_utf8(report.stdout).unwrap(),
        fs::read_to_string(dir.join("metrics.txt")).unwrap()
    );

    let path = dir.join("output.log");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    let at = mid
        + bytes[mid..]
            .iter()
            .position(|b| b.is_ascii_digit())
            .unwrap();
    bytes[at] = if bytes[at] == b'9' {
        b'8'
    } else {
        bytes[at] + 1
    };
    fs::write(&path, bytes).unwrap();
    let bad = hybridx(&["replay-check", &dir_s], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("FAIL at seq"));
}

#[test]
fn genscript_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = hybridx(
        &["genscript", "--seed", "5", "--duration-ms", "2000"],
        tmp.path(),
    );
    let b = hybridx(
        &["genscript", "--seed", "5", "--duration-ms", "2000"],
        tmp.path(),
    );
    let c = hybridx(
        &["genscript", "--seed", "6", "--duration-ms", "2000"],
        tmp.path(),
    );
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 200);
    let from_file = hybridx(
        &["genscript", "--scenario", &scenario("congestion.toml")],
        tmp.path(),
    );
    assert_eq!(
        String::from_utf8(from_file.stdout).unwrap().lines().count(),
        1500
    );
}

#[test]
fn bad_input_exits_with_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "seed = 1\nduration_ms = 10\ninstruments = []\n").unwrap();
    let out = hybridx(&["run", &path.display().to_string()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no instruments"));
    let missing = hybridx(
        &[
            "replay-check",
            &tmp.path().join("nope").display().to_string(),
        ],
        tmp.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
}
