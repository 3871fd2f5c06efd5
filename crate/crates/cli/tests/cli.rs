use std::path::PathBuf;
use std::process::Command;

fn specs(name: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs")).join(name)
}

fn synth(args: &[&str], out: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_synth")).args(args).arg("--out").arg(out).output().unwrap()
}

#[test]
fn mode_all_writes_outputs_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = specs("specs7.toml");
    let out = synth(&["--spec", spec.to_str().unwrap(), "--type", "comp", "--mode", "all", "--jobs", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("summary.json").is_file());
    assert!(dir.path().join("report.txt").is_file());
}

#[test]
fn mode_first_exit_code_follows_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let spec = specs("specs1.toml");
    let out = synth(&["--spec", spec.to_str().unwrap(), "--mode", "first", "--budget", "100"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(dir.path().join("netlists")).unwrap().count(), 1);
    let dir = tempfile::tempdir().unwrap();
    let spec = specs("specs7.toml");
    let out = synth(&["--spec", spec.to_str().unwrap(), "--mode", "first"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // Complementary runs size every core even in mode first.
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"created\": 36"), "{summary}");
}

#[test]
fn mismatched_type_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = specs("specs6.toml");
    let tech = concat!(env!("CARGO_MANIFEST_DIR"), "/../../tech/generic.toml");
    let out = synth(&["--spec", spec.to_str().unwrap(), "--tech", tech, "--type", "so"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("disagrees"));
}
