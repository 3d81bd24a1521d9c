use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn engage(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engage"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = engage(args, cwd);
    assert!(
        out.status.success(),
        "engage {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn golden_config() -> String {
    golden_dir().join("config.toml").display().to_string()
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_flags_and_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let text = String::from_utf8(ok(&["--help"], tmp.path()).stdout).unwrap();
    for word in ["--config", "--seed", "--jobs", "--data-dir", "--hidden", "--out", "--verbose"] {
        assert!(text.contains(word), "{word} missing from help");
    }
    for cmd in ["fuse", "features", "train", "eval", "synth", "ablate"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let eval = String::from_utf8(ok(&["eval", "--help"], tmp.path()).stdout).unwrap();
    assert!(eval.contains("--method") && eval.contains("--formula"));
}

#[test]
fn empty_input_dir_is_a_clean_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    for cmd in ["fuse", "features", "train", "eval", "ablate"] {
        let out = engage(&[cmd, "--data-dir", "empty"], tmp.path());
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error: no manifest.json"), "{cmd}: {err}");
        assert!(!err.contains("panicked"));
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[net]\nhiden = 3\n").unwrap();
    let out = engage(&["--config", "bad.toml", "synth"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = golden_config();
    ok(&["--config", &cfg, "--seed", "9", "synth", "--sessions", "1", "--duration", "10", "--out", "d"], tmp.path());
    let snap = fs::read_to_string(tmp.path().join("d/config.toml")).unwrap();
    assert!(snap.contains("seed = 9"));
    assert!(snap.contains("sessions = 1"));
    assert!(snap.contains("hidden = 8"));
}

#[test]
fn subcommands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = golden_config();
    let run = |tag: &str| {
        let data = format!("{tag}/data");
        ok(&["--config", &cfg, "synth", "--out", &data], tmp.path());
        for cmd in ["fuse", "features", "train", "eval"] {
            let out = format!("{tag}/{cmd}");
            ok(&["--config", &cfg, "--data-dir", &data, cmd, "--out", &out], tmp.path());
        }
        snapshot(&tmp.path().join(tag))
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        // Snapshots record their own data path.
        if pa.ends_with("config.toml") {
            continue;
        }
        assert!(ba == bb, "{} differs between runs", pa.display());
    }
}

#[test]
fn job_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = golden_config();
    ok(&["--config", &cfg, "synth", "--out", "data"], tmp.path());
    for jobs in ["1", "3"] {
        ok(&["--config", &cfg, "--jobs", jobs, "--data-dir", "data", "eval", "--out", jobs], tmp.path());
    }
    let a = fs::read(tmp.path().join("1/report.json")).unwrap();
    let b = fs::read(tmp.path().join("3/report.json")).unwrap();
    assert!(a == b);
}

/// Regenerate with `UPDATE_GOLDEN=1 cargo test -p engage-cli golden`.
#[test]
fn golden_two_session_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = golden_config();
    ok(&["--config", &cfg, "synth", "--out", "data"], tmp.path());
    let stdout = ok(&["--config", &cfg, "--data-dir", "data", "eval", "--out", "eval"], tmp.path()).stdout;
    let mut produced = vec![("stdout.txt".to_string(), stdout)];
    for f in ["report.csv", "confusion.csv"] {
        produced.push((f.to_string(), fs::read(tmp.path().join("eval").join(f)).unwrap()));
    }
    let dir = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        for (name, bytes) in &produced {
            fs::write(dir.join(name), bytes).unwrap();
        }
    }
    for (name, bytes) in &produced {
        let expected = fs::read(dir.join(name)).unwrap_or_else(|_| panic!("missing golden file {name}"));
        assert!(
            &expected == bytes,
            "{name} differs from golden:\n{}",
            String::from_utf8_lossy(bytes)
        );
    }
}
