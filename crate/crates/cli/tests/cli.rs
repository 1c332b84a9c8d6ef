use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn savi(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_savi"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_CODEC: &str = r#"
[model]
kind = "codec"
name = "small"
seed = 7
T = 2
d = 2

[optim]
alpha = 0.05
steps = 2
"#;

#[test]
fn c1_writes_three_csvs_and_summary_matching_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = repo("configs/c1.toml");
    let o = savi(dir.path(), &["run", c1.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["c1_favi.csv", "c1_bao.csv", "c1_approx.csv", "c1_summary.csv"] {
        let got = fs::read_to_string(dir.path().join(name)).unwrap();
        let want = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap();
        assert_eq!(got, want, "{name}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("bitrate_err"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(
        a.path(),
        "x.toml",
        &format!("{SMALL_CODEC}\n[run]\nmethods = [\"favi\", \"bao\", \"approx\", \"exact\"]\nevents = true\n"),
    );
    assert_eq!(code(&savi(a.path(), &["run", &cfg])), 0);
    assert_eq!(code(&savi(b.path(), &["run", &cfg])), 0);
    let mut names: Vec<_> = fs::read_dir(b.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "small_exact_events.txt"));
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn zero_steps_reproduce_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_CODEC.replace("steps = 2", "steps = 0")
        + "\n[run]\nmethods = [\"favi\", \"bao\", \"approx\", \"exact\"]\n";
    let cfg = write_config(dir.path(), "k0.toml", &text);
    assert_eq!(code(&savi(dir.path(), &["run", &cfg])), 0);
    let body = |m: &str| {
        let csv = fs::read_to_string(dir.path().join(format!("small_{m}.csv"))).unwrap();
        csv.lines()
            .skip(1)
            .map(|l| l.split_once(',').unwrap().1.to_string())
            .collect::<Vec<_>>()
    };
    for m in ["bao", "approx", "exact"] {
        assert_eq!(body(m), body("favi"), "{m}");
    }
}

#[test]
fn empty_method_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.toml", &format!("{SMALL_CODEC}\n[run]\nmethods = []\n"));
    let o = savi(dir.path(), &["run", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no methods selected"));
}

#[test]
fn unknown_key_reports_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "u.toml",
        &SMALL_CODEC.replace("steps = 2", "steps = 2\nstepz = 4"),
    );
    let o = savi(dir.path(), &["run", &cfg]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("stepz") && err.contains("line 12"), "{err}");
}

#[test]
fn unknown_override_node_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "o.toml",
        &format!("{SMALL_CODEC}\n[optim.overrides]\n7 = 3\n"),
    );
    let o = savi(dir.path(), &["run", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("node 7"), "{}", stderr(&o));
}

#[test]
fn exact_guard_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_CODEC.replace("steps = 2", "steps = 5") + "\n[run]\nmethods = [\"exact\"]\n";
    let cfg = write_config(dir.path(), "g.toml", &text);
    let o = savi(dir.path(), &["run", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("guard"));
    let o = savi(dir.path(), &["trace", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("predicted"));
}

#[test]
fn divergent_step_size_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[model]\nkind = \"quadratic\"\n[dag]\nnodes = 2\ndims = \"2,2\"\nedges = \"1>2\"\n\
                [optim]\nalpha = 1e300\nsteps = 3\n[run]\nmethods = [\"bao\"]\n";
    let cfg = write_config(dir.path(), "nf.toml", text);
    let o = savi(dir.path(), &["run", &cfg]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn chain_trace_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo("configs/chain3_trace.toml");
    let o = savi(dir.path(), &["trace", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read_to_string(dir.path().join("chain3_trace.txt")).unwrap();
    let want = fs::read_to_string(repo("crates/core/tests/golden/chain3_k2.trace")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn single_node_trace_has_three_events() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[model]\nkind = \"quadratic\"\nname = \"one\"\n[dag]\nnodes = 1\ndims = \"3\"\n[optim]\nsteps = 2\n";
    let cfg = write_config(dir.path(), "one.toml", text);
    assert_eq!(code(&savi(dir.path(), &["trace", &cfg])), 0);
    let trace = fs::read_to_string(dir.path().join("one_trace.txt")).unwrap();
    let kinds: Vec<&str> = trace.lines().map(|l| l.split(' ').nth(2).unwrap()).collect();
    assert_eq!(kinds, ["init", "step", "step"]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &format!("{SMALL_CODEC}\n[run]\nmethods = [\"favi\"]\n"),
    );
    assert_eq!(code(&savi(dir.path(), &["run", &cfg])), 0);
    let base = fs::read_to_string(dir.path().join("small_favi.csv")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_savi"))
        .args(["--seed", "8", "--out"])
        .arg(dir.path())
        .args(["run", &cfg])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read_to_string(dir.path().join("small_favi.csv")).unwrap(), base);
    let resolved = fs::read_to_string(dir.path().join("small_config.toml")).unwrap();
    assert!(resolved.contains("seed = 8"), "{resolved}");
}

#[test]
fn resolved_config_runs_again_identically() {
    let dir = tempfile::tempdir().unwrap();
    let again = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "r.toml",
        &format!("{SMALL_CODEC}\n[run]\nmethods = [\"bao\"]\n"),
    );
    assert_eq!(code(&savi(dir.path(), &["run", &cfg])), 0);
    let resolved = dir.path().join("small_config.toml");
    assert_eq!(code(&savi(again.path(), &["run", resolved.to_str().unwrap()])), 0);
    assert_eq!(
        fs::read(dir.path().join("small_bao.csv")).unwrap(),
        fs::read(again.path().join("small_bao.csv")).unwrap()
    );
}

#[test]
fn verify_complexity_passes_and_fault_injection_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = savi(dir.path(), &["verify", "complexity"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("99/99"));
    let o = savi(dir.path(), &["verify", "thm1", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("thm1"));
}

#[test]
fn unknown_profile_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&savi(dir.path(), &["verify", "thm9"])), 2);
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let q1 = repo("configs/q1.toml");
    let q1 = q1.to_str().unwrap();
    assert_eq!(code(&savi(dir.path(), &["gradcheck", q1, "--trials", "10"])), 0);
    let o = savi(dir.path(), &["gradcheck", q1, "--trials", "3", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("node 1"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&savi(dir.path(), &[])), 2);
}
