use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[cost]
name = "pseudo-huber"
dim = 2
scale = 1.0

[oracle]
kind = "sphere"
radius = 1.0

[method]
kind = "sgd"
step = { kind = "sgd-sqrt", a = 1.0 }

[ensemble]
runs = 3000
horizon = 300
seed = 7
init_x1 = [2.0, -1.0]
epsilon_grid = [0.01, 0.05]

[analysis]
overlays = ["theory"]
sota = { b = 1.0, l = 1.0, c = 1.0 }
"#;

fn ldplab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldplab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LDPLAB_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn full_pipeline_writes_stamped_files() {
    let d = setup();
    let o = ldplab(&["simulate", "--config", "small.toml", "--out", "res"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for args in [
        vec!["tail", "--results", "res"],
        vec!["fit", "--tail", "res/tail.csv"],
        vec!["report", "--results", "res"],
        vec!["rates", "--config", "small.toml", "--out", "res"],
        vec!["compare-sota", "--config", "small.toml", "--out", "res"],
    ] {
        let o = ldplab(&args, d.path());
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = fs::read_to_string(d.path().join("res/manifest.toml")).unwrap();
    let digest = manifest.lines().next().unwrap().split('"').nth(1).unwrap().to_string();
    for f in ["trajsummary.csv", "tail.csv", "fit.csv", "rates.csv", "compare_sota.csv"] {
        let text = fs::read_to_string(d.path().join("res").join(f)).unwrap();
        assert!(text.starts_with(&format!("# config_digest={digest}\n")), "{f}");
        assert!(!text.contains('\r'));
    }
    for f in ["tail.svg", "rates.svg", "compare_sota.svg"] {
        let text = fs::read_to_string(d.path().join("res").join(f)).unwrap();
        assert!(text.contains(&format!("config_digest={digest}")), "{f}");
    }
    let sota = fs::read_to_string(d.path().join("res/compare_sota.csv")).unwrap();
    assert!(sota.contains(",liu-sgd,") && sota.contains(",armacki-nsgd,") && sota.contains(",sgd,"));
    assert!(fs::read_to_string(d.path().join("res/report.md")).unwrap().contains("## eps = 0.01"));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let d = setup();
    let a = ldplab(&["simulate", "--config", "small.toml", "--out", "a", "--workers", "1"], d.path());
    let b = ldplab(&["simulate", "--config", "small.toml", "--out", "b", "--workers", "3"], d.path());
    assert_eq!((code(&a), code(&b)), (0, 0));
    for f in ["trajsummary.csv", "manifest.toml", "config.toml"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_digest_and_refuses_overwrite() {
    let d = setup();
    assert_eq!(code(&ldplab(&["simulate", "--config", "small.toml", "--out", "r"], d.path())), 0);
    // same config again is fine
    assert_eq!(code(&ldplab(&["simulate", "--config", "small.toml", "--out", "r"], d.path())), 0);
    let o = ldplab(&["simulate", "--config", "small.toml", "--out", "r", "--seed", "8"], d.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = ldplab(&["simulate", "--config", "small.toml", "--out", "r", "--seed", "8", "--force"], d.path());
    assert_eq!(code(&o), 0);
    let copy = fs::read_to_string(d.path().join("r/config.toml")).unwrap();
    assert!(copy.contains("seed = 8"));
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let d = setup();
    fs::write(d.path().join("bad.toml"), SMALL.replace("a = 1.0", "a = 1.01")).unwrap();
    let o = ldplab(&["simulate", "--config", "bad.toml", "--out", "r"], d.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:13:"), "{err}");

    fs::write(d.path().join("typo.toml"), SMALL.replace("seed = 7", "sead = 7")).unwrap();
    let o = ldplab(&["simulate", "--config", "typo.toml"], d.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo.toml:"));

    assert_eq!(code(&ldplab(&["simulate", "--preset", "nope"], d.path())), 2);
    assert_eq!(code(&ldplab(&["verify", "nope"], d.path())), 2);
}

#[test]
fn missing_inputs_exit_3_and_thin_tails_exit_4() {
    let d = setup();
    assert_eq!(code(&ldplab(&["simulate", "--config", "missing.toml"], d.path())), 3);
    assert_eq!(code(&ldplab(&["tail", "--results", "nothing"], d.path())), 3);
    // a two-run ensemble never has enough exceedances to fit
    fs::write(d.path().join("tiny.toml"), SMALL.replace("runs = 3000", "runs = 2")).unwrap();
    assert_eq!(code(&ldplab(&["simulate", "--config", "tiny.toml", "--out", "t"], d.path())), 0);
    assert_eq!(code(&ldplab(&["tail", "--results", "t"], d.path())), 0);
    assert_eq!(code(&ldplab(&["fit", "--tail", "t/tail.csv"], d.path())), 4);
}

#[test]
fn divergence_exits_5() {
    let d = setup();
    // heavy Gaussian noise with a constant step far above 1/L escapes to infinity
    let cfg = SMALL
        .replace("kind = \"sphere\"\nradius = 1.0", "kind = \"gaussian\"\nstd_dev = 1e6")
        .replace("{ kind = \"sgd-sqrt\", a = 1.0 }", "{ kind = \"constant\", c = 1e6 }")
        .replace("runs = 3000", "runs = 20");
    fs::write(d.path().join("div.toml"), cfg).unwrap();
    let o = ldplab(&["simulate", "--config", "div.toml", "--out", "v"], d.path());
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(d.path().join("v/manifest.toml")).unwrap();
    assert!(manifest.contains("diverged_count = 20"));
}

#[test]
fn verify_writes_table() {
    let d = setup();
    let o = ldplab(&["verify", "appendix-f-enum", "--out", "v"], d.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(d.path().join("v/verify.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("appendix-f-enum,")).count(), 20);
}
