use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
r0_grid = [25.0, 50.0]
t0_grid = [90.0]
n_lags = 3

[rtl]
min_mag = 3.0

[sampling]
kind = "at_events"
min_mag = 3.5

[synth]
duration_days = 1500.0
background_rate = 3.0

[synth.region]
lat_min = -1.0
lat_max = 1.0
lon_min = -1.0
lon_max = 1.0

[synth.precursors]
mean_count = 20.0
sigma_km = 10.0

[[models]]
kind = "major_rtl"

[[models]]
kind = "gradient_boosting"
n_trees = 20
"#;

fn rtl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtl")).current_dir(dir).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn synth_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let read = |out: &str, seed: &str| {
        let o = rtl(dir.path(), &["synth", "--config", &cfg, "--seed", seed, "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join(out).join("catalog.csv")).unwrap()
    };
    let a = read("a", "5");
    assert!(a.starts_with("time,lat,lon,depth,mag\n"));
    assert_eq!(a, read("b", "5"));
    assert_ne!(a, read("c", "6"));
}

#[test]
fn zero_rate_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.toml", "[synth]\nbackground_rate = 0.0\n");
    let o = rtl(dir.path(), &["synth", "--config", &cfg, "--out", "o"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("o/catalog.csv")).unwrap(), "time,lat,lon,depth,mag\n");
}

#[test]
fn train_eval_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = rtl(dir.path(), &["train-eval", "--config", &cfg, "--out", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("config,model,precision,recall,f1,roc_auc,pr_auc"));
    assert_eq!(report.lines().count(), 1 + 2 * 2);
    for f in ["audit.csv", "magnitude_histogram.csv", "rtl_histogram.csv", "models/r50_t90__gradient_boosting.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let table = rtl(dir.path(), &["report", "--out", "run"]);
    assert!(table.status.success());
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.starts_with("r0 (km)"));
    assert!(text.contains("Gradient Boosting") && text.contains("Major_RTL"));
}

#[test]
fn features_command_writes_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        &format!("{SMALL}\n[features]\nmode = \"single\"\nr0_km = 50.0\nt0_days = 90.0\n"),
    );
    let o = rtl(dir.path(), &["features", "--config", &cfg, "--out", "f"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("f/features.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("rtl_r50_t90_lag00") && header.contains("rtl_r50_t90_lag02"));
    assert!(!header.contains("rtl_r25"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rtl(dir.path(), &["synth"]).status.code(), Some(2));

    let bad = write_config(dir.path(), "bad.toml", "no_such_key = 1\n[synth]\n");
    assert_eq!(rtl(dir.path(), &["synth", "--config", &bad]).status.code(), Some(2));

    assert_eq!(rtl(dir.path(), &["report", "missing.csv"]).status.code(), Some(2));

    let garbled = write_config(
        dir.path(),
        "garbled.csv",
        "config,model,precision,recall,f1,roc_auc,pr_auc\nr50_t90,logreg,x,y\n",
    );
    assert_eq!(rtl(dir.path(), &["report", &garbled]).status.code(), Some(3));

    // large events are too rare for any positive label
    let quiet = write_config(
        dir.path(),
        "quiet.toml",
        "r0_grid = [50.0]\nt0_grid = [90.0]\nn_lags = 2\n[rtl]\nmin_mag = 3.0\n[synth]\nduration_days = 800.0\n\
         background_rate = 2.0\n[synth.gr]\na = 5.0\nb = 3.0\nm_min = 3.0\n[[models]]\nkind = \"logreg\"\n",
    );
    let o = rtl(dir.path(), &["train-eval", "--config", &quiet, "--out", "q"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(dir.path().join("q/report.csv")).unwrap().contains("r50_t90,error,"));
}
