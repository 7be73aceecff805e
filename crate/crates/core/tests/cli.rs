use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_binloc");

fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 5,
        "grid": { "azimuth": [-30.0, 30.0], "elevation": [-12.0, 12.0], "spacing": 6.0, "duration_secs": 0.15 },
        "train": { "n_components": 4, "max_iter": 30 },
        "ladder": [1, 2, 4],
        "vessl": { "n_sources": 2, "max_iter": 8 },
        "posterior_step": 10.0
    });
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn binloc(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("BINLOC_SEED")
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

/// Runs the full pipeline into `out`.
fn pipeline(config: &Path, out: &Path) {
    let s = |p: &str| out.join(p).to_str().unwrap().to_string();
    ok(binloc(config, out, &["simulate", "--source", "-20,0", "--source", "20,6", "--duration", "0.5"]));
    ok(binloc(config, out, &["grid"]));
    ok(binloc(config, out, &["train", &s("trainset.bin"), "--ladder"]));
    ok(binloc(config, out, &["extract", &s("mixture.wav")]));
    ok(binloc(config, out, &["localize", &s("observations.bin"), "--model", &s("model_k4.bin")]));
    let models = [s("model_k1.bin"), s("model_k2.bin"), s("model_k4.bin")];
    let mut args = vec!["separate".to_string(), s("mixture.wav"), "--models".into()];
    args.extend(models);
    ok(binloc(config, out, &args.iter().map(String::as_str).collect::<Vec<_>>()));
    ok(binloc(config, out, &["embed", &s("trainset.bin"), "--k", "8"]));
    ok(binloc(config, out, &["eval", "--results", out.to_str().unwrap(), "--truth", &s("truth.json")]));
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.json" && p.file_name().unwrap() != "config.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn pipeline_produces_every_artifact_and_repeats_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(a.path());
    pipeline(&cfg, a.path());
    pipeline(&cfg, b.path());
    let (oa, ob) = (outputs(a.path()), outputs(b.path()));
    for name in [
        "mixture.wav",
        "image_0.wav",
        "truth.json",
        "truth.bin",
        "trainset.bin",
        "model_k1.bin",
        "model_k4.bin",
        "train_report.json",
        "observations.bin",
        "localization.json",
        "posterior.tsv",
        "source_0.wav",
        "source_1.wav",
        "masks.bin",
        "posterior_1.tsv",
        "report.json",
        "embedding.tsv",
        "metrics.tsv",
        "metrics.json",
    ] {
        assert!(oa.contains_key(name), "{name} missing");
    }
    assert_eq!(oa.keys().collect::<Vec<_>>(), ob.keys().collect::<Vec<_>>());
    for (name, bytes) in &oa {
        assert!(bytes == &ob[name], "{name} differs between identical runs");
    }
    assert!(a.path().join("timings.json").exists());

    let report: serde_json::Value = serde_json::from_slice(&oa["report.json"]).unwrap();
    assert_eq!(report["directions"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["seed"], 5);
    let metrics = String::from_utf8(oa["metrics.tsv"].clone()).unwrap();
    assert!(metrics.starts_with("trial\taz_err\tel_err\tsdr_db"), "{metrics}");
}

#[test]
fn seed_flag_changes_the_simulation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let (x, y) = (d.path().join("x"), d.path().join("y"));
    ok(binloc(&cfg, &x, &["simulate", "--duration", "0.2"]));
    ok(binloc(&cfg, &y, &["--seed", "6", "simulate", "--duration", "0.2"]));
    assert_ne!(std::fs::read(x.join("mixture.wav")).unwrap(), std::fs::read(y.join("mixture.wav")).unwrap());
}

#[test]
fn mismatched_cue_layout_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    ok(binloc(&cfg, d.path(), &["grid"]));
    let mut other: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    other["features"] = serde_json::json!({ "power_threshold_db": -40.0, "band": { "ild_bins": [1, 512], "ipd_bins": [20, 100] } });
    let other_path = d.path().join("other.json");
    std::fs::write(&other_path, other.to_string()).unwrap();
    let trainset = d.path().join("trainset.bin");
    let o = binloc(&other_path, d.path(), &["train", trainset.to_str().unwrap(), "--k", "2"]);
    assert_eq!(o.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[fingerprint_mismatch]"));
}

#[test]
fn failures_exit_with_their_category_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeed": 1}"#).unwrap();
    let o = binloc(&bad, d.path(), &["grid"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));

    let o = binloc(&cfg, d.path(), &["extract", d.path().join("missing.wav").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let junk = d.path().join("junk.bin");
    std::fs::write(&junk, b"not a container").unwrap();
    let o = binloc(&cfg, d.path(), &["train", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));

    let o = binloc(&cfg, d.path(), &["simulate", "--source", "170,0"]);
    assert_eq!(o.status.code(), Some(3));

    let o = binloc(&cfg, d.path(), &["nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert!(o.status.success());
}
