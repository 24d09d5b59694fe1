use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn irflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = irflow(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    irflow(dir, args).status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) {
    fs::write(dir.join(name), serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

fn denoise_config() -> Value {
    json!({
        "task": "denoise",
        "seed": 5,
        "data": { "count": 3, "size": 24, "sigma": 25, "patch": 8, "stride": 8, "restore_stride": 8 },
        "model": { "hidden": [16], "time_features": 4 },
        "train": { "iterations": 20, "batch_size": 4, "log_interval": 10 },
        "sampler": { "steps": 1 }
    })
}

fn toy_config() -> Value {
    json!({
        "task": "toy2d",
        "seed": 2,
        "data": { "count": 256 },
        "model": { "hidden": [32, 32], "time_features": 8 },
        "train": { "iterations": 300, "batch_size": 64, "learning_rate": 0.003, "log_interval": 100 },
        "sampler": { "steps": 20, "samples": 128 }
    })
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

fn loss_rows(dir: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(dir.join("out/loss.log"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gen_data_writes_pairs_and_manifest_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = denoise_config();
    cfg["data"]["count"] = json!(8);
    write_config(tmp.path(), "run.json", &cfg);
    ok(tmp.path(), &["gen-data", "--config", "run.json", "--sigma", "15"]);
    let corpus = tmp.path().join("corpus");
    let mut names: Vec<String> = fs::read_dir(&corpus)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 17);
    assert_eq!(names.iter().filter(|n| n.ends_with(".pgm")).count(), 16);
    assert!(names.contains(&"clean_0007.pgm".to_string()) && names.contains(&"degraded_0000.pgm".to_string()));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(corpus.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["degradation"]["sigma"], json!(15.0));
    assert_eq!(manifest["images"].as_array().unwrap().len(), 8);

    let snapshot: Vec<Vec<u8>> = names.iter().map(|n| fs::read(corpus.join(n)).unwrap()).collect();
    ok(tmp.path(), &["gen-data", "--config", "run.json", "--sigma", "15"]);
    let again: Vec<Vec<u8>> = names.iter().map(|n| fs::read(corpus.join(n)).unwrap()).collect();
    assert_eq!(snapshot, again);
}

#[test]
fn denoise_workflow() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "run.json", &denoise_config());
    ok(dir, &["gen-data", "--config", "run.json"]);

    ok(dir, &["train", "--config", "run.json", "--lambda-mct", "0"]);
    let rows = loss_rows(dir);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.len() == 5 && r[2] == 0.0 && r[1] == r[3]));
    assert_eq!(rows[1][0], 20.0);

    ok(dir, &["train", "--config", "run.json"]);
    assert!(loss_rows(dir).iter().all(|r| r[2] > 0.0));

    for steps in ["1", "2"] {
        let stdout = ok(dir, &["restore", "--config", "run.json", "--steps", steps]);
        let r = report(dir);
        assert_eq!(r["nfe"], json!(steps.parse::<u64>().unwrap()));
        assert_eq!(r["per_image"].as_array().unwrap().len(), 3);
        assert_eq!(serde_json::from_str::<Value>(&stdout).unwrap(), r);
    }
    let first = fs::read(dir.join("out/restored_0001.pgm")).unwrap();
    ok(dir, &["restore", "--config", "run.json", "--steps", "2"]);
    assert_eq!(fs::read(dir.join("out/restored_0001.pgm")).unwrap(), first);

    let scored: Value = serde_json::from_str(&ok(dir, &["eval", "--config", "run.json", "--steps", "2"])).unwrap();
    assert_eq!(scored["psnr_db"], report(dir)["psnr_db"]);
    let base: Value = serde_json::from_str(&ok(dir, &["eval", "--config", "run.json", "--baseline"])).unwrap();
    assert!(base["psnr_db"].as_f64().unwrap() > 10.0);

    let energy = ok(dir, &["energy", "--config", "run.json"]);
    assert!(energy.contains("ratio: 0.333333"), "{energy}");
}

#[test]
fn resume_appends_to_the_log() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "run.json", &denoise_config());
    ok(dir, &["gen-data", "--config", "run.json"]);
    ok(dir, &["train", "--config", "run.json"]);
    let mut cfg = denoise_config();
    cfg["train"]["iterations"] = json!(40);
    write_config(dir, "longer.json", &cfg);
    ok(dir, &["train", "--config", "longer.json", "--resume"]);
    let iters: Vec<f64> = loss_rows(dir).iter().map(|r| r[0]).collect();
    assert_eq!(iters, vec![10.0, 20.0, 30.0, 40.0]);
}

#[test]
fn standard_mode_trains_and_restores() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "run.json", &denoise_config());
    ok(dir, &["gen-data", "--config", "run.json"]);
    ok(dir, &["train", "--config", "run.json", "--mode", "standard"]);
    ok(dir, &["restore", "--config", "run.json", "--steps", "3"]);
    assert_eq!(report(dir)["nfe"], json!(3));
    assert_eq!(
        code(
            dir,
            &["train", "--config", "run.json", "--resume", "--mode", "cumulative"]
        ),
        1
    );
}

#[test]
fn toy_sampling_beats_an_untrained_model() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "toy.json", &toy_config());
    ok(dir, &["gen-data", "--config", "toy.json"]);
    let mut untrained = toy_config();
    untrained["train"]["iterations"] = json!(1);
    write_config(dir, "untrained.json", &untrained);

    let score = |cfg: &str| -> f64 {
        ok(dir, &["train", "--config", cfg]);
        let out = ok(dir, &["sample2d", "--config", cfg, "--samples", "300"]);
        let rows = fs::read_to_string(dir.join("out/samples.csv")).unwrap().lines().count();
        assert_eq!(rows, 300);
        out.trim().strip_prefix("energy_distance: ").unwrap().parse().unwrap()
    };
    let before = score("untrained.json");
    let after = score("toy.json");
    assert!(after < before, "trained {after} vs untrained {before}");

    let csv = fs::read(dir.join("out/samples.csv")).unwrap();
    ok(dir, &["sample2d", "--config", "toy.json", "--samples", "300"]);
    assert_eq!(fs::read(dir.join("out/samples.csv")).unwrap(), csv);

    let energy = ok(dir, &["energy", "--config", "toy.json"]);
    assert!(energy.contains("ratio: 0.333333"));
}

#[test]
fn noise_free_corpus_has_zero_energy() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "run.json", &denoise_config());
    ok(dir, &["gen-data", "--config", "run.json", "--sigma", "0"]);
    let energy = ok(dir, &["energy", "--config", "run.json"]);
    assert!(
        energy.starts_with("standard_energy: 0\ncumulative_energy: 0\n"),
        "{energy}"
    );
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "run.json", &denoise_config());

    assert_eq!(code(dir, &["--help"]), 0);
    assert_eq!(code(dir, &["frobnicate"]), 1);
    assert_eq!(code(dir, &["train", "--config", "run.json", "--bogus"]), 1);
    assert_eq!(code(dir, &["train", "--config", "missing.json"]), 2);
    // corpus not generated yet
    assert_eq!(code(dir, &["train", "--config", "run.json"]), 2);

    let mut unknown = denoise_config();
    unknown["train"]["learning_rat"] = json!(0.1);
    write_config(dir, "typo.json", &unknown);
    assert_eq!(code(dir, &["gen-data", "--config", "typo.json"]), 1);

    ok(dir, &["gen-data", "--config", "run.json"]);
    let mut wild = denoise_config();
    wild["train"]["learning_rate"] = json!(1e120);
    wild["train"]["lr_halving_interval"] = Value::Null;
    write_config(dir, "wild.json", &wild);
    assert_eq!(code(dir, &["train", "--config", "wild.json"]), 3);

    ok(dir, &["train", "--config", "run.json"]);
    let mut wider = denoise_config();
    wider["model"]["hidden"] = json!([32]);
    write_config(dir, "wider.json", &wider);
    assert_eq!(code(dir, &["restore", "--config", "wider.json"]), 4);

    let bytes = fs::read(dir.join("model.irfw")).unwrap();
    fs::write(dir.join("model.irfw"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(dir, &["restore", "--config", "run.json"]), 4);
}
