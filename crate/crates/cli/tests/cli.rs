use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semsegdepth::config::RunConfig;
use semsegdepth::data::{load_dataset, DatasetSplit};
use semsegdepth::harness::{read_log, MetricsReport};
use semsegdepth::zoo::{DepthSupervision, VariantName};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semsegdepth"));
    c.env_remove("SEMSEGDEPTH_DATA_ROOT").env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error record");
    serde_json::from_str(line).unwrap()
}

/// Micro model, small toy dataset under `dir/data`, short training.
fn write_config(dir: &Path, steps: usize) -> PathBuf {
    let mut cfg = RunConfig::micro();
    cfg.out_dir = dir.join("runs");
    cfg.data.root = Some(dir.join("data"));
    cfg.data.toy.n_samples = 6;
    cfg.data.toy.height = 32;
    cfg.data.toy.width = 32;
    cfg.data.sparsify.n_points = 60;
    cfg.optim.steps = steps;
    cfg.loss.weights.depth = 1e-6;
    cfg.loss.depth_supervision = DepthSupervision::Dense;
    let path = dir.join("run.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generate_data_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run(bin()
            .args(["generate-data", "--n", "20", "--seed", "1", "--height", "32", "--width", "48", "--out"])
            .arg(tmp.path().join(name)));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = tree(&tmp.path().join("a"));
    assert!(a.len() > 20 * 4);
    assert_eq!(a, tree(&tmp.path().join("b")));
}

#[test]
fn generated_sparse_maps_respect_the_point_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("d");
    let out = run(bin()
        .args(["generate-data", "--n", "2", "--height", "100", "--width", "100", "--out"])
        .arg(&root));
    assert!(out.status.success());
    let ds = load_dataset(&root).unwrap();
    let ids: Vec<String> = [&ds.split.train, &ds.split.val, &ds.split.test].into_iter().flatten().cloned().collect();
    for s in ds.load_all(&ids).unwrap() {
        let sparse = s.sparse_depth.as_ref().unwrap();
        assert_eq!(sparse.count_nonzero(), 8000);
        s.validate(ds.nc(), 50_000.0).unwrap();
    }
}

#[test]
fn zero_samples_give_an_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("empty");
    let out = run(bin().args(["generate-data", "--n", "0", "--out"]).arg(&root));
    assert!(out.status.success());
    let split = DatasetSplit::parse(&fs::read_to_string(root.join("split.txt")).unwrap()).unwrap();
    assert_eq!(split, DatasetSplit::default());
    assert_eq!(fs::read_dir(root.join("rgb")).unwrap().count(), 0);
}

#[test]
fn data_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("from-env");
    let out = run(bin()
        .args(["generate-data", "--n", "2", "--height", "16", "--width", "16"])
        .current_dir(tmp.path())
        .env("SEMSEGDEPTH_DATA_ROOT", &root));
    assert!(out.status.success());
    assert!(root.join("split.txt").exists());
}

#[test]
fn oracle_stub_scores_perfectly_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 1);
    assert!(run(bin().args(["generate-data", "--config"]).arg(&cfg)).status.success());
    let out_dir = tmp.path().join("stub");
    let out = run(bin()
        .args(["evaluate", "--oracle-stub", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("1.0000") && stdout.contains("0.0"), "{stdout}");

    let text = fs::read_to_string(out_dir.join("metrics.json")).unwrap();
    let report: MetricsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.miou, Some(1.0));
    assert_eq!(report.rmse_mm, Some(0.0));
    let again: MetricsReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(again, report);
    assert!(out_dir.join("config.toml").exists());
}

#[test]
fn misspelled_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[optim]\nlrr = 0.1\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let rec = stderr_record(&out);
    assert_eq!(rec["error"], "config");
    assert_eq!(rec["key"], "optim.lrr");
}

#[test]
fn unknown_variant_is_a_config_error() {
    let out = run(bin().args(["train", "--variant", "SemSegNet_z"]));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["error"], "unknown_variant");
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 1);
    assert!(run(bin().args(["generate-data", "--config"]).arg(&cfg)).status.success());
    let out = run(bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(tmp.path().join("nothing.bin")));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"], "missing_checkpoint");
}

#[test]
fn exploding_learning_rate_exits_with_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), 40);
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.optim.lr = 1e12;
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    assert!(run(bin().args(["generate-data", "--config"]).arg(&cfg_path)).status.success());
    let out = run(bin().args(["train", "--config"]).arg(&cfg_path));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = stderr_record(&out);
    assert_eq!(rec["error"], "divergence");
    assert!(rec["step"].is_u64());
}

#[test]
fn train_is_replayable_from_its_frozen_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 6);
    assert!(run(bin().args(["generate-data", "--config"]).arg(&cfg)).status.success());
    let first = tmp.path().join("first");
    let out = run(bin().args(["train", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&first));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "log.jsonl", "checkpoint.bin", "last.bin", "loss.svg", "metrics.json"] {
        assert!(first.join(f).exists(), "{f} missing");
    }
    let frozen = RunConfig::load(&first.join("config.toml")).unwrap();
    assert_eq!(frozen.seed, 3);
    assert_eq!(frozen.variant, VariantName::SemSegDepth);
    assert_eq!(read_log(&fs::read_to_string(first.join("log.jsonl")).unwrap()).unwrap().len(), 6);

    let second = tmp.path().join("second");
    let out = run(bin()
        .args(["train", "--config"])
        .arg(first.join("config.toml"))
        .arg("--out")
        .arg(&second));
    assert!(out.status.success());
    for f in ["config.toml", "log.jsonl", "checkpoint.bin", "metrics.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }

    // The checkpoint's own directory supplies the config.
    let eval_dir = tmp.path().join("eval");
    let out = run(bin()
        .args(["evaluate", "--checkpoint"])
        .arg(first.join("checkpoint.bin"))
        .arg("--out")
        .arg(&eval_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(first.join("metrics.json")).unwrap(),
        fs::read(eval_dir.join("metrics.json")).unwrap()
    );
}

#[test]
fn ablate_and_report_render_reference_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 2);
    assert!(run(bin().args(["generate-data", "--config"]).arg(&cfg)).status.success());
    let abl = tmp.path().join("abl");
    let out = run(bin()
        .args(["ablate", "--variant", "DepthNet_b", "--variant", "SemSegNet_b", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&abl));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(abl.join("ablation.txt")).unwrap();
    assert!(table.contains("0.5200"), "{table}");
    assert!(table.contains("580.2"), "{table}");
    assert!(table.find("SemSegNet_b").unwrap() < table.find("DepthNet_b").unwrap());
    assert!(table.contains("not expected to match"));

    let rep = tmp.path().join("rep");
    let out = run(bin().args(["report", "--out"]).arg(&rep).arg(&abl));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(rep.join("report.txt")).unwrap().contains("580.2"));
    assert!(fs::read_to_string(rep.join("loss_curves.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn report_on_a_missing_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin().args(["report", "--out"]).arg(tmp.path().join("r")).arg(tmp.path().join("none")));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"], "missing_file");
}
