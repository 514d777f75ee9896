use std::path::Path;
use std::process::{Command, Output};

use spgan::dataset::load_cloud;
use spgan::training::load_checkpoint;

fn spgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spgan"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("SPGAN_DEVICE")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = spgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sppc_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "sppc"))
        .count()
}

#[test]
fn toy_data_train_generate_evaluate_retrieve() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    let run = tmp.path().join("run");
    let gen = tmp.path().join("gen");

    ok(&["toy-data", "--out", p(&data), "--count", "4", "--n", "64", "--seed", "3"]);
    assert_eq!(sppc_count(&data), 4);

    ok(&[
        "train", "--data", p(&data), "--out", p(&run), "--preset", "desk", "--n", "64", "--latent-dim", "8",
        "--k", "6", "--batch-size", "2", "--max-iterations", "6", "--checkpoint-every", "3",
    ]);
    for f in ["checkpoint.spck", "losses.csv", "manifest.txt", "ckpt-0000003.spck", "ckpt-0000006.spck"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 7);
    let ckpt = load_checkpoint(&run.join("checkpoint.spck")).unwrap();
    assert_eq!((ckpt.n_points(), ckpt.latent_dim(), ckpt.iteration), (64, 8, 6));

    ok(&["generate", "--ckpt", p(&run), "--count", "3", "--seed", "7", "--out", p(&gen)]);
    assert_eq!(sppc_count(&gen), 3);
    let cloud = load_cloud(&gen.join("gen-00000.sppc")).unwrap();
    assert_eq!(cloud.len(), 64);
    assert!(cloud.points().iter().all(|v| (-1.0..=1.0).contains(v)));

    let interp = tmp.path().join("interp");
    ok(&[
        "interpolate", "--ckpt", p(&run), "--seed-a", "1", "--seed-b", "2", "--steps", "3", "--indices", "0-31",
        "--out", p(&interp),
    ]);
    assert_eq!(sppc_count(&interp), 3);

    let report = tmp.path().join("report.json");
    let table = tmp.path().join("table.csv");
    ok(&[
        "evaluate", "--gen", p(&gen), "--ref", p(&data), "--out", p(&report), "--table", p(&table),
    ]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["gen_size"], 3);
    assert_eq!(json["ref_size"], 4);
    for key in ["mmd", "cov", "fpd"] {
        assert!(json[key].is_number(), "{key} missing in {json}");
    }
    let cov = json["cov"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));
    ok(&["evaluate", "--gen", p(&gen), "--ref", p(&data), "--metrics", "mmd", "--table", p(&table)]);
    let rows: Vec<String> = std::fs::read_to_string(&table).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("gen_size,"));

    let out = ok(&["retrieve", "--query", p(&gen.join("gen-00001.sppc")), "--repo", p(&data), "--k", "2"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let cols: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(cols[0], "gen-00001");
    assert_eq!(cols[1], "1");
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    let out = spgan(&["generate"]);
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.spck");
    let out = spgan(&["generate", "--ckpt", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(err["error"]["code"].is_string());

    let out = Command::new(env!("CARGO_BIN_EXE_spgan"))
        .args(["toy-data", "--out", p(&tmp.path().join("t"))])
        .env("SPGAN_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["code"], "invalid_argument");

    assert_eq!(spgan(&["--help"]).status.code(), Some(0));
}
