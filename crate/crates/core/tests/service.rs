use std::sync::Mutex;

use serde_json::Value;
use spgan::dataset::{decode_cloud, make_toy_repository, ToyFamily};
use spgan::service::http::handle;
use spgan::service::SessionManager;
use spgan::training::{Checkpoint, Trainer, TrainingConfig};

fn checkpoint() -> Checkpoint {
    let repo = make_toy_repository(&ToyFamily::ALL, 4, 64, 1).unwrap();
    let cfg = TrainingConfig {
        n_points: 64,
        latent_dim: 8,
        k: 6,
        batch_size: 2,
        ..TrainingConfig::desk()
    };
    let mut t = Trainer::new(cfg, &repo.clouds()).unwrap();
    for _ in 0..4 {
        t.step().unwrap();
    }
    t.checkpoint()
}

fn manager(ckpt: &Checkpoint) -> Mutex<SessionManager> {
    let mut m = SessionManager::new(42);
    m.add_checkpoint("toy", ckpt).unwrap();
    Mutex::new(m)
}

fn call(m: &Mutex<SessionManager>, method: &str, path: &str, body: &str) -> (u16, Value) {
    let r = handle(m, method, path, body.as_bytes());
    (r.status, r.json_body())
}

/// One editing session; returns every response body.
fn script(m: &Mutex<SessionManager>) -> Vec<Value> {
    let mut out = Vec::new();
    let (status, created) = call(m, "POST", "/sessions", r#"{"checkpoint":"toy"}"#);
    assert_eq!(status, 201);
    let a = created["id"].as_str().unwrap().to_string();
    let (_, other) = call(m, "POST", "/sessions", r#"{"checkpoint":"toy","seed":5}"#);
    let b = other["id"].as_str().unwrap().to_string();
    out.push(created);
    let steps = [
        ("select", r#"{"version":0,"indices":[0,1,2,3,4,5,6,7]}"#.to_string()),
        ("edit", r#"{"version":1,"seed":9}"#.to_string()),
        ("edit", r#"{"version":2,"seed":3,"mode":"per_point","indices":[10,11]}"#.to_string()),
        ("interpolate", format!(r#"{{"version":3,"target":{{"session":"{b}"}},"indices":[20,21,22],"alpha":0.5}}"#)),
        ("compose", format!(r#"{{"version":4,"sources":[{{"indices":[0,1]}},{{"from":{{"session":"{b}"}},"indices":[30,31]}}]}}"#)),
    ];
    for (op, body) in steps {
        let (status, v) = call(m, "POST", &format!("/sessions/{a}/{op}"), &body);
        assert_eq!(status, 200, "{op}: {v}");
        out.push(v);
    }
    out.push(call(m, "GET", &format!("/sessions/{a}"), "").1);
    out
}

#[test]
fn identical_request_sequences_give_identical_responses() {
    let ckpt = checkpoint();
    let first = script(&manager(&ckpt));
    let second = script(&manager(&ckpt));
    assert_eq!(first, second);
    let versions: Vec<u64> = first[1..6].iter().map(|v| v["version"].as_u64().unwrap()).collect();
    assert_eq!(versions, vec![1, 2, 3, 4, 5]);
    assert_eq!(first[6]["version"], 5);
}

#[test]
fn payload_and_export_agree() {
    let ckpt = checkpoint();
    let m = manager(&ckpt);
    let (_, created) = call(&m, "POST", "/sessions", r#"{"checkpoint":"toy"}"#);
    let id = created["id"].as_str().unwrap();
    let (_, payload) = call(&m, "GET", &format!("/sessions/{id}/generate"), "");
    let export = handle(&m, "GET", &format!("/sessions/{id}/export"), b"");
    assert_eq!(export.status, 200);
    let cloud = decode_cloud(&export.body).unwrap();
    let points: Vec<f64> = payload["points"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(points.len(), cloud.len() * 3);
    for (a, b) in points.iter().zip(cloud.points().iter()) {
        assert_eq!(*a as f32, *b);
    }
    assert_eq!(payload["n"], 64);
}

#[test]
fn failures_leave_the_session_untouched() {
    let ckpt = checkpoint();
    let m = manager(&ckpt);
    let (_, created) = call(&m, "POST", "/sessions", r#"{"checkpoint":"toy"}"#);
    let id = created["id"].as_str().unwrap();
    let (_, before) = call(&m, "GET", &format!("/sessions/{id}/generate"), "");
    for (op, body, status) in [
        ("select", r#"{"indices":[999]}"#, 400),
        ("edit", r#"{"version":7,"seed":1}"#, 409),
        ("interpolate", r#"{"target":{"state":"nope"},"alpha":0.5}"#, 404),
        ("compose", r#"{"sources":[{"indices":[1]},{"indices":[1]}]}"#, 409),
    ] {
        let (s, v) = call(&m, "POST", &format!("/sessions/{id}/{op}"), body);
        assert_eq!(s, status, "{op}: {v}");
    }
    let (_, after) = call(&m, "GET", &format!("/sessions/{id}/generate"), "");
    assert_eq!(before, after);
}
