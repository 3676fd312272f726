//! Every document the tool writes validates against the schema shipped in `schemas/`.

mod common;

use std::path::Path;

use common::{mvfnet, workspace_path};
use jsonschema::{Resource, Validator};
use mvfnet::io::ConfigDocument;
use serde_json::{json, Value};

const NAMES: [&str; 7] = ["config", "cost", "gradcheck", "equiv", "train", "eval", "history"];

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn schema(name: &str) -> Validator {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
    let mut opts = jsonschema::options();
    for other in NAMES {
        let doc = read_json(&dir.join(format!("{other}.schema.json")));
        let id = doc["$id"].as_str().unwrap().to_string();
        opts = opts.with_resource(id, Resource::from_contents(doc).unwrap());
    }
    opts.build(&read_json(&dir.join(format!("{name}.schema.json")))).unwrap()
}

fn assert_valid(name: &str, doc: &Value) {
    let v = schema(name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

fn stdout_json(args: &[&str]) -> Value {
    let out = mvfnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn configs() {
    assert_valid("config", &serde_json::to_value(ConfigDocument::default()).unwrap());
    for entry in std::fs::read_dir(workspace_path("configs")).unwrap() {
        let path = entry.unwrap().path();
        assert_valid("config", &read_json(&path));
        ConfigDocument::load(&path).unwrap();
    }
    let v = schema("config");
    for bad in [json!({"netwrok": {}}), json!({"mvf": {"alpha": 2.0}}), json!({"eval": {"crops": "five"}})] {
        assert!(!v.is_valid(&bad), "{bad}");
        assert!(ConfigDocument::from_json(&bad.to_string()).is_err(), "{bad}");
    }
}

#[test]
fn cost_reports() {
    assert_valid("cost", &stdout_json(&["cost", "--json"]));
    assert_valid("cost", &stdout_json(&["cost", "--backbone", "mobilenet_v2", "--frames", "4", "--crops", "3", "--clips", "10", "--json"]));
    assert_valid("cost", &stdout_json(&["cost", "--backbone", "tiny", "--alpha", "0.5", "--stages", "res2,res3", "--classes", "8", "--json"]));
}

#[test]
fn verification_reports() {
    assert_valid("gradcheck", &stdout_json(&["gradcheck", "--target", "mvf", "--json"]));
    assert_valid("equiv", &stdout_json(&["equiv", "--trials", "3", "--json"]));
}

#[test]
fn training_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let config = workspace_path("configs/smoke.json");
    let printed = stdout_json(&["train", &config, "--out", &out, "--json", "--quiet"]);
    assert_valid("train", &printed);
    assert_eq!(read_json(&dir.path().join("report.json")), printed);
    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    for line in history.lines() {
        assert_valid("history", &serde_json::from_str(line).unwrap());
    }
    let eval = stdout_json(&["eval", &config, &format!("{out}/weights.mvfw"), "--json"]);
    assert_valid("eval", &eval);
    assert_eq!(eval["weights_sha256"], printed["weights_sha256"]);
}
